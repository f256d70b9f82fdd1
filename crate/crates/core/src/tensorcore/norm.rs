use super::{Scalar, Tensor};
use crate::error::{PulseError, Result};

/// Row-wise softmax over the last axis, max-subtracted.
pub fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = a.last_dim();
    let mut out = Vec::with_capacity(a.len());
    let mut buf = vec![0.0f64; n];
    for r in 0..a.leading() {
        let row = a.row(r);
        let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (b, v) in buf.iter_mut().zip(row) {
            *b = (v.to_f64() - max).exp();
            sum += *b;
        }
        out.extend(buf.iter().map(|&b| T::from_f64(b / sum)));
    }
    Tensor::new(a.shape().to_vec(), out).expect("shape preserved")
}

/// Gradient of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut out = Vec::with_capacity(y.len());
    for r in 0..y.leading() {
        let (yr, gr) = (y.row(r), grad_out.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        out.extend(
            yr.iter()
                .zip(gr)
                .map(|(a, b)| T::from_f64(a.to_f64() * (b.to_f64() - dot))),
        );
    }
    Tensor::new(y.shape().to_vec(), out).expect("shape preserved")
}

/// Per-row statistics kept by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    /// Normalized input before gain/shift, row-major like the input.
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache)> {
    let f = input.last_dim();
    if gain.len() != f {
        return Err(PulseError::dim("layer_norm", "gain length", f, gain.len()));
    }
    if shift.len() != f {
        return Err(PulseError::dim("layer_norm", "shift length", f, shift.len()));
    }
    let rows = input.leading();
    let mut normalized = Vec::with_capacity(input.len());
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(input.len());
    for r in 0..rows {
        let row = input.row(r);
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / f as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for (j, v) in row.iter().enumerate() {
            let xh = (v.to_f64() - mean) * is;
            normalized.push(xh);
            out.push(T::from_f64(xh * gain.data()[j].to_f64() + shift.data()[j].to_f64()));
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        LayerNormCache { normalized, inv_std },
    ))
}

/// Gradients of [`layer_norm`]: `(d_input, d_gain, d_shift)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache,
    gain: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let f = gain.len();
    let rows = grad_out.leading();
    let mut dx = Vec::with_capacity(grad_out.len());
    let mut dg = vec![0.0f64; f];
    let mut ds = vec![0.0f64; f];
    let mut dxh = vec![0.0f64; f];
    for r in 0..rows {
        let gr = grad_out.row(r);
        let xh = &cache.normalized[r * f..(r + 1) * f];
        for j in 0..f {
            let g = gr[j].to_f64();
            dg[j] += g * xh[j];
            ds[j] += g;
            dxh[j] = g * gain.data()[j].to_f64();
        }
        let mean_d = dxh.iter().sum::<f64>() / f as f64;
        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / f as f64;
        let is = cache.inv_std[r];
        dx.extend((0..f).map(|j| T::from_f64(is * (dxh[j] - mean_d - xh[j] * mean_dx))));
    }
    let narrow = |v: Vec<f64>| Tensor::new(vec![f], v.into_iter().map(T::from_f64).collect()).expect("len f");
    (
        Tensor::new(grad_out.shape().to_vec(), dx).expect("shape preserved"),
        narrow(dg),
        narrow(ds),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row() {
        let y = softmax_rows(&Tensor::<f32>::zeros(&[1, 3]));
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let y = softmax_rows(&Tensor::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap());
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!(y.data()[1].abs() < 1e-6);
    }

    #[test]
    fn layer_norm_two_values() {
        let (y, _) = layer_norm(
            &Tensor::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap(),
            &Tensor::filled(&[2], 1.0),
            &Tensor::zeros(&[2]),
            1e-5,
        )
        .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-3);
        assert!((y.data()[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let (y, _) = layer_norm(
            &Tensor::filled(&[2, 4], 7.5f32),
            &Tensor::filled(&[4], 1.0),
            &Tensor::zeros(&[4]),
            1e-5,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_rejects_bad_gain() {
        let r = layer_norm(&Tensor::<f32>::zeros(&[2, 4]), &Tensor::zeros(&[3]), &Tensor::zeros(&[4]), 1e-5);
        assert!(r.is_err());
    }
}
