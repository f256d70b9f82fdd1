//! Dilated 1-D convolution over `[channels, time]` feature maps.
//!
//! Output sample `t` of channel `m` is
//! `bias[m] + sum_i sum_l x[l, t + (K-1)·d - d·i - padding] · W[m, l, i]`,
//! so tap `i = 0` reads the most recent input sample and larger taps reach
//! backward in time. Samples outside `[0, T)` read as zero. Stride is 1.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{PulseError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// Zero samples added at each temporal end.
    pub padding: usize,
}

impl ConvSpec {
    /// Spec with symmetric padding so that the output length equals the input
    /// length. Requires `(kernel_size - 1) * dilation` to be even.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            padding: 0,
        };
        spec.validate()?;
        let span = spec.receptive_field() - 1;
        if !span.is_multiple_of(2) {
            return Err(PulseError::Config(format!(
                "kernel {kernel_size} with dilation {dilation} has odd span {span}; same padding impossible"
            )));
        }
        Ok(ConvSpec {
            padding: span / 2,
            ..spec
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.dilation == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(PulseError::Config(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        (self.kernel_size - 1) * self.dilation + 1
    }

    pub fn out_len(&self, t: usize) -> Option<usize> {
        (t + 2 * self.padding).checked_sub(self.receptive_field()).map(|n| n + 1)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size + self.out_channels
    }

    fn check(&self, input: &Tensor<impl Scalar>, weights: &Tensor<impl Scalar>, bias: &Tensor<impl Scalar>) -> Result<usize> {
        const OP: &str = "conv1d_dilated";
        self.validate()?;
        input.expect_rank(OP, 2)?;
        weights.expect_rank(OP, 3)?;
        bias.expect_rank(OP, 1)?;
        if input.shape()[0] != self.in_channels {
            return Err(PulseError::dim(OP, "input channels", self.in_channels, input.shape()[0]));
        }
        let ws = weights.shape();
        if ws[0] != self.out_channels {
            return Err(PulseError::dim(OP, "weight output channels", self.out_channels, ws[0]));
        }
        if ws[1] != self.in_channels {
            return Err(PulseError::dim(OP, "weight input channels", self.in_channels, ws[1]));
        }
        if ws[2] != self.kernel_size {
            return Err(PulseError::dim(OP, "weight kernel taps", self.kernel_size, ws[2]));
        }
        if bias.shape()[0] != self.out_channels {
            return Err(PulseError::dim(OP, "bias length", self.out_channels, bias.shape()[0]));
        }
        self.out_len(input.shape()[1]).ok_or_else(|| {
            PulseError::dim(OP, "time (with padding)", self.receptive_field(), input.shape()[1] + 2 * self.padding)
        })
    }
}

/// Output samples computed per register-resident block.
const LANES: usize = 8;

/// Copies `[rows, t]` into an f64 buffer with `pad` zeros at both ends of
/// every row.
fn padded<T: Scalar>(v: &[T], rows: usize, t: usize, pad: usize) -> Vec<f64> {
    let w = t + 2 * pad;
    let mut out = vec![0.0; rows * w];
    for r in 0..rows {
        for (o, x) in out[r * w + pad..r * w + pad + t].iter_mut().zip(&v[r * t..(r + 1) * t]) {
            *o = x.to_f64();
        }
    }
    out
}

/// `out[j] += sum over taps of weight · src[j]`.
fn accumulate(out: &mut [f64], taps: &[(f64, &[f64])]) {
    let n = out.len();
    let mut j = 0;
    while j + LANES <= n {
        let mut acc = [0.0f64; LANES];
        acc.copy_from_slice(&out[j..j + LANES]);
        for &(w, src) in taps {
            let s = &src[j..j + LANES];
            for k in 0..LANES {
                acc[k] += w * s[k];
            }
        }
        out[j..j + LANES].copy_from_slice(&acc);
        j += LANES;
    }
    for (jj, o) in out.iter_mut().enumerate().skip(j) {
        for &(w, src) in taps {
            *o += w * src[jj];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..LANES {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub fn conv1d_dilated<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let t_out = spec.check(input, weights, bias)?;
    let t_in = input.shape()[1];
    let (c_in, k, d) = (spec.in_channels, spec.kernel_size, spec.dilation);
    let span = spec.receptive_field() - 1;
    let wp = t_in + 2 * spec.padding;
    let xp = padded(input.data(), c_in, t_in, spec.padding);
    let w = weights.data();

    let mut out = Vec::with_capacity(spec.out_channels * t_out);
    let mut row = vec![0.0f64; t_out];
    let mut taps = Vec::with_capacity(c_in * k);
    for m in 0..spec.out_channels {
        row.fill(bias.data()[m].to_f64());
        taps.clear();
        for l in 0..c_in {
            for i in 0..k {
                taps.push((w[(m * c_in + l) * k + i].to_f64(), &xp[l * wp + span - d * i..(l + 1) * wp]));
            }
        }
        accumulate(&mut row, &taps);
        out.extend(row.iter().map(|&a| T::from_f64(a)));
    }
    Tensor::new(vec![spec.out_channels, t_out], out)
}

/// Gradients of a dilated convolution: `(d_input, d_weights, d_bias)`.
pub fn conv1d_dilated_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias_shape = Tensor::<T>::zeros(&[spec.out_channels]);
    let t_out = spec.check(input, weights, &bias_shape)?;
    if grad_out.shape() != [spec.out_channels, t_out] {
        return Err(PulseError::dim("conv1d_dilated_backward", "grad time", t_out, grad_out.last_dim()));
    }
    let t_in = input.shape()[1];
    let (c_in, c_out, k, d, pad) = (spec.in_channels, spec.out_channels, spec.kernel_size, spec.dilation, spec.padding);
    let span = spec.receptive_field() - 1;
    let wp = t_in + 2 * pad;
    let xp = padded(input.data(), c_in, t_in, pad);
    // dy padded by the kernel span: dx[l, t] = sum w[m, l, i] · dyp[m, t + pad + d·i]
    let wdy = t_out + 2 * span;
    let dyp = padded(grad_out.data(), c_out, t_out, span);
    let w = weights.data();

    let mut dx = Vec::with_capacity(c_in * t_in);
    let mut row = vec![0.0f64; t_in];
    let mut taps = Vec::with_capacity(c_out * k);
    for l in 0..c_in {
        row.fill(0.0);
        taps.clear();
        for m in 0..c_out {
            for i in 0..k {
                taps.push((w[(m * c_in + l) * k + i].to_f64(), &dyp[m * wdy + pad + d * i..(m + 1) * wdy]));
            }
        }
        accumulate(&mut row, &taps);
        dx.extend(row.iter().map(|&a| T::from_f64(a)));
    }

    let mut dw = Vec::with_capacity(c_out * c_in * k);
    let mut db = Vec::with_capacity(c_out);
    for m in 0..c_out {
        let dym = &dyp[m * wdy + span..m * wdy + span + t_out];
        db.push(T::from_f64(dym.iter().sum()));
        for l in 0..c_in {
            for i in 0..k {
                let start = l * wp + span - d * i;
                dw.push(T::from_f64(dot(dym, &xp[start..start + t_out])));
            }
        }
    }
    Ok((
        Tensor::new(vec![c_in, t_in], dx)?,
        Tensor::new(vec![c_out, c_in, k], dw)?,
        Tensor::new(vec![c_out], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let spec = ConvSpec { in_channels: 1, out_channels: 1, kernel_size: 1, dilation: 1, padding: 0 };
        let y = conv1d_dilated(&t(&[1, 3], &[1., 2., 3.]), &t(&[1, 1, 1], &[1.]), &t(&[1], &[0.]), &spec).unwrap();
        assert_eq!(y.data(), &[1., 2., 3.]);
    }

    #[test]
    fn dilated_pair_reads_backward_in_time() {
        let spec = ConvSpec { in_channels: 1, out_channels: 1, kernel_size: 2, dilation: 2, padding: 0 };
        let y = conv1d_dilated(&t(&[1, 4], &[1., 2., 3., 4.]), &t(&[1, 1, 2], &[1., 1.]), &t(&[1], &[0.]), &spec).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[4., 6.]);
    }

    #[test]
    fn tap_zero_is_most_recent_sample() {
        // W = [1, 0]: y[t] = x[t + d]; W = [0, 1]: y[t] = x[t]
        let spec = ConvSpec { in_channels: 1, out_channels: 1, kernel_size: 2, dilation: 2, padding: 0 };
        let x = t(&[1, 4], &[1., 2., 3., 4.]);
        let y = conv1d_dilated(&x, &t(&[1, 1, 2], &[1., 0.]), &t(&[1], &[0.]), &spec).unwrap();
        assert_eq!(y.data(), &[3., 4.]);
    }

    #[test]
    fn same_padding_preserves_length() {
        let spec = ConvSpec::same(2, 3, 5, 2).unwrap();
        assert_eq!(spec.padding, 4);
        assert_eq!(spec.receptive_field(), 9);
        assert_eq!(spec.out_len(256), Some(256));
        assert!(ConvSpec::same(1, 1, 2, 1).is_err());
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let spec = ConvSpec { in_channels: 2, out_channels: 1, kernel_size: 3, dilation: 1, padding: 0 };
        let err = conv1d_dilated(&Tensor::<f32>::zeros(&[1, 8]), &Tensor::zeros(&[1, 2, 3]), &Tensor::zeros(&[1]), &spec)
            .unwrap_err()
            .to_string();
        assert!(err.contains("input channels"), "{err}");
        let err = conv1d_dilated(&Tensor::<f32>::zeros(&[2, 8]), &Tensor::zeros(&[1, 2, 2]), &Tensor::zeros(&[1]), &spec)
            .unwrap_err()
            .to_string();
        assert!(err.contains("kernel taps"), "{err}");
        let err = conv1d_dilated(&Tensor::<f32>::zeros(&[2, 2]), &Tensor::zeros(&[1, 2, 3]), &Tensor::zeros(&[1]), &spec)
            .unwrap_err()
            .to_string();
        assert!(err.contains("time"), "{err}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let specs = [(2, 3, 3, 2, 2), (1, 2, 5, 1, 0), (3, 2, 2, 3, 4), (2, 2, 3, 1, 1)];
        for (n, &(c_in, c_out, k, d, pad)) in specs.iter().enumerate() {
            let spec = ConvSpec { in_channels: c_in, out_channels: c_out, kernel_size: k, dilation: d, padding: pad };
            let t_in = 11;
            let f = |i: usize| ((i * 7 + n * 3) as f64 * 0.731).sin();
            let x = Tensor::<f64>::from_fn(&[c_in, t_in], f);
            let w = Tensor::<f64>::from_fn(&[c_out, c_in, k], |i| f(i + 100));
            let b = Tensor::<f64>::from_fn(&[c_out], |i| f(i + 200));
            let t_out = spec.out_len(t_in).unwrap();
            let g = Tensor::<f64>::from_fn(&[c_out, t_out], |i| f(i + 300));
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let y = conv1d_dilated(x, w, b, &spec).unwrap();
                y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
            };
            let (dx, dw, db) = conv1d_dilated_backward(&x, &w, &g, &spec).unwrap();
            let eps = 1e-6;
            let fd = |which: usize, j: usize| {
                let mut t = [x.clone(), w.clone(), b.clone()];
                t[which].data_mut()[j] += eps;
                let up = loss(&t[0], &t[1], &t[2]);
                t[which].data_mut()[j] -= 2.0 * eps;
                let down = loss(&t[0], &t[1], &t[2]);
                (up - down) / (2.0 * eps)
            };
            for (which, grad) in [dx, dw, db].iter().enumerate() {
                for j in 0..grad.len() {
                    assert!((grad.data()[j] - fd(which, j)).abs() < 1e-6, "case {n} tensor {which} elem {j}");
                }
            }
        }
    }
}
