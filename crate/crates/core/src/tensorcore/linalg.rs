use super::{Scalar, Tensor};
use crate::error::{PulseError, Result};

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    t.expect_rank(op, 2)?;
    Ok((t.shape()[0], t.shape()[1]))
}

fn narrow<T: Scalar>(shape: Vec<usize>, v: &[f64]) -> Result<Tensor<T>> {
    Tensor::new(shape, v.iter().map(|&x| T::from_f64(x)).collect())
}

/// `a[M,K] · b[K,N]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul", a)?;
    let (kb, n) = dims2("matmul", b)?;
    if k != kb {
        return Err(PulseError::dim("matmul", "inner dimension", k, kb));
    }
    let bw: Vec<f64> = b.data().iter().map(|v| v.to_f64()).collect();
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let acc = &mut out[i * n..(i + 1) * n];
        for (p, av) in a.row(i).iter().enumerate() {
            let av = av.to_f64();
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in acc.iter_mut().zip(&bw[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    narrow(vec![m, n], &out)
}

/// `a[M,K] · b[N,K]ᵀ`.
pub fn matmul_bt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul_bt", a)?;
    let (n, kb) = dims2("matmul_bt", b)?;
    if k != kb {
        return Err(PulseError::dim("matmul_bt", "inner dimension", k, kb));
    }
    let aw: Vec<f64> = a.data().iter().map(|v| v.to_f64()).collect();
    let bw: Vec<f64> = b.data().iter().map(|v| v.to_f64()).collect();
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let ar = &aw[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = ar.iter().zip(&bw[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    narrow(vec![m, n], &out)
}

/// `a[K,M]ᵀ · b[K,N]`.
pub fn matmul_at<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = dims2("matmul_at", a)?;
    let (kb, n) = dims2("matmul_at", b)?;
    if k != kb {
        return Err(PulseError::dim("matmul_at", "inner dimension", k, kb));
    }
    let bw: Vec<f64> = b.data().iter().map(|v| v.to_f64()).collect();
    let mut out = vec![0.0f64; m * n];
    for p in 0..k {
        let brow = &bw[p * n..(p + 1) * n];
        for (i, av) in a.row(p).iter().enumerate() {
            let av = av.to_f64();
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    narrow(vec![m, n], &out)
}

/// Affine map over the last axis: `input[.., F_in] · weights[F_in, F_out] + bias`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (f_in, f_out) = dims2("dense", weights)?;
    bias.expect_rank("dense", 1)?;
    if input.last_dim() != f_in {
        return Err(PulseError::dim("dense", "input features", f_in, input.last_dim()));
    }
    if bias.len() != f_out {
        return Err(PulseError::dim("dense", "bias length", f_out, bias.len()));
    }
    let rows = input.leading();
    let flat = Tensor::new(vec![rows, f_in], input.data().to_vec())?;
    let mut out = matmul(&flat, weights)?.into_data();
    for r in 0..rows {
        for (o, b) in out[r * f_out..(r + 1) * f_out].iter_mut().zip(bias.data()) {
            *o = T::from_f64(o.to_f64() + b.to_f64());
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = f_out;
    Tensor::new(shape, out)
}

/// Gradients of [`dense`]: `(d_input, d_weights, d_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (f_in, f_out) = dims2("dense_backward", weights)?;
    let rows = input.leading();
    if grad_out.last_dim() != f_out || grad_out.leading() != rows {
        return Err(PulseError::dim("dense_backward", "grad features", f_out, grad_out.last_dim()));
    }
    let x = Tensor::new(vec![rows, f_in], input.data().to_vec())?;
    let dy = Tensor::new(vec![rows, f_out], grad_out.data().to_vec())?;
    let dx = matmul_bt(&dy, weights)?.reshape(input.shape())?;
    let dw = matmul_at(&x, &dy)?;
    let mut db = vec![0.0f64; f_out];
    for r in 0..rows {
        for (d, g) in db.iter_mut().zip(dy.row(r)) {
            *d += g.to_f64();
        }
    }
    Ok((dx, dw, narrow(vec![f_out], &db)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let a = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5., 6.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17., 39.]);
    }

    #[test]
    fn identity_left_factor() {
        let b = Tensor::from_fn(&[3, 4], |i| i as f32 * 0.5 - 1.0);
        assert_eq!(matmul(&Tensor::eye(3), &b).unwrap(), b);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let err = matmul(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(err.to_string().contains("inner dimension"));
    }

    #[test]
    fn transposed_variants_agree_with_matmul() {
        let a = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.37).sin());
        let b = Tensor::from_fn(&[5, 4], |i| (i as f32 * 0.11).cos());
        let bt = Tensor::from_fn(&[4, 5], |i| b.get2(i % 5, i / 5));
        let at = Tensor::from_fn(&[4, 3], |i| a.get2(i % 3, i / 3));
        assert!(matmul_bt(&a, &b).unwrap().max_abs_diff(&matmul(&a, &bt).unwrap()) < 1e-6);
        assert!(matmul_at(&at, &bt).unwrap().max_abs_diff(&matmul(&a, &bt).unwrap()) < 1e-6);
    }

    #[test]
    fn dense_scalar_case() {
        let y = dense(
            &Tensor::from_vec(&[1, 1], vec![3.]).unwrap(),
            &Tensor::from_vec(&[1, 1], vec![2.]).unwrap(),
            &Tensor::from_vec(&[1], vec![1.]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.data(), &[7.]);
    }

    #[test]
    fn dense_identity() {
        let x = Tensor::from_fn(&[4, 3], |i| i as f32 - 5.0);
        let y = dense(&x, &Tensor::eye(3), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }
}
