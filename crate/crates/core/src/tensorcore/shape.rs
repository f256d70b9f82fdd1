//! Elementwise and structural ops: activation, pooling, transposes and the
//! row/column splicing used to split attention heads.

use super::{Scalar, Tensor};
use crate::error::{PulseError, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Non-overlapping average pooling along the last axis of a `[C, T]` map.
/// Trailing samples that do not fill a whole pool are dropped.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    input.expect_rank("avg_pool", 2)?;
    let (c, t) = (input.shape()[0], input.shape()[1]);
    if factor == 0 || t < factor {
        return Err(PulseError::dim("avg_pool", "time", factor.max(1), t));
    }
    let t_out = t / factor;
    let inv = 1.0 / factor as f64;
    let mut out = Vec::with_capacity(c * t_out);
    for ch in 0..c {
        let row = input.row(ch);
        for j in 0..t_out {
            let s: f64 = row[j * factor..(j + 1) * factor].iter().map(|v| v.to_f64()).sum();
            out.push(T::from_f64(s * inv));
        }
    }
    Tensor::new(vec![c, t_out], out)
}

pub fn avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (c, t) = (input_shape[0], input_shape[1]);
    let t_out = grad_out.shape()[1];
    let inv = 1.0 / factor as f64;
    let mut dx = vec![T::ZERO; c * t];
    for ch in 0..c {
        for j in 0..t_out {
            let g = T::from_f64(grad_out.data()[ch * t_out + j].to_f64() * inv);
            dx[ch * t + j * factor..ch * t + (j + 1) * factor].fill(g);
        }
    }
    Tensor::new(vec![c, t], dx).expect("shape preserved")
}

pub fn transpose<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_rank("transpose", 2)?;
    let (r, c) = (input.shape()[0], input.shape()[1]);
    let src = input.data();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        out.extend((0..r).map(|i| src[i * c + j]));
    }
    Tensor::new(vec![c, r], out)
}

/// Stacks 2-D tensors with equal column counts along the row axis.
pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| PulseError::InvalidArgument("concat_rows of nothing".into()))?;
    let cols = first.last_dim();
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        p.expect_rank("concat_rows", 2)?;
        if p.last_dim() != cols {
            return Err(PulseError::dim("concat_rows", "columns", cols, p.last_dim()));
        }
        rows += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, cols], data)
}

/// Columns `[start, start + len)` of a 2-D tensor.
pub fn slice_cols<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    input.expect_rank("slice_cols", 2)?;
    let (r, c) = (input.shape()[0], input.shape()[1]);
    if len == 0 || start + len > c {
        return Err(PulseError::dim("slice_cols", "columns", start + len, c));
    }
    let mut out = Vec::with_capacity(r * len);
    for i in 0..r {
        out.extend_from_slice(&input.row(i)[start..start + len]);
    }
    Tensor::new(vec![r, len], out)
}

/// Places equal-height 2-D tensors side by side.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| PulseError::InvalidArgument("concat_cols of nothing".into()))?;
    let rows = first.shape()[0];
    for p in parts {
        p.expect_rank("concat_cols", 2)?;
        if p.shape()[0] != rows {
            return Err(PulseError::dim("concat_cols", "rows", rows, p.shape()[0]));
        }
    }
    let cols: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(i));
        }
    }
    Tensor::new(vec![rows, cols], out)
}

/// Column means of a 2-D tensor, as a `[1, N]` row.
pub fn mean_rows<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_rank("mean_rows", 2)?;
    let (r, c) = (input.shape()[0], input.shape()[1]);
    let mut acc = vec![0.0f64; c];
    for i in 0..r {
        for (a, v) in acc.iter_mut().zip(input.row(i)) {
            *a += v.to_f64();
        }
    }
    Tensor::new(vec![1, c], acc.into_iter().map(|a| T::from_f64(a / r as f64)).collect())
}

pub fn scale<T: Scalar>(input: &Tensor<T>, factor: f64) -> Tensor<T> {
    input.map(|v| T::from_f64(v.to_f64() * factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[3], vec![-1., 0., 2.]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0., 0., 2.]);
        assert_eq!(relu(&y), y);
    }

    #[test]
    fn pooling_halves_time() {
        let x = Tensor::from_vec(&[1, 5], vec![1., 3., 5., 7., 100.]).unwrap();
        let y = avg_pool(&x, 2).unwrap();
        assert_eq!(y.data(), &[2., 6.]);
        let g = avg_pool_backward(&[1, 5], &Tensor::from_vec(&[1, 2], vec![1., 2.]).unwrap(), 2);
        assert_eq!(g.data(), &[0.5, 0.5, 1., 1., 0.]);
    }

    #[test]
    fn splice_round_trip() {
        let x = Tensor::from_fn(&[3, 6], |i| i as f32);
        let a = slice_cols(&x, 0, 2).unwrap();
        let b = slice_cols(&x, 2, 4).unwrap();
        assert_eq!(concat_cols(&[&a, &b]).unwrap(), x);
        assert_eq!(transpose(&transpose(&x).unwrap()).unwrap(), x);
        assert!(slice_cols(&x, 5, 2).is_err());
    }

    #[test]
    fn mean_of_rows() {
        let x = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 6.]).unwrap();
        assert_eq!(mean_rows(&x).unwrap().data(), &[2., 4.]);
    }
}
