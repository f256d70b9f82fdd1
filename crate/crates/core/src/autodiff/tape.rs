use std::borrow::Cow;

use crate::error::{PulseError, Result};
use crate::tensorcore::{self as tc, ConvSpec, LayerNormCache, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Param(usize),
    Conv1d(ConvSpec),
    MatMul,
    /// `a · bᵀ`
    MatMulBt,
    Dense,
    LayerNorm,
    Relu,
    Softmax,
    AvgPool(usize),
    Transpose,
    ConcatRows,
    ConcatCols,
    SliceCols { start: usize, len: usize },
    MeanRows,
    /// `x · scale + shift`
    Affine { scale: f64, shift: f64 },
    Sum,
    Pick(usize),
}

pub struct TapeNode<'a, T: Scalar> {
    pub op: Op,
    pub inputs: Vec<Var>,
    pub value: Cow<'a, Tensor<T>>,
    requires_grad: bool,
    ln_cache: Option<LayerNormCache>,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Parameter leaves borrow their tensors; everything else is owned.
pub struct Tape<'a, T: Scalar = f32> {
    nodes: Vec<TapeNode<'a, T>>,
    n_params: usize,
}

/// Per-parameter gradients. Parameters that did not take part in the
/// recorded computation have no entry.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar = f32> {
    per_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.per_param.get(param).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.per_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_param.is_empty()
    }

    pub fn into_inner(self) -> Vec<Option<Tensor<T>>> {
        self.per_param
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// A tape whose parameter ids range over `0..n_params`.
    pub fn new(n_params: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(128),
            n_params,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn node(&self, v: Var) -> &TapeNode<'a, T> {
        &self.nodes[v.0]
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Cow<'a, Tensor<T>>) -> Var {
        let requires_grad = matches!(op, Op::Param(_)) || inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(TapeNode {
            op,
            inputs,
            value,
            requires_grad,
            ln_cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, vec![], Cow::Owned(t))
    }

    pub fn input_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Op::Input, vec![], Cow::Borrowed(t))
    }

    pub fn param(&mut self, id: usize, t: &'a Tensor<T>) -> Result<Var> {
        if id >= self.n_params {
            return Err(PulseError::InvalidArgument(format!(
                "parameter id {id} out of range for tape with {} parameters",
                self.n_params
            )));
        }
        Ok(self.push(Op::Param(id), vec![], Cow::Borrowed(t)))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let y = tc::conv1d_dilated(self.value(x), self.value(w), self.value(b), &spec)?;
        Ok(self.push(Op::Conv1d(spec), vec![x, w, b], Cow::Owned(y)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tc::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul, vec![a, b], Cow::Owned(y)))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tc::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulBt, vec![a, b], Cow::Owned(y)))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tc::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Dense, vec![x, w, b], Cow::Owned(y)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (y, cache) = tc::layer_norm(self.value(x), self.value(gain), self.value(shift), tc::LAYER_NORM_EPS)?;
        let v = self.push(Op::LayerNorm, vec![x, gain, shift], Cow::Owned(y));
        self.nodes[v.0].ln_cache = Some(cache);
        Ok(v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = tc::relu(self.value(x));
        self.push(Op::Relu, vec![x], Cow::Owned(y))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let y = tc::softmax_rows(self.value(x));
        self.push(Op::Softmax, vec![x], Cow::Owned(y))
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = tc::avg_pool(self.value(x), factor)?;
        Ok(self.push(Op::AvgPool(factor), vec![x], Cow::Owned(y)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = tc::transpose(self.value(x))?;
        Ok(self.push(Op::Transpose, vec![x], Cow::Owned(y)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = tc::concat_rows(&vals)?;
        Ok(self.push(Op::ConcatRows, parts.to_vec(), Cow::Owned(y)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = tc::concat_cols(&vals)?;
        Ok(self.push(Op::ConcatCols, parts.to_vec(), Cow::Owned(y)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = tc::slice_cols(self.value(x), start, len)?;
        Ok(self.push(Op::SliceCols { start, len }, vec![x], Cow::Owned(y)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let y = tc::mean_rows(self.value(x))?;
        Ok(self.push(Op::MeanRows, vec![x], Cow::Owned(y)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| T::from_f64(v.to_f64() * scale + shift));
        self.push(Op::Affine { scale, shift }, vec![x], Cow::Owned(y))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        self.push(Op::Sum, vec![x], Cow::Owned(Tensor::scalar(T::from_f64(s))))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).len();
        let v = *self
            .value(x)
            .data()
            .get(index)
            .ok_or_else(|| PulseError::dim("pick", "flat index", n, index))?;
        Ok(self.push(Op::Pick(index), vec![x], Cow::Owned(Tensor::scalar(v))))
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as the
    /// output). Nodes are visited in exact reverse recording order.
    pub fn backward(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(PulseError::dim(
                "backward",
                "seed elements",
                self.value(output).len(),
                seed.len(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut per_param: Vec<Option<Tensor<T>>> = (0..self.n_params).map(|_| None).collect();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let contributions = self.local_grads(node, &g)?;
            if let Op::Param(id) = node.op {
                accumulate(&mut per_param[id], g)?;
                continue;
            }
            for (input, cg) in node.inputs.iter().zip(contributions) {
                if let Some(cg) = cg {
                    if self.nodes[input.0].requires_grad {
                        accumulate(&mut grads[input.0], cg)?;
                    }
                }
            }
        }
        Ok(Gradients { per_param })
    }

    /// Gradient contributions of `node` to each of its inputs.
    fn local_grads(&self, node: &TapeNode<'a, T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let val = |i: usize| self.value(node.inputs[i]);
        let wants = |i: usize| self.nodes[node.inputs[i].0].requires_grad;
        Ok(match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv1d(spec) => {
                let (dx, dw, db) = tc::conv1d_dilated_backward(val(0), val(1), g, spec)?;
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::MatMul => {
                let da = if wants(0) { Some(tc::matmul_bt(g, val(1))?) } else { None };
                let db = if wants(1) { Some(tc::matmul_at(val(0), g)?) } else { None };
                vec![da, db]
            }
            Op::MatMulBt => {
                // y = a bᵀ: da = g b, db = gᵀ a
                let da = if wants(0) { Some(tc::matmul(g, val(1))?) } else { None };
                let db = if wants(1) { Some(tc::matmul_at(g, val(0))?) } else { None };
                vec![da, db]
            }
            Op::Dense => {
                let (dx, dw, db) = tc::dense_backward(val(0), val(1), g)?;
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::LayerNorm => {
                let cache = node.ln_cache.as_ref().expect("layer norm cache recorded");
                let (dx, dg, ds) = tc::layer_norm_backward(cache, val(1), g);
                vec![Some(dx), Some(dg), Some(ds)]
            }
            Op::Relu => vec![Some(tc::relu_backward(val(0), g))],
            Op::Softmax => vec![Some(tc::softmax_rows_backward(&node.value, g))],
            Op::AvgPool(f) => vec![Some(tc::avg_pool_backward(val(0).shape(), g, *f))],
            Op::Transpose => vec![Some(tc::transpose(g)?)],
            Op::ConcatRows => {
                let cols = g.last_dim();
                let mut start = 0;
                node.inputs
                    .iter()
                    .map(|&p| {
                        let rows = self.value(p).shape()[0];
                        let part = g.data()[start * cols..(start + rows) * cols].to_vec();
                        start += rows;
                        Tensor::new(vec![rows, cols], part).map(Some)
                    })
                    .collect::<Result<_>>()?
            }
            Op::ConcatCols => {
                let mut start = 0;
                node.inputs
                    .iter()
                    .map(|&p| {
                        let w = self.value(p).last_dim();
                        let part = tc::slice_cols(g, start, w);
                        start += w;
                        part.map(Some)
                    })
                    .collect::<Result<_>>()?
            }
            Op::SliceCols { start, len } => {
                let x = val(0);
                let (r, c) = (x.shape()[0], x.shape()[1]);
                let mut dx = vec![T::ZERO; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                vec![Some(Tensor::new(vec![r, c], dx)?)]
            }
            Op::MeanRows => {
                let x = val(0);
                let r = x.shape()[0];
                let row: Vec<T> = g.data().iter().map(|v| T::from_f64(v.to_f64() / r as f64)).collect();
                let data = (0..r).flat_map(|_| row.iter().copied()).collect();
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Affine { scale, .. } => vec![Some(tc::scale(g, *scale))],
            Op::Sum => {
                let x = val(0);
                vec![Some(Tensor::filled(x.shape(), g.data()[0]))]
            }
            Op::Pick(index) => {
                let x = val(0);
                let mut dx = Tensor::zeros(x.shape());
                dx.data_mut()[*index] = g.data()[0];
                vec![Some(dx)]
            }
        })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient() {
        let x = Tensor::scalar(3.0f32);
        let mut tape = Tape::new(1);
        let xv = tape.param(0, &x).unwrap();
        let y = tape.scale(xv, 2.0);
        let loss = tape.sum(y);
        assert_eq!(tape.value(loss).data(), &[6.0]);
        let g = tape.backward(loss, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[2.0]);
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let w = Tensor::from_vec(&[2, 1], vec![1.0, -2.0]).unwrap();
        let mut tape = Tape::new(2);
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![0.5, 4.0]).unwrap());
        let wv = tape.param(0, &w).unwrap();
        let y = tape.matmul(x, wv).unwrap();
        let g = tape.backward(y, Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[0.5, 4.0]);
        assert!(g.get(1).is_none());
    }

    #[test]
    fn seed_shape_is_checked() {
        let x = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        let mut tape = Tape::new(1);
        let xv = tape.param(0, &x).unwrap();
        assert!(tape.backward(xv, Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn reused_values_accumulate() {
        let m = Tensor::from_vec(&[1, 3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new(1);
        let mv = tape.param(0, &m).unwrap();
        let both = tape.concat_rows(&[mv, mv]).unwrap();
        let s = tape.sum(both);
        let g = tape.backward(s, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
