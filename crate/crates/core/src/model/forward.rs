use serde::{Deserialize, Serialize};

use super::config::AttentionMode;
use super::params::{ExtractorIndex, PulseParams};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{PulseError, Result};
use crate::tensorcore::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Ppg,
    Acc,
}

/// Labeled span `[start, end)` of a query or key axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Post-softmax attention weights captured during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// One `[T_q, T_kv]` matrix per head.
    pub heads: Vec<Tensor>,
    pub query_segments: Vec<Segment>,
    pub key_segments: Vec<Segment>,
}

impl AttentionMap {
    pub fn query_len(&self) -> usize {
        self.heads[0].shape()[0]
    }

    pub fn key_len(&self) -> usize {
        self.heads[0].shape()[1]
    }

    /// Largest `|row_sum - 1|` over all heads.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for h in &self.heads {
            for r in 0..h.shape()[0] {
                let s: f64 = h.row(r).iter().map(|&v| v as f64).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Columns of head `h` restricted to the key segment labeled `label`.
    pub fn key_block(&self, head: usize, label: &str) -> Option<Tensor> {
        let seg = self.key_segments.iter().find(|s| s.label == label)?;
        crate::tensorcore::slice_cols(&self.heads[head], seg.start, seg.end - seg.start).ok()
    }
}

fn segments(labels: &[&str], len_each: usize) -> Vec<Segment> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| Segment {
            label: l.to_string(),
            start: i * len_each,
            end: (i + 1) * len_each,
        })
        .collect()
}

const ACC_AXES: [&str; 3] = ["acc_x", "acc_y", "acc_z"];

/// Fails with the layer name if `v` holds non-finite values.
fn ensure_finite<T: Scalar>(tape: &Tape<'_, T>, v: Var, layer: &str) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(PulseError::NumericFailure { layer: layer.to_string() })
    }
}

/// Records one feature extractor on `tape`: conv-relu stacks with average
/// pooling after each block, transposed to `[T', F]`.
pub fn extract_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a PulseParams<T>,
    extractor: &ExtractorIndex,
    x: Var,
) -> Result<Var> {
    let cfg = params.config();
    let mut h = x;
    for conv in &extractor.convs {
        let w = tape.param(conv.weight, &params.tensors[conv.weight])?;
        let b = tape.param(conv.bias, &params.tensors[conv.bias])?;
        h = tape.conv1d(h, w, b, conv.spec)?;
        h = tape.relu(h);
        ensure_finite(tape, h, &format!("{}.block{}.conv{}", extractor.prefix, conv.block, conv.layer))?;
        if conv.layer + 1 == cfg.convs_per_block {
            h = tape.avg_pool(h, cfg.pool_factor)?;
        }
    }
    tape.transpose(h)
}

/// Records multi-head attention of `q` over `kv`. Returns the projected
/// output `[T_q, d_model]` and the per-head softmax nodes.
pub fn attention_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a PulseParams<T>,
    q: Var,
    kv: Var,
) -> Result<(Var, Vec<Var>)> {
    let cfg = params.config();
    let idx = params.index();
    let f = cfg.feature_dim();
    for (v, axis) in [(q, "query features"), (kv, "key/value features")] {
        if tape.value(v).last_dim() != f {
            return Err(PulseError::dim("mhca", axis, f, tape.value(v).last_dim()));
        }
    }
    let wq = tape.param(idx.query, &params.tensors[idx.query])?;
    let wk = tape.param(idx.key, &params.tensors[idx.key])?;
    let wv = tape.param(idx.value, &params.tensors[idx.value])?;
    let qp = tape.matmul(q, wq)?;
    let kp = tape.matmul(kv, wk)?;
    let vp = tape.matmul(kv, wv)?;

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(qp, h * dh, dh)?;
        let kh = tape.slice_cols(kp, h * dh, dh)?;
        let vh = tape.slice_cols(vp, h * dh, dh)?;
        let scores = tape.matmul_bt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let a = tape.softmax_rows(scores);
        weights.push(a);
        head_outputs.push(tape.matmul(a, vh)?);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    let wo = tape.param(idx.out_weight, &params.tensors[idx.out_weight])?;
    let bo = tape.param(idx.out_bias, &params.tensors[idx.out_bias])?;
    let e = tape.dense(concat, wo, bo)?;
    ensure_finite(tape, e, "attention")?;
    Ok((e, weights))
}

fn capture_map<T: Scalar>(tape: &Tape<'_, T>, weights: &[Var], query_segments: Vec<Segment>, key_segments: Vec<Segment>) -> AttentionMap {
    AttentionMap {
        heads: weights.iter().map(|&a| tape.value(a).cast::<f32>()).collect(),
        query_segments,
        key_segments,
    }
}

/// Records the full network on `tape`. Returns the `[1, 1]` heart-rate node.
pub fn forward_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a PulseParams<T>,
    window: Tensor<T>,
    capture: bool,
) -> Result<(Var, Option<AttentionMap>)> {
    let cfg = params.config();
    let idx = params.index();
    if window.rank() != 2 || window.shape()[0] != cfg.input_channels() {
        return Err(PulseError::dim(
            "forward",
            "window channels",
            cfg.input_channels(),
            window.shape().first().copied().unwrap_or(0),
        ));
    }
    if window.shape()[1] != cfg.window_len {
        return Err(PulseError::dim("forward", "window samples", cfg.window_len, window.shape()[1]));
    }
    let t = cfg.window_len;
    let np = cfg.ppg_channels;
    let data = window.data();

    let ppg_in = tape.input(Tensor::new(vec![np, t], data[..np * t].to_vec())?);
    let ppg = extract_on_tape(tape, params, &idx.ppg, ppg_in)?;
    let t_seq = cfg.seq_len();

    let acc = if cfg.attention_mode.uses_accelerometer() {
        let mut axes = Vec::with_capacity(3);
        for a in 0..3 {
            let off = (np + a) * t;
            let x = tape.input(Tensor::new(vec![1, t], data[off..off + t].to_vec())?);
            axes.push(extract_on_tape(tape, params, &idx.acc, x)?);
        }
        Some(tape.concat_rows(&axes)?)
    } else {
        None
    };

    let ppg_seg = || segments(&["ppg"], t_seq);
    let acc_seg = || segments(&ACC_AXES, t_seq);
    let (q, kv, q_seg, kv_seg) = match (cfg.attention_mode, acc) {
        (AttentionMode::MhcaPpgQ, Some(acc)) => (ppg, acc, ppg_seg(), acc_seg()),
        (AttentionMode::MhcaPpgKv, Some(acc)) => (acc, ppg, acc_seg(), ppg_seg()),
        (AttentionMode::MhsaConcat, Some(acc)) => {
            let s = tape.concat_rows(&[ppg, acc])?;
            let seg = segments(&["ppg", "acc_x", "acc_y", "acc_z"], t_seq);
            (s, s, seg.clone(), seg)
        }
        _ => (ppg, ppg, ppg_seg(), ppg_seg()),
    };

    let (e, weights) = attention_on_tape(tape, params, q, kv)?;
    let gain = tape.param(idx.norm_gain, &params.tensors[idx.norm_gain])?;
    let shift = tape.param(idx.norm_shift, &params.tensors[idx.norm_shift])?;
    let e = tape.layer_norm(e, gain, shift)?;
    ensure_finite(tape, e, "norm")?;
    let pooled = tape.mean_rows(e)?;

    let w0 = tape.param(idx.hidden_weight, &params.tensors[idx.hidden_weight])?;
    let b0 = tape.param(idx.hidden_bias, &params.tensors[idx.hidden_bias])?;
    let h = tape.dense(pooled, w0, b0)?;
    let h = tape.relu(h);
    ensure_finite(tape, h, "head.dense0")?;
    let w1 = tape.param(idx.output_weight, &params.tensors[idx.output_weight])?;
    let b1 = tape.param(idx.output_bias, &params.tensors[idx.output_bias])?;
    let raw = tape.dense(h, w1, b1)?;
    let hr = tape.affine(raw, cfg.target_std as f64, cfg.target_mean as f64);
    ensure_finite(tape, hr, "head.dense1")?;

    let map = capture.then(|| capture_map(tape, &weights, q_seg, kv_seg));
    Ok((hr, map))
}

/// Heart-rate estimate (BPM) for one `[C, window_len]` window.
pub fn forward(params: &PulseParams, window: &Tensor, capture: bool) -> Result<(f32, Option<AttentionMap>)> {
    let mut tape = Tape::new(params.tensors.len());
    let (hr, map) = forward_on_tape(&mut tape, params, window.clone(), capture)?;
    Ok((tape.value(hr).data()[0], map))
}

/// Forward in any precision, returning the HR as f64.
pub fn forward_scalar<T: Scalar>(params: &PulseParams<T>, window: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new(params.tensors.len());
    let (hr, _) = forward_on_tape(&mut tape, params, window.clone(), false)?;
    Ok(tape.value(hr).data()[0].to_f64())
}

/// Heart-rate estimate and the gradient of `seed · hr` with respect to
/// every parameter.
pub fn forward_backward<T: Scalar>(params: &PulseParams<T>, window: &Tensor<T>, seed: f64) -> Result<(f64, Gradients<T>)> {
    let mut tape = Tape::new(params.tensors.len());
    let (hr, _) = forward_on_tape(&mut tape, params, window.clone(), false)?;
    let pred = tape.value(hr).data()[0].to_f64();
    let grads = tape.backward(hr, Tensor::new(vec![1, 1], vec![T::from_f64(seed)])?)?;
    Ok((pred, grads))
}

/// Runs one extractor on a `[C, T]` stream and returns `[T', F]` embeddings.
pub fn extract_features(params: &PulseParams, stream: &Tensor, which: Stream) -> Result<Tensor> {
    let cfg = params.config();
    let (extractor, channels) = match which {
        Stream::Ppg => (&params.index().ppg, cfg.ppg_channels),
        Stream::Acc => (&params.index().acc, 1),
    };
    if stream.rank() != 2 || stream.shape()[0] != channels {
        return Err(PulseError::dim(
            "extract_features",
            "stream channels",
            channels,
            stream.shape().first().copied().unwrap_or(0),
        ));
    }
    let mut tape = Tape::new(params.tensors.len());
    let x = tape.input(stream.clone());
    let out = extract_on_tape(&mut tape, params, extractor, x)?;
    Ok(tape.value(out).clone())
}

/// Multi-head attention of `q_stream` `[T_q, F]` over `kv_stream` `[T_kv, F]`
/// with the parameters' projections. Returns `[T_q, d_model]`.
pub fn mhca(
    params: &PulseParams,
    q_stream: &Tensor,
    kv_stream: &Tensor,
    capture: bool,
) -> Result<(Tensor, Option<AttentionMap>)> {
    let mut tape = Tape::new(params.tensors.len());
    let q = tape.input(q_stream.clone());
    let kv = tape.input(kv_stream.clone());
    let (e, weights) = attention_on_tape(&mut tape, params, q, kv)?;
    let map = capture.then(|| {
        capture_map(
            &tape,
            &weights,
            segments(&["query"], q_stream.shape()[0]),
            segments(&["key"], kv_stream.shape()[0]),
        )
    });
    Ok((tape.value(e).clone(), map))
}
