//! Mini-batch Adam training on L1 loss with epoch-level early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::check::{relative_error, GRAD_STEPS};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::error::{PulseError, Result};
use crate::model::{forward_backward, forward_on_tape, forward_scalar, PulseParams};
use crate::preprocess::WindowSet;
use crate::tensorcore::{Scalar, Tensor};

/// Windows per gradient work unit. Fixed so that the summation order, and
/// therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Parameter elements spot-checked against finite differences when
/// `f64_check` is enabled.
const SPOT_CHECKS: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Spot-check the analytic gradient in f64 before training starts.
    pub f64_check: bool,
    /// Calibrate the output de-normalization from the training targets.
    pub standardize_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 500,
            patience: 150,
            adam: AdamConfig::default(),
            seed: 0,
            f64_check: false,
            standardize_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(PulseError::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(PulseError::Config(format!(
                "patience {} must be in 1..={}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(PulseError::Config(format!("learning rate {} must be >= 0", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_mae(&self) -> f64 {
        self.epochs[self.best_epoch].val_mae
    }

    /// `epoch,train_loss,val_mae` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_mae\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_mae));
        }
        s
    }

    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.steps == b.steps
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_mae.to_bits() == b.val_mae.to_bits()
            })
    }
}

/// Epoch-level early stopping on validation MAE.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_mae: f64) -> Verdict {
        let improved = val_mae < self.best;
        if improved {
            self.best = val_mae;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Verdict {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

/// Per-window predictions and their MAE.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<f32>,
    pub mae: f64,
}

pub fn predict(params: &PulseParams, windows: &WindowSet) -> Result<Vec<f32>> {
    check_windows(params, windows)?;
    (0..windows.len())
        .into_par_iter()
        .map(|i| forward_scalar(params, &windows.window(i)).map(|v| v as f32))
        .collect()
}

pub fn evaluate(params: &PulseParams, windows: &WindowSet) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(PulseError::Data("evaluate on an empty window set".into()));
    }
    let predictions = predict(params, windows)?;
    let mae = crate::autodiff::l1_loss(&predictions, &windows.targets)?;
    Ok(Evaluation { predictions, mae })
}

fn check_windows<T: Scalar>(params: &PulseParams<T>, windows: &WindowSet) -> Result<()> {
    let cfg = params.config();
    if windows.is_empty() {
        return Ok(());
    }
    if windows.channels != cfg.input_channels() {
        return Err(PulseError::dim("train", "window channels", cfg.input_channels(), windows.channels));
    }
    if windows.window_len != cfg.window_len {
        return Err(PulseError::dim("train", "window samples", cfg.window_len, windows.window_len));
    }
    Ok(())
}

/// Sum of per-window L1 gradients over `batch`, each scaled by `1/B`, plus
/// the summed absolute error.
fn batch_gradients(params: &PulseParams, windows: &WindowSet, batch: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    let inv_b = 1.0 / batch.len() as f64;
    let n_params = params.tensors.len();
    let chunks: Vec<(Vec<Vec<f64>>, f64)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            let mut abs_err = 0.0;
            for &i in chunk {
                let mut tape = Tape::new(n_params);
                let (hr, _) = forward_on_tape(&mut tape, params, windows.window(i), false)?;
                let err = tape.value(hr).data()[0] as f64 - windows.targets[i] as f64;
                abs_err += err.abs();
                let seed = if err > 0.0 {
                    inv_b
                } else if err < 0.0 {
                    -inv_b
                } else {
                    0.0
                };
                let grads = tape.backward(hr, Tensor::from_vec(&[1, 1], vec![seed as f32])?)?;
                for (a, g) in acc.iter_mut().zip(grads.into_inner()) {
                    if let Some(g) = g {
                        for (x, v) in a.iter_mut().zip(g.data()) {
                            *x += *v as f64;
                        }
                    }
                }
            }
            Ok((acc, abs_err))
        })
        .collect::<Result<_>>()?;

    let mut iter = chunks.into_iter();
    let (mut total, mut abs_err) = iter.next().expect("nonempty batch");
    for (acc, e) in iter {
        abs_err += e;
        for (t, a) in total.iter_mut().zip(acc) {
            for (x, v) in t.iter_mut().zip(a) {
                *x += v;
            }
        }
    }
    Ok((total, abs_err))
}

/// Compares the analytic gradient with central differences in f64 on a few
/// randomly chosen parameter elements of one window.
pub fn spot_check_gradients(params: &PulseParams, window: &Tensor, seed: u64, tol: f64) -> Result<f64> {
    let mut p64: PulseParams<f64> = params.cast();
    let w64: Tensor<f64> = window.cast();
    let (_, grads) = forward_backward(&p64, &w64, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..SPOT_CHECKS {
        let p = rng.random_range(0..p64.tensors.len());
        let j = rng.random_range(0..p64.tensors[p].len());
        let orig = p64.tensors[p].data()[j];
        let analytic = grads.get(p).map_or(0.0, |g| g.data()[j]);
        let mut rel = f64::INFINITY;
        for eps in GRAD_STEPS {
            p64.tensors[p].data_mut()[j] = orig + eps;
            let up = forward_scalar(&p64, &w64)?;
            p64.tensors[p].data_mut()[j] = orig - eps;
            let down = forward_scalar(&p64, &w64)?;
            p64.tensors[p].data_mut()[j] = orig;
            rel = rel.min(relative_error(analytic, (up - down) / (2.0 * eps)));
        }
        if rel >= tol {
            return Err(PulseError::NumericFailure {
                layer: format!(
                    "{} (gradient check: relative error {rel:.2e})",
                    params.layout().layer_of(p)
                ),
            });
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Trains `params` on `train`, early-stopping on `val` MAE, and returns the
/// parameters from the best validation epoch.
pub fn train(
    mut params: PulseParams,
    train: &WindowSet,
    val: &WindowSet,
    cfg: &TrainConfig,
) -> Result<(PulseParams, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PulseError::Data("empty training set".into()));
    }
    if val.is_empty() {
        return Err(PulseError::Data("empty validation set".into()));
    }
    check_windows(&params, train)?;
    check_windows(&params, val)?;
    let overlap: Vec<String> = val.subjects().into_iter().filter(|s| train.subject_ids.contains(s)).collect();
    if !overlap.is_empty() {
        log::warn!("validation subjects {overlap:?} also appear in the training set");
    }

    if cfg.standardize_targets {
        let n = train.len() as f64;
        let mean = train.targets.iter().map(|&t| t as f64).sum::<f64>() / n;
        let var = train.targets.iter().map(|&t| (t as f64 - mean).powi(2)).sum::<f64>() / n;
        params.set_target_stats(mean as f32, var.sqrt().max(1.0) as f32)?;
    }
    if cfg.f64_check {
        let worst = spot_check_gradients(&params, &train.window(0), cfg.seed, 1e-4)?;
        log::info!("f64 gradient spot check passed, worst relative error {worst:.2e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam, &params.tensors);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut abs_err = 0.0;
        let mut steps = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (grads, err) = batch_gradients(&params, train, batch)?;
            if !err.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(PulseError::NanLoss { epoch, batch: b });
            }
            abs_err += err;
            let grads: Vec<Option<Tensor>> = grads
                .into_iter()
                .zip(&params.tensors)
                .map(|(g, t)| Tensor::new(t.shape().to_vec(), g.into_iter().map(|v| v as f32).collect()).map(Some))
                .collect::<Result<_>>()?;
            adam_step(&mut params.tensors, &grads, &mut adam)?;
            steps += 1;
        }
        let train_loss = abs_err / train.len() as f64;
        let val_mae = evaluate(&params, val)?.mae;
        let verdict = stopper.observe(epoch, val_mae);
        if verdict.improved {
            best = params.clone();
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mae,
            steps,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train L1 {train_loss:.3} BPM, val MAE {val_mae:.3} BPM");
        if verdict.stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok((best, history))
}
