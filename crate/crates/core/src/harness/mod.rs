//! Leave-one-subject-out orchestration, post-processing, MAE reporting and
//! the synthetic cohort generator.

mod folds;
mod postprocess;
mod report;
mod synth;

pub use folds::{loso_folds, FoldSpec, N_GROUPS};
pub use postprocess::{postprocess_clip, HrStream, BAND, HISTORY_LEN};
pub use report::{report, MaeRow, MaeTable, UNKNOWN_ACTIVITY};
pub use synth::{subject_id, synth_generate, synth_subject, SynthSubject, ACC_RATE_HZ, HR_MAX, HR_MIN, PPG_RATE_HZ};

use crate::error::{PulseError, Result};
use crate::model::{init_params, PulseConfig, PulseParams};
use crate::preprocess::WindowSet;
use crate::training::{predict, train, TrainConfig, TrainHistory};

/// Fraction of each training subject's session held out for validation when
/// the fold has no validation subjects.
pub const FALLBACK_VAL_FRACTION: f64 = 0.2;

/// Splits the last `fraction` of every subject's windows (by grid position)
/// off as validation.
pub fn split_validation(windows: &WindowSet, fraction: f64) -> (WindowSet, WindowSet) {
    let mut cut = std::collections::HashMap::new();
    for s in windows.subjects() {
        let mut grid: Vec<usize> = (0..windows.len())
            .filter(|&i| windows.subject_ids[i] == s)
            .map(|i| windows.grid_index[i])
            .collect();
        grid.sort_unstable();
        let keep = grid.len() - ((grid.len() as f64 * fraction).round() as usize).min(grid.len() - 1);
        cut.insert(s, grid.get(keep).copied().unwrap_or(usize::MAX));
    }
    let is_val = |i: usize| windows.grid_index[i] >= cut[&windows.subject_ids[i]];
    (windows.select(|i| !is_val(i)), windows.select(is_val))
}

/// Train, validation and test windows for one fold. The flag reports
/// whether validation fell back to a split of the training subjects.
pub fn fold_sets(all: &WindowSet, fold: &FoldSpec) -> Result<(WindowSet, WindowSet, WindowSet, bool)> {
    let test = all.for_subjects(std::slice::from_ref(&fold.test));
    if test.is_empty() {
        return Err(PulseError::Data(format!("no windows for test subject {}", fold.test)));
    }
    let train = all.for_subjects(&fold.train);
    if fold.needs_validation_split() {
        log::info!(
            "iteration {}: held-out group has {} validation subject(s); splitting the last {:.0}% of training windows instead",
            fold.iteration,
            fold.validation.len(),
            FALLBACK_VAL_FRACTION * 100.0
        );
        let (train, val) = split_validation(&train, FALLBACK_VAL_FRACTION);
        Ok((train, val, test, true))
    } else {
        Ok((train, all.for_subjects(&fold.validation), test, false))
    }
}

/// Clips predictions subject by subject, in session order.
pub fn postprocess_windows(windows: &WindowSet, preds: &[f32]) -> Vec<f32> {
    let mut out = preds.to_vec();
    for s in windows.subjects() {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows.subject_ids[i] == s).collect();
        idx.sort_by_key(|&i| windows.grid_index[i]);
        let clipped = postprocess_clip(&idx.iter().map(|&i| preds[i]).collect::<Vec<_>>());
        for (&i, v) in idx.iter().zip(clipped) {
            out[i] = v;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct IterationOutcome {
    pub fold: FoldSpec,
    pub params: PulseParams,
    pub history: TrainHistory,
    pub test: WindowSet,
    pub raw: Vec<f32>,
    pub clipped: Vec<f32>,
    pub validation_fallback: bool,
}

impl IterationOutcome {
    pub fn raw_mae(&self) -> f64 {
        mae(&self.raw, &self.test.targets)
    }

    pub fn clipped_mae(&self) -> f64 {
        mae(&self.clipped, &self.test.targets)
    }
}

fn mae(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len() as f64
}

/// Initializes, trains and tests one LOSO iteration. Parameters are
/// initialized from `cfg.seed`.
pub fn run_iteration(all: &WindowSet, fold: &FoldSpec, model: &PulseConfig, cfg: &TrainConfig) -> Result<IterationOutcome> {
    let (train_set, val_set, test, validation_fallback) = fold_sets(all, fold)?;
    let init = init_params(model, cfg.seed)?;
    let (params, history) = train(init, &train_set, &val_set, cfg)?;
    let raw = predict(&params, &test)?;
    let clipped = postprocess_windows(&test, &raw);
    Ok(IterationOutcome {
        fold: fold.clone(),
        params,
        history,
        test,
        raw,
        clipped,
        validation_fallback,
    })
}
