//! The `pulse` command line: train, eval, attn, synth and selftest.

pub mod dataset;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PulseError, Result};
use crate::fsutil::atomic_write;
use crate::harness::{loso_folds, postprocess_windows, report, run_iteration, synth_generate, MaeTable};
use crate::model::{forward, load_params, save_params, PulseConfig};
use crate::preprocess::{prepare, SignalRecord, WindowSet};
use crate::selftest::{run_selftest, CheckResult};
use crate::training::{predict, TrainConfig};

pub use dataset::{load_dataset, load_subject, read_manifest, write_subject, DatasetManifest};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PULSE_THREADS";

/// Contents of the `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: PulseConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PulseError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| PulseError::Config(format!("{}: {e}", path.display())))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "pulse", version, about = "Heart-rate estimation from wrist PPG and accelerometer signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one leave-one-subject-out iteration.
    Train(TrainArgs),
    /// Evaluate a weight file and write MAE reports.
    Eval(EvalArgs),
    /// Export the attention maps of one window.
    Attn(AttnArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Run the oracle, gradient and property self-tests.
    Selftest(SelftestArgs),
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated subject ids; defaults to every subject in --data.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<String>>,
    /// Index of the LOSO iteration (the test subject's position in the list).
    #[arg(long, default_value_t = 0)]
    pub iteration: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds initialization and shuffling; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds the assignment of subjects to fold groups.
    #[arg(long, default_value_t = 0)]
    pub fold_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub postprocess: Toggle,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Comma-separated subject ids; defaults to every subject in --data.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<String>>,
}

#[derive(Clone, Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Window index within the selected subjects' windows.
    #[arg(long)]
    pub window: usize,
    /// Output prefix; files are `<prefix>.head<h>.csv`, `<prefix>.head<h>.pgm` and `<prefix>.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subject: Option<String>,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub subjects: usize,
    #[arg(long, default_value_t = 20.0)]
    pub minutes: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SelftestArgs {
    /// Also verify a trained weight file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Sizes the global worker pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PulseError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PulseError::Config(format!("thread pool: {e}")))
}

fn select_records(records: Vec<SignalRecord>, subjects: Option<&[String]>) -> Result<Vec<SignalRecord>> {
    let Some(list) = subjects else {
        return Ok(records);
    };
    list.iter()
        .map(|s| {
            records
                .iter()
                .find(|r| &r.subject_id == s)
                .cloned()
                .ok_or_else(|| PulseError::Data(format!("subject {s} not found in dataset")))
        })
        .collect()
}

/// Resamples, segments and normalizes every record, in record order.
pub fn prepare_all(records: &[SignalRecord]) -> Result<WindowSet> {
    let sets = records.par_iter().map(prepare).collect::<Result<Vec<_>>>()?;
    WindowSet::concat(&sets)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub test_subject: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub test_mae: f64,
    pub test_mae_postprocessed: f64,
    pub history_path: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let records = select_records(load_dataset(&args.data)?, args.subjects.as_deref())?;
    let subjects: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let folds = loso_folds(&subjects, args.fold_seed)?;
    let fold = folds.get(args.iteration).ok_or_else(|| {
        PulseError::InvalidArgument(format!("iteration {} out of range for {} subjects", args.iteration, folds.len()))
    })?;
    let windows = prepare_all(&records)?;
    log::info!(
        "iteration {}: test {}, validation {:?}, {} training subjects, {} windows total",
        fold.iteration,
        fold.test,
        fold.validation,
        fold.train.len(),
        windows.len()
    );
    let out = run_iteration(&windows, fold, &cfg.model, &cfg.train)?;
    save_params(&out.params, &args.out)?;
    let history_path = sibling(&args.out, "history.csv");
    atomic_write(&history_path, out.history.to_csv().as_bytes())?;
    atomic_write(&sibling(&args.out, "fold.json"), serde_json::to_string_pretty(fold)?.as_bytes())?;
    Ok(TrainSummary {
        test_subject: fold.test.clone(),
        epochs: out.history.epochs.len(),
        best_epoch: out.history.best_epoch,
        best_val_mae: out.history.best_val_mae(),
        test_mae: out.raw_mae(),
        test_mae_postprocessed: out.clipped_mae(),
        history_path,
    })
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub raw: MaeTable,
    pub postprocessed: Option<MaeTable>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary> {
    let params = load_params(&args.model)?;
    let records = select_records(load_dataset(&args.data)?, args.subjects.as_deref())?;
    let ws = prepare_all(&records)?;
    if ws.is_empty() {
        return Err(PulseError::Data("no labelled windows to evaluate".into()));
    }
    let raw = predict(&params, &ws)?;
    let raw_table = report(&raw, &ws.targets, &ws.subject_ids, &ws.activity_ids)?;
    let post = (args.postprocess == Toggle::On).then(|| postprocess_windows(&ws, &raw));
    let post_table = post
        .as_ref()
        .map(|p| report(p, &ws.targets, &ws.subject_ids, &ws.activity_ids))
        .transpose()?;

    if let Some(dir) = &args.report {
        let mut csv = String::from("subject_id,window,activity,target,prediction");
        csv.push_str(if post.is_some() { ",postprocessed\n" } else { "\n" });
        for i in 0..ws.len() {
            let act = ws.activity_ids[i].map_or(String::new(), |a| a.to_string());
            csv.push_str(&format!(
                "{},{},{},{:.4},{:.4}",
                ws.subject_ids[i], ws.grid_index[i], act, ws.targets[i], raw[i]
            ));
            match &post {
                Some(p) => csv.push_str(&format!(",{:.4}\n", p[i])),
                None => csv.push('\n'),
            }
        }
        atomic_write(&dir.join("predictions.csv"), csv.as_bytes())?;
        match &post_table {
            Some(t) => {
                t.write(dir)?;
                raw_table.write(&dir.join("raw"))?;
            }
            None => raw_table.write(dir)?,
        }
    }
    Ok(EvalSummary {
        raw: raw_table,
        postprocessed: post_table,
    })
}

/// Binary PGM of `values` in [0, 1], `rows × cols`, gray level `round(255·v)`.
pub fn encode_pgm(values: &[f32], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AttnSidecar {
    pub subject_id: String,
    pub window: usize,
    pub grid_index: usize,
    pub target_bpm: f32,
    pub prediction_bpm: f32,
    pub attention_mode: crate::model::AttentionMode,
    pub query_len: usize,
    pub key_len: usize,
    pub query_segments: Vec<crate::model::Segment>,
    pub key_segments: Vec<crate::model::Segment>,
    pub files: Vec<String>,
}

pub fn cmd_attn(args: &AttnArgs) -> Result<AttnSidecar> {
    let params = load_params(&args.model)?;
    let subjects = args.subject.clone().map(|s| vec![s]);
    let records = select_records(load_dataset(&args.data)?, subjects.as_deref())?;
    let ws = prepare_all(&records)?;
    if args.window >= ws.len() {
        return Err(PulseError::InvalidArgument(format!(
            "window {} out of range ({} windows)",
            args.window,
            ws.len()
        )));
    }
    let (pred, map) = forward(&params, &ws.window(args.window), true)?;
    let map = map.expect("captured");
    let prefix = args.out.to_string_lossy().into_owned();
    let mut files = Vec::new();
    for (h, a) in map.heads.iter().enumerate() {
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let mut csv = String::new();
        for r in 0..rows {
            let line: Vec<String> = a.row(r).iter().map(|v| format!("{v:.7}")).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        let csv_path = format!("{prefix}.head{h}.csv");
        let pgm_path = format!("{prefix}.head{h}.pgm");
        atomic_write(Path::new(&csv_path), csv.as_bytes())?;
        atomic_write(Path::new(&pgm_path), &encode_pgm(a.data(), rows, cols))?;
        files.push(csv_path);
        files.push(pgm_path);
    }
    let sidecar = AttnSidecar {
        subject_id: ws.subject_ids[args.window].clone(),
        window: args.window,
        grid_index: ws.grid_index[args.window],
        target_bpm: ws.targets[args.window],
        prediction_bpm: pred,
        attention_mode: params.config().attention_mode,
        query_len: map.query_len(),
        key_len: map.key_len(),
        query_segments: map.query_segments.clone(),
        key_segments: map.key_segments.clone(),
        files,
    };
    atomic_write(
        Path::new(&format!("{prefix}.json")),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    Ok(sidecar)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<DatasetManifest>> {
    let records = synth_generate(args.subjects, args.minutes, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    records.iter().map(|r| write_subject(&args.out, r)).collect()
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<Vec<CheckResult>> {
    let params = args.model.as_deref().map(load_params).transpose()?;
    Ok(run_selftest(params.as_ref(), args.seed))
}

fn print_table(label: &str, t: &MaeTable) {
    println!("{label} MAE {:.3} BPM over {} windows", t.overall.mae_bpm, t.overall.n_windows);
    for r in &t.per_subject {
        println!("  {:<12} {:>6} windows  {:.3} BPM", r.key, r.n_windows, r.mae_bpm);
    }
}

/// Runs a parsed command line, printing a summary. Returns the process exit
/// code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            println!(
                "test subject {}: {} epochs, best epoch {} (val MAE {:.3}), test MAE {:.3} BPM ({:.3} post-processed)",
                s.test_subject, s.epochs, s.best_epoch, s.best_val_mae, s.test_mae, s.test_mae_postprocessed
            );
            println!("weights: {}  history: {}", a.out.display(), s.history_path.display());
        }
        Command::Eval(a) => {
            let s = cmd_eval(&a)?;
            print_table("raw", &s.raw);
            if let Some(t) = &s.postprocessed {
                print_table("post-processed", t);
            }
        }
        Command::Attn(a) => {
            let s = cmd_attn(&a)?;
            println!(
                "subject {} window {}: {} heads of {}x{}, prediction {:.2} BPM (target {:.2})",
                s.subject_id,
                s.window,
                s.files.len() / 2,
                s.query_len,
                s.key_len,
                s.prediction_bpm,
                s.target_bpm
            );
        }
        Command::Synth(a) => {
            let m = cmd_synth(&a)?;
            let windows: usize = m.iter().map(|m| m.labels.n_windows).sum();
            println!("wrote {} subjects ({windows} label windows) to {}", m.len(), a.out.display());
        }
        Command::Selftest(a) => {
            let results = cmd_selftest(&a)?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            return Ok(if failed == 0 { 0 } else { 1 });
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_levels() {
        let b = encode_pgm(&[0.0, 0.5, 1.0, 0.2], 2, 2);
        assert!(b.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&b[b.len() - 4..], &[0, 128, 255, 51]);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": {"d_model": 16, "block_channels": [8, 12, 16]}, "train": {"max_epochs": 3, "patience": 2}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.model.d_model, 16);
        assert_eq!(c.train.batch_size, 256);
        std::fs::write(&p, r#"{"modle": {}}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/model.pw"), "history.csv"), PathBuf::from("out/model.history.csv"));
    }
}
