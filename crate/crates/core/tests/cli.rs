use std::path::{Path, PathBuf};
use std::process::Command;

use pulse_core::cli::{cmd_attn, cmd_eval, cmd_synth, cmd_train, AttnArgs, EvalArgs, SynthArgs, Toggle, TrainArgs};
use pulse_core::cli::dataset::{load_dataset, read_manifest, MANIFEST_FILE};
use pulse_core::harness::{postprocess_clip, HISTORY_LEN};
use pulse_core::model::{load_params, PulseConfig};
use pulse_core::preprocess::prepare;
use pulse_core::training::evaluate;

const BIN: &str = env!("CARGO_BIN_EXE_pulse");

fn synth(dir: &Path) {
    cmd_synth(&SynthArgs {
        subjects: 4,
        minutes: 2.0,
        seed: 3,
        out: dir.to_path_buf(),
    })
    .unwrap();
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let body = serde_json::json!({
        "model": PulseConfig::tiny(),
        "train": {"batch_size": 32, "max_epochs": 3, "patience": 3},
    });
    std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
    path
}

fn train_args(data: &Path, config: &Path, out: PathBuf) -> TrainArgs {
    TrainArgs {
        data: data.to_path_buf(),
        subjects: None,
        iteration: 1,
        config: Some(config.to_path_buf()),
        seed: Some(5),
        fold_seed: 0,
        out,
    }
}

#[test]
fn missing_data_is_a_usage_error() {
    let out = Command::new(BIN).args(["train", "--out", "x.pw"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
}

#[test]
fn unreadable_data_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["eval", "--data"])
        .arg(dir.path().join("nope"))
        .args(["--model", "m.pw"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic_and_reingests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path());
    synth(b.path());
    for s in ["S01", "S04"] {
        for f in [MANIFEST_FILE, "ppg.f32", "acc_z.f32", "labels.f32"] {
            assert_eq!(
                std::fs::read(a.path().join(s).join(f)).unwrap(),
                std::fs::read(b.path().join(s).join(f)).unwrap()
            );
        }
        let m = read_manifest(&a.path().join(s)).unwrap();
        m.validate(Some(&a.path().join(s))).unwrap();
    }
    let records = load_dataset(a.path()).unwrap();
    assert_eq!(records.len(), 4);
    // two minutes at an 8 s window and 2 s shift
    let windows: usize = records.iter().map(|r| prepare(r).unwrap().len()).sum();
    assert_eq!(windows, 4 * 57);
}

#[test]
fn train_eval_attn_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let config = tiny_config(dir.path());

    let summary = cmd_train(&train_args(&data, &config, dir.path().join("a.pw"))).unwrap();
    assert_eq!(summary.test_subject, "S02");
    assert!(summary.test_mae.is_finite());
    let history = std::fs::read_to_string(dir.path().join("a.history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_mae"));
    assert_eq!(history.lines().count(), summary.epochs + 1);

    cmd_train(&train_args(&data, &config, dir.path().join("b.pw"))).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a.pw")).unwrap(),
        std::fs::read(dir.path().join("b.pw")).unwrap()
    );

    let report = dir.path().join("report");
    let eval = cmd_eval(&EvalArgs {
        data: data.clone(),
        model: dir.path().join("a.pw"),
        postprocess: Toggle::On,
        report: Some(report.clone()),
        subjects: Some(vec!["S02".into()]),
    })
    .unwrap();
    let params = load_params(&dir.path().join("a.pw")).unwrap();
    let ws = prepare(&load_dataset(&data).unwrap()[1]).unwrap();
    let direct = evaluate(&params, &ws).unwrap();
    assert!((eval.raw.overall.mae_bpm - direct.mae).abs() < 1e-9);
    for f in ["mae_overall.csv", "mae_per_subject.csv", "mae_per_activity.csv"] {
        for d in [report.clone(), report.join("raw")] {
            let text = std::fs::read_to_string(d.join(f)).unwrap();
            assert_eq!(text.lines().next(), Some("key,n_windows,mae_bpm"));
            for line in text.lines().skip(1) {
                let cols: Vec<&str> = line.split(',').collect();
                assert_eq!(cols.len(), 3);
                cols[1].parse::<usize>().unwrap();
                cols[2].parse::<f64>().unwrap();
            }
        }
    }
    let preds = std::fs::read_to_string(report.join("predictions.csv")).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("subject_id,window,activity,target,prediction,postprocessed"));
    let rows: Vec<Vec<f32>> = lines
        .map(|l| l.split(',').skip(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), ws.len());
    let raw: Vec<f32> = rows.iter().map(|r| r[1]).collect();
    let post = postprocess_clip(&raw);
    for (r, p) in rows.iter().zip(&post).skip(HISTORY_LEN) {
        assert!((r[2] - p).abs() < 1e-3);
    }

    let prefix = dir.path().join("attn");
    let args = AttnArgs {
        data: data.clone(),
        model: dir.path().join("a.pw"),
        window: 4,
        out: prefix.clone(),
        subject: Some("S03".into()),
    };
    let side = cmd_attn(&args).unwrap();
    let t = PulseConfig::tiny().seq_len();
    assert_eq!((side.query_len, side.key_len), (t, 3 * t));
    assert_eq!(side.key_segments.len(), 3);
    let pgm = std::fs::read(dir.path().join("attn.head0.pgm")).unwrap();
    let header = format!("P5\n{} {}\n255\n", 3 * t, t);
    assert!(pgm.starts_with(header.as_bytes()));
    assert_eq!(pgm.len(), header.len() + 3 * t * t);
    let csv = std::fs::read_to_string(dir.path().join("attn.head1.csv")).unwrap();
    for line in csv.lines() {
        let s: f64 = line.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    cmd_attn(&AttnArgs { out: dir.path().join("again"), ..args }).unwrap();
    assert_eq!(pgm, std::fs::read(dir.path().join("again.head0.pgm")).unwrap());
}

#[test]
fn selftest_detects_corrupted_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let config = tiny_config(dir.path());
    let model = dir.path().join("m.pw");
    cmd_train(&train_args(&data, &config, model.clone())).unwrap();
    let mut params = load_params(&model).unwrap();
    let i = params.layout().specs.iter().position(|s| s.name == "acc.block2.conv0.weight").unwrap();
    params.tensors[i].data_mut()[0] = f32::NAN;
    let bad = dir.path().join("bad.pw");
    pulse_core::model::save_params(&params, &bad).unwrap();
    let r = pulse_core::selftest::model_check(&load_params(&bad).unwrap(), 0);
    assert!(!r.passed);
    assert!(r.detail.contains("acc.block2"), "{}", r.detail);
}
