//! On-disk dataset format: one directory per subject holding
//! `manifest.json`, one headerless f32 LE file per channel, an f32 LE label
//! file (NaN marks a missing label) and an optional activity file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PulseError, Result};
use crate::fsutil::{atomic_write, f32_from_le_bytes, f32_to_le_bytes};
use crate::preprocess::{window_count, ActivitySpan, Channel, SignalRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
/// CSV with header `activity_id,start_s,end_s`.
pub const SPANS_CSV: &str = "spans_csv";
/// f32 LE activity id per sample at `sample_rate_hz`; negative or NaN means
/// no activity.
pub const SAMPLES_F32: &str = "samples_f32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub name: String,
    pub sample_rate_hz: f64,
    pub file: String,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsEntry {
    pub file: String,
    pub window_s: f64,
    pub shift_s: f64,
    pub n_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivitiesEntry {
    pub file: String,
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subject_id: String,
    pub channels: Vec<ChannelEntry>,
    pub labels: LabelsEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activities: Option<ActivitiesEntry>,
}

impl DatasetManifest {
    /// Label windows implied by the shortest channel.
    pub fn expected_windows(&self) -> usize {
        let duration = self
            .channels
            .iter()
            .map(|c| c.n_samples as f64 / c.sample_rate_hz)
            .fold(f64::INFINITY, f64::min);
        if !duration.is_finite() || duration < self.labels.window_s {
            return 0;
        }
        ((duration - self.labels.window_s) / self.labels.shift_s + 1e-9).floor() as usize + 1
    }

    /// Checks the manifest against itself and, when `dir` is given, against
    /// the sizes of the files it names.
    pub fn validate(&self, dir: Option<&Path>) -> Result<()> {
        let bad = |m: String| Err(PulseError::Data(format!("subject {}: {m}", self.subject_id)));
        if self.channels.is_empty() {
            return bad("manifest lists no channels".into());
        }
        for c in &self.channels {
            if !(c.sample_rate_hz > 0.0) {
                return bad(format!("channel {} has sample rate {}", c.name, c.sample_rate_hz));
            }
            if let Some(dir) = dir {
                let bytes = std::fs::metadata(dir.join(&c.file))?.len();
                if bytes != 4 * c.n_samples as u64 {
                    return bad(format!(
                        "channel {} declares {} samples but {} holds {bytes} bytes",
                        c.name, c.n_samples, c.file
                    ));
                }
            }
        }
        if !(self.labels.window_s > 0.0 && self.labels.shift_s > 0.0) {
            return bad("label window and shift must be positive".into());
        }
        let expected = self.expected_windows();
        if self.labels.n_windows.abs_diff(expected) > 1 {
            return bad(format!(
                "{} label windows, channel durations imply {expected}",
                self.labels.n_windows
            ));
        }
        if let Some(dir) = dir {
            let bytes = std::fs::metadata(dir.join(&self.labels.file))?.len();
            if bytes != 4 * self.labels.n_windows as u64 {
                return bad(format!(
                    "labels declare {} windows but {} holds {bytes} bytes",
                    self.labels.n_windows, self.labels.file
                ));
            }
        }
        if let Some(a) = &self.activities {
            match a.encoding.as_str() {
                SPANS_CSV => {}
                SAMPLES_F32 if a.sample_rate_hz.is_some_and(|r| r > 0.0) => {}
                SAMPLES_F32 => return bad("samples_f32 activities need a positive sample_rate_hz".into()),
                other => return bad(format!("unknown activity encoding {other:?}")),
            }
        }
        Ok(())
    }
}

fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    f32_from_le_bytes(&bytes)
        .ok_or_else(|| PulseError::Format(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())))
}

fn parse_spans(text: &str, path: &Path) -> Result<Vec<ActivitySpan>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || PulseError::Format(format!("{}:{}: expected activity_id,start_s,end_s", path.display(), n + 1));
        let mut f = line.split(',').map(str::trim);
        let mut next = || f.next().ok_or_else(bad);
        let activity_id = next()?.parse().map_err(|_| bad())?;
        let start_s = next()?.parse().map_err(|_| bad())?;
        let end_s = next()?.parse().map_err(|_| bad())?;
        out.push(ActivitySpan {
            activity_id,
            start_s,
            end_s,
        });
    }
    Ok(out)
}

/// Run-length encodes per-sample activity ids into spans.
pub fn spans_from_samples(ids: &[f32], rate_hz: f64) -> Vec<ActivitySpan> {
    let mut out: Vec<ActivitySpan> = Vec::new();
    let mut current: Option<(u32, usize)> = None;
    let close = |out: &mut Vec<ActivitySpan>, (id, start): (u32, usize), end: usize| {
        out.push(ActivitySpan {
            activity_id: id,
            start_s: start as f64 / rate_hz,
            end_s: end as f64 / rate_hz,
        })
    };
    for (i, &v) in ids.iter().enumerate() {
        let id = (v.is_finite() && v >= 0.0).then_some(v as u32);
        match (current, id) {
            (Some((c, _)), Some(n)) if c == n => {}
            (cur, next) => {
                if let Some(c) = cur {
                    close(&mut out, c, i);
                }
                current = next.map(|n| (n, i));
            }
        }
    }
    if let Some(c) = current {
        close(&mut out, c, ids.len());
    }
    out
}

pub fn read_manifest(subject_dir: &Path) -> Result<DatasetManifest> {
    let path = subject_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PulseError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_subject(subject_dir: &Path) -> Result<SignalRecord> {
    let m = read_manifest(subject_dir)?;
    m.validate(Some(subject_dir))?;
    let channels = m
        .channels
        .iter()
        .map(|c| {
            Ok(Channel {
                name: c.name.clone(),
                sample_rate_hz: c.sample_rate_hz,
                samples: read_f32_file(&subject_dir.join(&c.file))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hr_labels = read_f32_file(&subject_dir.join(&m.labels.file))?;
    let activities = match &m.activities {
        None => Vec::new(),
        Some(a) if a.encoding == SPANS_CSV => {
            let p = subject_dir.join(&a.file);
            parse_spans(&std::fs::read_to_string(&p)?, &p)?
        }
        Some(a) => spans_from_samples(
            &read_f32_file(&subject_dir.join(&a.file))?,
            a.sample_rate_hz.expect("validated"),
        ),
    };
    let record = SignalRecord {
        subject_id: m.subject_id,
        channels,
        hr_labels,
        label_window_s: m.labels.window_s,
        label_shift_s: m.labels.shift_s,
        activities,
    };
    record.validate()?;
    Ok(record)
}

/// Subject directories under `root` (those holding a manifest), sorted by
/// name.
pub fn subject_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| PulseError::Data(format!("cannot read dataset directory {}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(PulseError::Data(format!("no subject manifests under {}", root.display())));
    }
    Ok(dirs)
}

/// Loads every subject under `root`, sorted by subject id.
pub fn load_dataset(root: &Path) -> Result<Vec<SignalRecord>> {
    let mut records = subject_dirs(root)?
        .iter()
        .map(|d| load_subject(d))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for w in records.windows(2) {
        if w[0].subject_id == w[1].subject_id {
            return Err(PulseError::Data(format!("subject id {} appears twice", w[0].subject_id)));
        }
    }
    Ok(records)
}

/// Writes `record` as `root/<subject_id>/` and returns its manifest.
pub fn write_subject(root: &Path, record: &SignalRecord) -> Result<DatasetManifest> {
    let dir = root.join(&record.subject_id);
    std::fs::create_dir_all(&dir)?;
    let channels = record
        .channels
        .iter()
        .map(|c| {
            let file = format!("{}.f32", c.name);
            atomic_write(&dir.join(&file), &f32_to_le_bytes(&c.samples))?;
            Ok(ChannelEntry {
                name: c.name.clone(),
                sample_rate_hz: c.sample_rate_hz,
                file,
                n_samples: c.samples.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    atomic_write(&dir.join("labels.f32"), &f32_to_le_bytes(&record.hr_labels))?;
    let activities = if record.activities.is_empty() {
        None
    } else {
        let mut csv = String::from("activity_id,start_s,end_s\n");
        for a in &record.activities {
            csv.push_str(&format!("{},{},{}\n", a.activity_id, a.start_s, a.end_s));
        }
        atomic_write(&dir.join("activities.csv"), csv.as_bytes())?;
        Some(ActivitiesEntry {
            file: "activities.csv".into(),
            encoding: SPANS_CSV.into(),
            sample_rate_hz: None,
        })
    };
    let manifest = DatasetManifest {
        subject_id: record.subject_id.clone(),
        channels,
        labels: LabelsEntry {
            file: "labels.f32".into(),
            window_s: record.label_window_s,
            shift_s: record.label_shift_s,
            n_windows: record.hr_labels.len(),
        },
        activities,
    };
    manifest.validate(Some(&dir))?;
    atomic_write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Label windows a channel of `n_samples` at `rate_hz` supports.
pub fn windows_for(n_samples: usize, rate_hz: f64, window_s: f64, shift_s: f64) -> usize {
    window_count(n_samples, (window_s * rate_hz).round() as usize, (shift_s * rate_hz).round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth_generate;

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synth_generate(2, 1.0, 4).unwrap();
        for r in &recs {
            write_subject(dir.path(), r).unwrap();
        }
        assert_eq!(load_dataset(dir.path()).unwrap(), recs);
    }

    #[test]
    fn truncated_channel_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = &synth_generate(1, 1.0, 4).unwrap()[0];
        write_subject(dir.path(), rec).unwrap();
        let f = dir.path().join("S01/ppg.f32");
        let bytes = std::fs::read(&f).unwrap();
        std::fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("ppg"), "{err}");
    }

    #[test]
    fn window_count_consistency() {
        let rec = &synth_generate(1, 2.0, 4).unwrap()[0];
        let dir = tempfile::tempdir().unwrap();
        let m = write_subject(dir.path(), rec).unwrap();
        assert_eq!(m.expected_windows(), m.labels.n_windows);
        assert_eq!(windows_for(m.channels[0].n_samples, 64.0, 8.0, 2.0), m.labels.n_windows);
        let mut bad = m.clone();
        bad.labels.n_windows += 5;
        assert!(bad.validate(None).is_err());
    }

    #[test]
    fn sample_activities_to_spans() {
        let s = spans_from_samples(&[1.0, 1.0, f32::NAN, 2.0, 2.0, 2.0], 2.0);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].activity_id, s[0].start_s, s[0].end_s), (1, 0.0, 1.0));
        assert_eq!((s[1].activity_id, s[1].start_s, s[1].end_s), (2, 1.5, 3.0));
    }

    #[test]
    fn spans_csv_parse_errors_name_the_line() {
        let err = parse_spans("activity_id,start_s,end_s\n1,0,x\n", Path::new("a.csv")).unwrap_err();
        assert!(err.to_string().contains("a.csv:2"));
    }
}
