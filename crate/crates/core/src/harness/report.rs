//! MAE tables overall, per subject and per activity.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{PulseError, Result};
use crate::fsutil::atomic_write;

pub const UNKNOWN_ACTIVITY: &str = "unknown";

#[derive(Clone, Debug, PartialEq)]
pub struct MaeRow {
    pub key: String,
    pub n_windows: usize,
    pub mae_bpm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaeTable {
    pub overall: MaeRow,
    pub per_subject: Vec<MaeRow>,
    pub per_activity: Vec<MaeRow>,
}

fn rows(groups: BTreeMap<String, (usize, f64)>) -> Vec<MaeRow> {
    groups
        .into_iter()
        .map(|(key, (n, sum))| MaeRow {
            key,
            n_windows: n,
            mae_bpm: sum / n as f64,
        })
        .collect()
}

fn csv(rows: &[MaeRow]) -> String {
    let mut s = String::from("key,n_windows,mae_bpm\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6}\n", r.key, r.n_windows, r.mae_bpm));
    }
    s
}

pub fn report(preds: &[f32], targets: &[f32], subjects: &[String], activities: &[Option<u32>]) -> Result<MaeTable> {
    let n = preds.len();
    if n == 0 {
        return Err(PulseError::Data("report over zero windows".into()));
    }
    if targets.len() != n || subjects.len() != n || activities.len() != n {
        return Err(PulseError::InvalidArgument(format!(
            "report inputs disagree in length: {n} predictions, {} targets, {} subjects, {} activities",
            targets.len(),
            subjects.len(),
            activities.len()
        )));
    }
    let mut by_subject = BTreeMap::new();
    let mut by_activity = BTreeMap::new();
    let mut total = 0.0;
    for i in 0..n {
        let e = (preds[i] as f64 - targets[i] as f64).abs();
        total += e;
        let s = by_subject.entry(subjects[i].clone()).or_insert((0, 0.0));
        s.0 += 1;
        s.1 += e;
        let key = activities[i].map_or_else(|| UNKNOWN_ACTIVITY.to_string(), |a| a.to_string());
        let a = by_activity.entry(key).or_insert((0, 0.0));
        a.0 += 1;
        a.1 += e;
    }
    Ok(MaeTable {
        overall: MaeRow {
            key: "overall".into(),
            n_windows: n,
            mae_bpm: total / n as f64,
        },
        per_subject: rows(by_subject),
        per_activity: rows(by_activity),
    })
}

impl MaeTable {
    pub fn overall_csv(&self) -> String {
        csv(std::slice::from_ref(&self.overall))
    }

    pub fn per_subject_csv(&self) -> String {
        csv(&self.per_subject)
    }

    pub fn per_activity_csv(&self) -> String {
        csv(&self.per_activity)
    }

    /// Writes `mae_overall.csv`, `mae_per_subject.csv` and `mae_per_activity.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join("mae_overall.csv"), self.overall_csv().as_bytes())?;
        atomic_write(&dir.join("mae_per_subject.csv"), self.per_subject_csv().as_bytes())?;
        atomic_write(&dir.join("mae_per_activity.csv"), self.per_activity_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_activity_hand_example() {
        let t = report(&[12.0, 24.0], &[10.0, 20.0], &["a".into(), "a".into()], &[Some(1), Some(2)]).unwrap();
        assert_eq!(t.per_activity[0].mae_bpm, 2.0);
        assert_eq!(t.per_activity[1].mae_bpm, 4.0);
        assert_eq!(t.overall.mae_bpm, 3.0);
    }

    #[test]
    fn overall_is_weighted_subject_mean() {
        let subj: Vec<String> = ["a", "b", "b", "c"].iter().map(|s| s.to_string()).collect();
        let t = report(&[1.0, 5.0, 2.0, 9.0], &[0.0; 4], &subj, &[None; 4]).unwrap();
        let w: f64 = t.per_subject.iter().map(|r| r.mae_bpm * r.n_windows as f64).sum::<f64>() / 4.0;
        assert!((w - t.overall.mae_bpm).abs() < 1e-12);
        assert_eq!(t.per_activity[0].key, UNKNOWN_ACTIVITY);
    }

    #[test]
    fn csv_header() {
        let t = report(&[1.0], &[1.0], &["s".into()], &[Some(0)]).unwrap();
        assert_eq!(t.overall_csv(), "key,n_windows,mae_bpm\noverall,1,0.000000\n");
    }

    #[test]
    fn length_mismatch() {
        assert!(report(&[1.0], &[], &[], &[]).is_err());
    }
}
