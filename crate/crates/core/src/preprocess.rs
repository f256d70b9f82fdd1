//! Raw recordings to model-ready windows: linear-interpolation resampling to
//! the model rate, 8 s / 2 s segmentation and per-channel z-scoring.
//!
//! Resampling is plain linear interpolation with no anti-alias filter. For
//! the 64→32 Hz and 125→32 Hz conversions used here that is adequate for the
//! 0.5–3 Hz heart-rate band, but it is not a polyphase resampler.

use crate::error::{PulseError, Result};
use crate::tensorcore::Tensor;

pub const MODEL_RATE_HZ: f64 = 32.0;
pub const WINDOW_S: f64 = 8.0;
pub const SHIFT_S: f64 = 2.0;

/// Standard deviation below which a channel is treated as constant.
pub const CONSTANT_STD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<f32>,
}

impl Channel {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivitySpan {
    pub activity_id: u32,
    pub start_s: f64,
    pub end_s: f64,
}

/// One subject's session.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    pub subject_id: String,
    /// PPG channels are named `ppg*`, accelerometer axes `acc_x`, `acc_y`, `acc_z`.
    pub channels: Vec<Channel>,
    /// One ground-truth BPM value per label window; non-finite marks a
    /// missing label.
    pub hr_labels: Vec<f32>,
    pub label_window_s: f64,
    pub label_shift_s: f64,
    pub activities: Vec<ActivitySpan>,
}

impl SignalRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PulseError::Data(format!("subject {}: {msg}", self.subject_id)));
        if self.channels.is_empty() {
            return bad("no channels".into());
        }
        for ch in &self.channels {
            if !(ch.sample_rate_hz > 0.0) {
                return bad(format!("channel {} has rate {}", ch.name, ch.sample_rate_hz));
            }
        }
        let durations: Vec<f64> = self.channels.iter().map(Channel::duration_s).collect();
        let (lo, hi) = durations
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if hi - lo > self.label_shift_s {
            return bad(format!("channel durations differ by {:.3} s", hi - lo));
        }
        if let Some(v) = self.hr_labels.iter().find(|v| v.is_finite() && !(**v > 0.0 && **v < 300.0)) {
            return bad(format!("heart-rate label {v} outside (0, 300) BPM"));
        }
        Ok(())
    }

    /// Indices of the PPG channels followed by the x, y, z accelerometer axes.
    pub fn model_channel_order(&self) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = self
            .channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.name.starts_with("ppg"))
            .map(|(i, _)| i)
            .collect();
        if order.is_empty() {
            return Err(PulseError::Data(format!("subject {}: no ppg channel", self.subject_id)));
        }
        for axis in ["acc_x", "acc_y", "acc_z"] {
            let i = self
                .channels
                .iter()
                .position(|c| c.name == axis)
                .ok_or_else(|| PulseError::Data(format!("subject {}: missing channel {axis}", self.subject_id)))?;
            order.push(i);
        }
        Ok(order)
    }

    /// Activity covering time `t_s`, if any.
    pub fn activity_at(&self, t_s: f64) -> Option<u32> {
        self.activities
            .iter()
            .find(|a| a.start_s <= t_s && t_s < a.end_s)
            .map(|a| a.activity_id)
    }
}

/// Segmented, z-scored windows with aligned targets. Windows are stored
/// flat as `[N, C, T]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowSet {
    pub channels: usize,
    pub window_len: usize,
    pub data: Vec<f32>,
    pub targets: Vec<f32>,
    pub subject_ids: Vec<String>,
    pub activity_ids: Vec<Option<u32>>,
    /// Position of each window on its subject's label grid.
    pub grid_index: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window_slice(&self, i: usize) -> &[f32] {
        let n = self.channels * self.window_len;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn window(&self, i: usize) -> Tensor {
        Tensor::from_vec(&[self.channels, self.window_len], self.window_slice(i).to_vec())
            .expect("window dims are nonzero")
    }

    /// All windows as one `[N, C, T]` tensor.
    pub fn as_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&[self.len(), self.channels, self.window_len], self.data.clone())
    }

    fn push_from(&mut self, other: &WindowSet, i: usize) {
        self.data.extend_from_slice(other.window_slice(i));
        self.targets.push(other.targets[i]);
        self.subject_ids.push(other.subject_ids[i].clone());
        self.activity_ids.push(other.activity_ids[i]);
        self.grid_index.push(other.grid_index[i]);
    }

    fn empty_like(&self) -> WindowSet {
        WindowSet {
            channels: self.channels,
            window_len: self.window_len,
            ..Default::default()
        }
    }

    /// Windows whose index satisfies `keep`, in order.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> WindowSet {
        let mut out = self.empty_like();
        for i in 0..self.len() {
            if keep(i) {
                out.push_from(self, i);
            }
        }
        out
    }

    pub fn for_subjects(&self, subjects: &[String]) -> WindowSet {
        self.select(|i| subjects.contains(&self.subject_ids[i]))
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.subject_ids {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }

    pub fn concat(sets: &[WindowSet]) -> Result<WindowSet> {
        let Some(first) = sets.iter().find(|s| !s.is_empty()) else {
            return Ok(sets.first().cloned().unwrap_or_default());
        };
        let mut out = first.empty_like();
        for s in sets.iter().filter(|s| !s.is_empty()) {
            if s.channels != out.channels || s.window_len != out.window_len {
                return Err(PulseError::dim("WindowSet::concat", "window channels", out.channels, s.channels));
            }
            for i in 0..s.len() {
                out.push_from(s, i);
            }
        }
        Ok(out)
    }
}

/// Linear interpolation onto a uniform `dst_hz` grid covering the same time
/// span. Output length is `floor(n · dst_hz / src_hz)`.
pub fn resample(samples: &[f32], src_hz: f64, dst_hz: f64) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(PulseError::InvalidArgument("resample of an empty signal".into()));
    }
    if !(src_hz > 0.0) || !(dst_hz > 0.0) {
        return Err(PulseError::InvalidArgument(format!("nonpositive rate: {src_hz} -> {dst_hz}")));
    }
    if src_hz < dst_hz {
        return Err(PulseError::InvalidArgument(format!("upsampling {src_hz} -> {dst_hz} Hz not supported")));
    }
    if src_hz == dst_hz {
        return Ok(samples.to_vec());
    }
    let n = samples.len();
    let n_out = (n as f64 * dst_hz / src_hz).floor() as usize;
    let ratio = src_hz / dst_hz;
    Ok((0..n_out)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let a = samples[i0.min(n - 1)] as f64;
            let b = samples[(i0 + 1).min(n - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect())
}

/// Per-channel z-score of a `[C, T]` window using the population standard
/// deviation. Constant channels become zeros.
pub fn zscore(window: &Tensor) -> Result<Tensor> {
    window.expect_rank("zscore", 2)?;
    let t = window.last_dim();
    let mut out = Vec::with_capacity(window.len());
    for c in 0..window.shape()[0] {
        let row = window.row(c);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        if std < CONSTANT_STD {
            out.extend(std::iter::repeat_n(0.0f32, t));
        } else {
            out.extend(row.iter().map(|&v| ((v as f64 - mean) / std) as f32));
        }
    }
    Tensor::new(window.shape().to_vec(), out)
}

/// Number of windows of `window` samples with hop `shift` that fit in `len`.
pub fn window_count(len: usize, window: usize, shift: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / shift + 1
    }
}

/// Cuts a record whose channels are all at `rate_hz` into z-scored windows.
/// Window `i` covers samples `[i·shift, i·shift + window)` and takes label
/// `i`; windows without a finite label are dropped.
pub fn segment(record: &SignalRecord, window_s: f64, shift_s: f64, rate_hz: f64) -> Result<WindowSet> {
    record.validate()?;
    if let Some(ch) = record.channels.iter().find(|c| c.sample_rate_hz != rate_hz) {
        return Err(PulseError::Data(format!(
            "subject {}: channel {} at {} Hz, expected {rate_hz} Hz",
            record.subject_id, ch.name, ch.sample_rate_hz
        )));
    }
    if (record.label_window_s - window_s).abs() > 1e-9 || (record.label_shift_s - shift_s).abs() > 1e-9 {
        return Err(PulseError::Data(format!(
            "subject {}: label grid {} s / {} s does not match segmentation {window_s} s / {shift_s} s",
            record.subject_id, record.label_window_s, record.label_shift_s
        )));
    }
    let order = record.model_channel_order()?;
    let win = (window_s * rate_hz).round() as usize;
    let hop = (shift_s * rate_hz).round() as usize;
    let len = order.iter().map(|&i| record.channels[i].samples.len()).min().unwrap_or(0);
    if len < win {
        return Err(PulseError::Data(format!(
            "subject {}: recording of {len} samples is shorter than one {win}-sample window",
            record.subject_id
        )));
    }
    let n = window_count(len, win, hop);
    let mut set = WindowSet {
        channels: order.len(),
        window_len: win,
        ..Default::default()
    };
    for i in 0..n.min(record.hr_labels.len()) {
        let label = record.hr_labels[i];
        if !label.is_finite() {
            continue;
        }
        let start = i * hop;
        let mut raw = Vec::with_capacity(order.len() * win);
        for &c in &order {
            raw.extend_from_slice(&record.channels[c].samples[start..start + win]);
        }
        let z = zscore(&Tensor::from_vec(&[order.len(), win], raw)?)?;
        set.data.extend_from_slice(z.data());
        set.targets.push(label);
        set.subject_ids.push(record.subject_id.clone());
        set.activity_ids.push(record.activity_at(i as f64 * shift_s + window_s / 2.0));
        set.grid_index.push(i);
    }
    Ok(set)
}

/// Resamples every channel of `record` to `rate_hz` and trims all channels
/// to the shortest resulting length.
pub fn resample_record(record: &SignalRecord, rate_hz: f64) -> Result<SignalRecord> {
    let mut channels = record
        .channels
        .iter()
        .map(|c| {
            Ok(Channel {
                name: c.name.clone(),
                sample_rate_hz: rate_hz,
                samples: resample(&c.samples, c.sample_rate_hz, rate_hz)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let len = channels.iter().map(|c| c.samples.len()).min().unwrap_or(0);
    for c in &mut channels {
        c.samples.truncate(len);
    }
    Ok(SignalRecord {
        channels,
        ..record.clone()
    })
}

/// Full pipeline: resample to 32 Hz, segment 8 s / 2 s, z-score.
pub fn prepare(record: &SignalRecord) -> Result<WindowSet> {
    let resampled = resample_record(record, MODEL_RATE_HZ)?;
    segment(&resampled, WINDOW_S, SHIFT_S, MODEL_RATE_HZ)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(len: usize, labels: Vec<f32>) -> SignalRecord {
        let ch = |name: &str, k: f32| Channel {
            name: name.into(),
            sample_rate_hz: 32.0,
            samples: (0..len).map(|i| (i as f32 * 0.1 * k).sin() + k).collect(),
        };
        SignalRecord {
            subject_id: "S1".into(),
            channels: vec![ch("ppg", 1.0), ch("acc_x", 2.0), ch("acc_y", 3.0), ch("acc_z", 4.0)],
            hr_labels: labels,
            label_window_s: 8.0,
            label_shift_s: 2.0,
            activities: vec![],
        }
    }

    #[test]
    fn resample_identity_and_constant() {
        let x: Vec<f32> = (0..50).map(|i| i as f32 * 0.3).collect();
        assert_eq!(resample(&x, 32.0, 32.0).unwrap(), x);
        let c = resample(&[2.5; 125], 125.0, 32.0).unwrap();
        assert_eq!(c.len(), 32);
        assert!(c.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn resample_errors() {
        assert!(resample(&[], 64.0, 32.0).is_err());
        assert!(resample(&[1.0], 0.0, 32.0).is_err());
        assert!(resample(&[1.0], 64.0, -1.0).is_err());
        assert!(resample(&[1.0], 16.0, 32.0).is_err());
    }

    #[test]
    fn sine_resample_close_to_analytic() {
        let src = 125.0;
        let x: Vec<f32> = (0..1250)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / src).sin() as f32)
            .collect();
        let y = resample(&x, src, 32.0).unwrap();
        assert_eq!(y.len(), 320);
        let max_dev = y
            .iter()
            .enumerate()
            .map(|(j, &v)| (v as f64 - (2.0 * std::f64::consts::PI * j as f64 / 32.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-3, "{max_dev}");
    }

    #[test]
    fn segment_boundaries() {
        assert_eq!(segment(&record(256, vec![70.0; 4]), 8.0, 2.0, 32.0).unwrap().len(), 1);
        let two = segment(&record(320, vec![70.0, 71.0]), 8.0, 2.0, 32.0).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.grid_index, vec![0, 1]);
        // second window starts 64 samples later: 192-sample overlap
        assert_eq!(window_count(320, 256, 64), 2);
        assert_eq!(window_count(600 * 32, 256, 64), 297);
        assert!(segment(&record(255, vec![70.0]), 8.0, 2.0, 32.0).is_err());
    }

    #[test]
    fn missing_labels_dropped() {
        let s = segment(&record(384, vec![70.0, f32::NAN, 72.0]), 8.0, 2.0, 32.0).unwrap();
        assert_eq!(s.targets, vec![70.0, 72.0]);
        assert_eq!(s.grid_index, vec![0, 2]);
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&Tensor::from_vec(&[2, 2], vec![0.0, 2.0, 5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(z.data(), &[-1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(segment(&record(256, vec![350.0]), 8.0, 2.0, 32.0).is_err());
    }
}
