//! Synthetic subjects: a smooth heart-rate walk driving a PPG waveform,
//! activity-dependent accelerometer oscillations, and motion artifacts
//! leaking from the accelerometer into the PPG.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{PulseError, Result};
use crate::preprocess::{window_count, ActivitySpan, Channel, SignalRecord, SHIFT_S, WINDOW_S};

pub const PPG_RATE_HZ: f64 = 64.0;
pub const ACC_RATE_HZ: f64 = 32.0;
pub const HR_MIN: f64 = 50.0;
pub const HR_MAX: f64 = 160.0;

struct Activity {
    id: u32,
    hr: (f64, f64),
    step_hz: f64,
    amplitude: f64,
}

const ACTIVITIES: [Activity; 5] = [
    Activity { id: 0, hr: (62.0, 80.0), step_hz: 0.0, amplitude: 0.0 },
    Activity { id: 1, hr: (90.0, 110.0), step_hz: 1.8, amplitude: 0.6 },
    Activity { id: 2, hr: (110.0, 135.0), step_hz: 1.3, amplitude: 0.4 },
    Activity { id: 3, hr: (100.0, 125.0), step_hz: 1.6, amplitude: 0.8 },
    Activity { id: 4, hr: (135.0, 155.0), step_hz: 2.6, amplitude: 1.1 },
];

/// Activity indices ordered by exertion. Schedules only step between
/// neighbours in this order, so the heart rate never jumps from rest to run.
const INTENSITY_ORDER: [usize; 5] = [0, 1, 3, 2, 4];

/// Relaxation time of the heart rate towards the activity target, seconds.
const HR_TAU_S: f64 = 45.0;
/// Diffusion of the heart-rate walk, BPM per sqrt(second).
const HR_SIGMA: f64 = 1.2;

/// A synthetic record plus the heart-rate trace it was generated from,
/// sampled at [`PPG_RATE_HZ`].
#[derive(Clone, Debug)]
pub struct SynthSubject {
    pub record: SignalRecord,
    pub hr_trace: Vec<f64>,
}

pub fn subject_id(i: usize) -> String {
    format!("S{:02}", i + 1)
}

/// Generates subject `index` of a synthetic cohort. Each subject draws from
/// its own ChaCha8 stream so subjects do not depend on cohort size.
pub fn synth_subject(index: usize, minutes: f64, seed: u64) -> Result<SynthSubject> {
    if !(minutes * 60.0 >= WINDOW_S) {
        return Err(PulseError::InvalidArgument(format!(
            "synthetic session of {minutes} min is shorter than one {WINDOW_S} s window"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let n_ppg = (minutes * 60.0 * PPG_RATE_HZ).round() as usize;
    let duration = n_ppg as f64 / PPG_RATE_HZ;

    // activity schedule
    let mut spans = Vec::new();
    let mut t = 0.0;
    let mut level = rng.random_range(0..INTENSITY_ORDER.len());
    while t < duration {
        let a = INTENSITY_ORDER[level];
        let len = rng.random_range(60.0..180.0);
        let end = (t + len).min(duration);
        spans.push((a, t, end, rng.random_range(ACTIVITIES[a].hr.0..ACTIVITIES[a].hr.1)));
        t = end;
        level = match level {
            0 => 1,
            l if l + 1 == INTENSITY_ORDER.len() => l - 1,
            l if rng.random_bool(0.5) => l + 1,
            l => l - 1,
        };
    }

    let subject_offset = rng.random_range(-6.0..6.0);
    let artifact_gain = rng.random_range(0.3..0.7);
    let harmonic = rng.random_range(0.2..0.5);
    let harmonic_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let cadence = rng.random_range(0.9..1.1);
    let axis_gain = [1.0, rng.random_range(0.4..0.9), rng.random_range(0.3..0.7)];
    let axis_phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));

    let activity_at = |t: f64| spans.iter().find(|s| t < s.2).unwrap_or(spans.last().expect("nonempty"));

    // heart rate and PPG at 64 Hz
    let dt = 1.0 / PPG_RATE_HZ;
    let mut hr = (spans[0].3 + subject_offset).clamp(HR_MIN, HR_MAX);
    let mut phase = 0.0f64;
    let mut hr_trace = Vec::with_capacity(n_ppg);
    let mut ppg = Vec::with_capacity(n_ppg);
    let mut step_phase = 0.0f64;
    let mut step_trace = Vec::with_capacity(n_ppg);
    for k in 0..n_ppg {
        let t = k as f64 * dt;
        let span = activity_at(t);
        let target = (span.3 + subject_offset).clamp(HR_MIN, HR_MAX);
        hr += (target - hr) * dt / HR_TAU_S + HR_SIGMA * dt.sqrt() * unit.sample(&mut rng);
        hr = hr.clamp(HR_MIN, HR_MAX);
        hr_trace.push(hr);
        phase += std::f64::consts::TAU * hr / 60.0 * dt;
        let act = &ACTIVITIES[span.0];
        step_phase += std::f64::consts::TAU * act.step_hz * cadence * dt;
        step_trace.push((step_phase, act.amplitude));

        let dynamic = dynamic_acc(step_phase, act.amplitude, &axis_gain, &axis_phase);
        let magnitude = (dynamic[0].powi(2) + dynamic[1].powi(2) + (1.0 + dynamic[2]).powi(2)).sqrt() - 1.0;
        let value = phase.sin()
            + harmonic * (2.0 * phase + harmonic_phase).sin()
            + 0.15 * (std::f64::consts::TAU * 0.25 * t).sin()
            + artifact_gain * magnitude
            + 0.1 * unit.sample(&mut rng);
        ppg.push(value as f32);
    }

    // accelerometer at 32 Hz, sharing the 64 Hz step phase
    let stride = (PPG_RATE_HZ / ACC_RATE_HZ) as usize;
    let mut acc: [Vec<f32>; 3] = Default::default();
    for &(sp, amp) in step_trace.iter().step_by(stride) {
        let d = dynamic_acc(sp, amp, &axis_gain, &axis_phase);
        let gravity = [0.0, 0.0, 1.0];
        for a in 0..3 {
            acc[a].push((gravity[a] + d[a] + 0.03 * unit.sample(&mut rng)) as f32);
        }
    }

    let win = (WINDOW_S * PPG_RATE_HZ) as usize;
    let hop = (SHIFT_S * PPG_RATE_HZ) as usize;
    let hr_labels = (0..window_count(n_ppg, win, hop))
        .map(|i| (hr_trace[i * hop..i * hop + win].iter().sum::<f64>() / win as f64) as f32)
        .collect();

    let [acc_x, acc_y, acc_z] = acc;
    let ch = |name: &str, rate: f64, samples: Vec<f32>| Channel {
        name: name.into(),
        sample_rate_hz: rate,
        samples,
    };
    Ok(SynthSubject {
        record: SignalRecord {
            subject_id: subject_id(index),
            channels: vec![
                ch("ppg", PPG_RATE_HZ, ppg),
                ch("acc_x", ACC_RATE_HZ, acc_x),
                ch("acc_y", ACC_RATE_HZ, acc_y),
                ch("acc_z", ACC_RATE_HZ, acc_z),
            ],
            hr_labels,
            label_window_s: WINDOW_S,
            label_shift_s: SHIFT_S,
            activities: spans
                .iter()
                .map(|&(a, start_s, end_s, _)| ActivitySpan {
                    activity_id: ACTIVITIES[a].id,
                    start_s,
                    end_s,
                })
                .collect(),
        },
        hr_trace,
    })
}

fn dynamic_acc(step_phase: f64, amplitude: f64, gain: &[f64; 3], phase: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| {
        amplitude * gain[a] * ((step_phase + phase[a]).sin() + 0.3 * (2.0 * step_phase + phase[a]).sin())
    })
}

pub fn synth_generate(n_subjects: usize, minutes: f64, seed: u64) -> Result<Vec<SignalRecord>> {
    if n_subjects == 0 {
        return Err(PulseError::InvalidArgument("synthetic cohort needs at least one subject".into()));
    }
    (0..n_subjects).map(|i| synth_subject(i, minutes, seed).map(|s| s.record)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::prepare;

    #[test]
    fn seeded_and_bounded() {
        let a = synth_subject(0, 3.0, 9).unwrap();
        let b = synth_subject(0, 3.0, 9).unwrap();
        assert_eq!(a.record, b.record);
        assert!(a.hr_trace.iter().all(|&h| (HR_MIN..=HR_MAX).contains(&h)));
        assert_ne!(synth_subject(1, 3.0, 9).unwrap().record.channels[0], a.record.channels[0]);
    }

    #[test]
    fn labels_are_window_means() {
        let s = synth_subject(2, 2.0, 1).unwrap();
        for (i, &l) in s.record.hr_labels.iter().enumerate() {
            let m = s.hr_trace[i * 128..i * 128 + 512].iter().sum::<f64>() / 512.0;
            assert!((l as f64 - m).abs() <= 1e-6 * m, "{l} vs {m}");
        }
    }

    #[test]
    fn twenty_minutes_gives_597_windows() {
        let s = synth_subject(0, 20.0, 0).unwrap();
        assert_eq!(s.record.hr_labels.len(), 597);
        assert_eq!(prepare(&s.record).unwrap().len(), 597);
    }
}
