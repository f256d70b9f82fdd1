//! Clamping each estimate to ±10% of the mean of the previous outputs.

pub const HISTORY_LEN: usize = 10;
pub const BAND: f64 = 0.1;

/// Rolling clipper over one subject's session. The history holds clipped
/// outputs, not raw predictions.
#[derive(Clone, Debug, Default)]
pub struct HrStream {
    history: std::collections::VecDeque<f64>,
}

impl HrStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mean of up to [`HISTORY_LEN`] previous outputs.
    pub fn reference(&self) -> Option<f64> {
        (!self.history.is_empty()).then(|| self.history.iter().sum::<f64>() / self.history.len() as f64)
    }

    pub fn push(&mut self, pred: f64) -> f64 {
        let out = match self.reference() {
            Some(a) => pred.clamp((1.0 - BAND) * a, (1.0 + BAND) * a),
            None => pred,
        };
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(out);
        out
    }
}

/// Clips a stream of predictions given in session order.
pub fn postprocess_clip(preds: &[f32]) -> Vec<f32> {
    let mut s = HrStream::new();
    preds.iter().map(|&p| s.push(p as f64) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_value_passes_through() {
        assert_eq!(postprocess_clip(&[72.0]), vec![72.0]);
    }

    #[test]
    fn clamps_to_upper_band() {
        let mut p = vec![70.0; 10];
        p.push(80.0);
        p.push(69.0);
        let out = postprocess_clip(&p);
        assert!((out[10] - 77.0).abs() < 1e-5);
        // history now averages 70.7, so 69 is inside the band
        assert_eq!(out[11], 69.0);
    }

    #[test]
    fn history_uses_outputs() {
        let out = postprocess_clip(&[100.0, 200.0, 200.0]);
        assert!((out[1] - 110.0).abs() < 1e-4);
        assert!((out[2] - 115.5).abs() < 1e-4);
    }
}
