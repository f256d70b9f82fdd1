use serde::{Deserialize, Serialize};

use crate::error::{PulseError, Result};
use crate::tensorcore::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter tensor plus the step
/// counter. Moments are kept in f64.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. `grads[i] == None` is treated as a zero
/// gradient for parameter `i`.
pub fn adam_step(params: &mut [Tensor], grads: &[Option<Tensor>], state: &mut AdamState) -> Result<()> {
    if params.len() != state.shapes.len() || grads.len() != params.len() {
        return Err(PulseError::dim("adam_step", "parameter count", state.shapes.len(), params.len()));
    }
    for (i, p) in params.iter().enumerate() {
        if p.shape() != state.shapes[i].as_slice() {
            return Err(PulseError::dim("adam_step", "parameter elements", state.m[i].len(), p.len()));
        }
        if let Some(g) = &grads[i] {
            if g.shape() != p.shape() {
                return Err(PulseError::dim("adam_step", "gradient elements", p.len(), g.len()));
            }
        }
    }

    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = grads[i].as_ref().map(|g| g.data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j] as f64);
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = vec![Tensor::from_vec(&[3], vec![0.3, -1.0, 7.0]).unwrap()];
        let before = params.clone();
        let mut st = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            adam_step(&mut params, &[Some(Tensor::zeros(&[3]))], &mut st).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Tensor::scalar(1.0f32)];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &[Some(Tensor::scalar(1.0))], &mut st).unwrap();
        // m_hat / sqrt(v_hat) = 1 on the first step
        let delta = params[0].data()[0] as f64 - 1.0;
        assert!((delta + 0.0005).abs() < 1e-7, "delta {delta}");
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        assert!(adam_step(&mut params, &[Some(Tensor::zeros(&[3]))], &mut st).is_err());
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut params = vec![Tensor::from_fn(&[4], |i| i as f32 * 0.1)];
            let mut st = AdamState::new(AdamConfig::default(), &params);
            for k in 0..20 {
                let g = Tensor::from_fn(&[4], |i| ((i + k) as f32 * 0.7).sin());
                adam_step(&mut params, &[Some(g)], &mut st).unwrap();
            }
            params
        };
        let (a, b) = (run(), run());
        let bits = |p: &[Tensor]| p[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
