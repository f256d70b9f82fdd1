use pulse_core::model::{init_params, AttentionMode, PulseConfig};
use pulse_core::selftest::{gradient_check, GRAD_TOL};
use pulse_core::tensorcore::Tensor;
use pulse_core::training::spot_check_gradients;

#[test]
fn ppg_only_model_matches_finite_differences() {
    let (rel, layer, n) = gradient_check(&PulseConfig::tiny().with_mode(AttentionMode::MhsaPpgOnly), 21).unwrap();
    assert!(n > 1000);
    assert!(rel < GRAD_TOL, "{rel:e} at {layer}");
}

#[test]
fn spot_check_on_fresh_weights() {
    let cfg = PulseConfig::tiny();
    let params = init_params(&cfg, 4).unwrap();
    let window = Tensor::from_fn(&[cfg.input_channels(), cfg.window_len], |i| ((i * 37 % 101) as f32 / 50.0) - 1.0);
    let worst = spot_check_gradients(&params, &window, 4, GRAD_TOL).unwrap();
    assert!(worst < GRAD_TOL);
}
