//! Brute-force reference implementations and the self-test suites built on
//! them. The oracles are written as literal loops over the defining sums
//! and share no code with the kernels they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::check::{check_gradients, GRAD_STEPS};
use crate::error::Result;
use crate::harness::{loso_folds, postprocess_clip, BAND, HISTORY_LEN};
use crate::model::{forward, forward_backward, forward_scalar, init_params, mhca, AttentionMode, PulseConfig, PulseParams};
use crate::tensorcore::{conv1d_dilated, dense, matmul, ConvSpec, Tensor};

pub const ORACLE_TOL: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const ROW_SUM_TOL: f64 = 1e-5;

/// `y[m][t] = b[m] + Σ_i Σ_l x[l][t + (K-1)d - d·i - pad] · w[m][l][i]`,
/// zero outside the input.
pub fn naive_conv1d(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64], dilation: usize, padding: usize) -> Vec<Vec<f64>> {
    let t_in = x[0].len() as isize;
    let k = w[0][0].len();
    let span = ((k - 1) * dilation) as isize;
    let t_out = t_in + 2 * padding as isize - span;
    let mut y = vec![vec![0.0; t_out.max(0) as usize]; w.len()];
    for (m, ym) in y.iter_mut().enumerate() {
        for (t, yt) in ym.iter_mut().enumerate() {
            let mut s = b[m];
            for i in 0..k {
                for (l, xl) in x.iter().enumerate() {
                    let src = t as isize + span - (dilation * i) as isize - padding as isize;
                    if src >= 0 && src < t_in {
                        s += xl[src as usize] * w[m][l][i];
                    }
                }
            }
            *yt = s;
        }
    }
    y
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn naive_dense(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let mut y = naive_matmul(x, w);
    for row in &mut y {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

/// Multi-head attention straight from the definition. Returns the output
/// and the per-head weight matrices.
#[allow(clippy::too_many_arguments)]
pub fn naive_mhca(
    q: &[Vec<f64>],
    kv: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    wo: &[Vec<f64>],
    bo: &[f64],
    heads: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let d_model = wq[0].len();
    let dh = d_model / heads;
    let qp = naive_matmul(q, wq);
    let kp = naive_matmul(kv, wk);
    let vp = naive_matmul(kv, wv);
    let mut concat = vec![vec![0.0; d_model]; q.len()];
    let mut maps = Vec::new();
    for h in 0..heads {
        let mut a = vec![vec![0.0; kv.len()]; q.len()];
        for t in 0..q.len() {
            for s in 0..kv.len() {
                let mut dotp = 0.0;
                for j in 0..dh {
                    dotp += qp[t][h * dh + j] * kp[s][h * dh + j];
                }
                a[t][s] = dotp / (dh as f64).sqrt();
            }
            let max = a[t].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = a[t].iter().map(|v| (v - max).exp()).sum();
            for v in a[t].iter_mut() {
                *v = (*v - max).exp() / z;
            }
            for j in 0..dh {
                concat[t][h * dh + j] = (0..kv.len()).map(|s| a[t][s] * vp[s][h * dh + j]).sum();
            }
        }
        maps.push(a);
    }
    (naive_dense(&concat, wo, bo), maps)
}

pub fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.last_dim();
    t.data().chunks(cols).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn max_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    a.data()
        .iter()
        .zip(b.iter().flatten())
        .map(|(&x, y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Outcome of one self-test check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_error(name: &str, err: impl std::fmt::Display) -> Self {
        CheckResult::new(name, false, format!("error: {err}"))
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Worst absolute kernel-vs-oracle error over `cases` random conv cases.
pub fn conv_oracle_error(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let c_in: usize = rng.random_range(1..5);
        let c_out = rng.random_range(1..5);
        let k: usize = rng.random_range(1..6);
        let d: usize = rng.random_range(1..4);
        let pad = rng.random_range(0..((k - 1) * d + 2));
        let t_min = ((k - 1) * d + 1).saturating_sub(2 * pad).max(1);
        let t = rng.random_range(t_min..t_min + 20);
        let spec = ConvSpec {
            in_channels: c_in,
            out_channels: c_out,
            kernel_size: k,
            dilation: d,
            padding: pad,
        };
        let x = rand_tensor(&mut rng, &[c_in, t]);
        let w = rand_tensor(&mut rng, &[c_out, c_in, k]);
        let b = rand_tensor(&mut rng, &[c_out]);
        let y = conv1d_dilated(&x, &w, &b, &spec)?;
        let w_nested: Vec<Vec<Vec<f64>>> = w
            .data()
            .chunks(c_in * k)
            .map(|m| m.chunks(k).map(|l| l.iter().map(|&v| v as f64).collect()).collect())
            .collect();
        let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
        worst = worst.max(max_diff(&y, &naive_conv1d(&to_rows(&x), &w_nested, &b64, d, pad)));
    }
    Ok(worst)
}

pub fn matmul_oracle_error(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, k, m) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..8));
        let a = rand_tensor(&mut rng, &[n, k]);
        let b = rand_tensor(&mut rng, &[k, m]);
        worst = worst.max(max_diff(&matmul(&a, &b)?, &naive_matmul(&to_rows(&a), &to_rows(&b))));
    }
    Ok(worst)
}

pub fn dense_oracle_error(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, fi, fo) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..8));
        let x = rand_tensor(&mut rng, &[n, fi]);
        let w = rand_tensor(&mut rng, &[fi, fo]);
        let b = rand_tensor(&mut rng, &[fo]);
        let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
        worst = worst.max(max_diff(&dense(&x, &w, &b)?, &naive_dense(&to_rows(&x), &to_rows(&w), &b64)));
    }
    Ok(worst)
}

/// Compares the model's attention block, output and weights, against
/// [`naive_mhca`] on random tiny-config parameters and inputs.
pub fn mhca_oracle_error(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..cases {
        let mut cfg = PulseConfig::tiny();
        cfg.heads = [1, 2, 4][c % 3];
        let p = init_params(&cfg, seed.wrapping_add(c as u64))?;
        let f = cfg.feature_dim();
        let tq = rng.random_range(1..10);
        let tk = rng.random_range(1..12);
        let q = rand_tensor(&mut rng, &[tq, f]);
        let kv = rand_tensor(&mut rng, &[tk, f]);
        let (e, map) = mhca(&p, &q, &kv, true)?;
        let idx = p.index();
        let rows = |i: usize| to_rows(&p.tensors[i]);
        let bo: Vec<f64> = p.tensors[idx.out_bias].data().iter().map(|&v| v as f64).collect();
        let (e_ref, maps) = naive_mhca(
            &to_rows(&q),
            &to_rows(&kv),
            &rows(idx.query),
            &rows(idx.key),
            &rows(idx.value),
            &rows(idx.out_weight),
            &bo,
            cfg.heads,
        );
        worst = worst.max(max_diff(&e, &e_ref));
        for (h, a) in map.expect("captured").heads.iter().zip(&maps) {
            worst = worst.max(max_diff(h, a));
        }
    }
    Ok(worst)
}

/// Kernel-vs-oracle checks, each over `cases` random cases.
pub fn oracle_suite(cases: usize, seed: u64) -> Vec<CheckResult> {
    let checks: [(&str, fn(usize, u64) -> Result<f64>); 4] = [
        ("oracle conv1d_dilated", conv_oracle_error),
        ("oracle matmul", matmul_oracle_error),
        ("oracle dense", dense_oracle_error),
        ("oracle mhca", mhca_oracle_error),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, (name, f))| match f(cases, seed.wrapping_add(i as u64)) {
            Ok(err) => CheckResult::new(
                name,
                err <= ORACLE_TOL,
                format!("{cases} cases, max abs error {err:.2e} (tol {ORACLE_TOL:.0e})"),
            ),
            Err(e) => CheckResult::from_error(name, e),
        })
        .collect()
}


/// Moves freshly initialized parameters off the symmetric starting point:
/// zero biases become small random values and unit gains are perturbed.
/// With all-zero biases, ReLU inputs that see only dead units are exactly
/// zero, where the one-sided analytic derivative and a central difference
/// legitimately disagree.
pub fn generic_point(mut params: PulseParams, rng: &mut ChaCha8Rng) -> PulseParams {
    let specs = params.layout().specs.clone();
    for (t, s) in params.tensors.iter_mut().zip(&specs) {
        if s.init.bound().is_none() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    params
}

/// Central finite differences over every parameter element of `cfg` in
/// f64, on one random window. Returns the worst relative error and the
/// layer it occurred in.
pub fn gradient_check(cfg: &PulseConfig, seed: u64) -> Result<(f64, String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let p64: PulseParams<f64> = generic_point(init_params(cfg, seed)?, &mut rng).cast();
    let window: Tensor<f64> = Tensor::from_fn(&[cfg.input_channels(), cfg.window_len], |_| rng.random_range(-2.0..2.0));
    let (_, grads) = forward_backward(&p64, &window, 1.0)?;
    let layout = p64.layout_arc();
    let mut tensors = p64.tensors.clone();
    let report = check_gradients(&mut tensors, &grads.into_inner(), &GRAD_STEPS, |t| {
        PulseParams::from_tensors(layout.clone(), t.to_vec())
            .and_then(|p| forward_scalar(&p, &window))
            .unwrap_or(f64::NAN)
    });
    let worst = report
        .worst
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .map(|e| (e.rel_err, p64.layout().specs[e.param].name.clone()))
        .unwrap_or((0.0, String::new()));
    Ok((worst.0, worst.1, report.checked))
}

pub fn gradient_suite(seed: u64) -> Vec<CheckResult> {
    AttentionMode::ALL
        .iter()
        .map(|&mode| {
            let name = format!("gradient {mode:?} (tiny config, f64)");
            match gradient_check(&PulseConfig::tiny().with_mode(mode), seed) {
                Ok((err, worst_at, n)) => CheckResult::new(
                    &name,
                    err < GRAD_TOL,
                    format!("{n} elements, max relative error {err:.2e} at {worst_at} (tol {GRAD_TOL:.0e})"),
                ),
                Err(e) => CheckResult::from_error(&name, e),
            }
        })
        .collect()
}

/// Worst `|row sum - 1|` of captured attention maps over `windows` random
/// windows, cycling through the attention modes.
pub fn attention_row_error(windows: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<PulseParams> = AttentionMode::ALL
        .iter()
        .map(|&m| init_params(&PulseConfig::tiny().with_mode(m), seed))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for i in 0..windows {
        let p = &params[i % params.len()];
        let cfg = p.config();
        let scale = rng.random_range(0.1..10.0);
        let w = Tensor::from_fn(&[cfg.input_channels(), cfg.window_len], |_| rng.random_range(-scale..scale));
        let (_, map) = forward(p, &w, true)?;
        worst = worst.max(map.expect("captured").max_row_sum_error());
    }
    Ok(worst)
}

/// Largest violation of the clip band and of in-band identity over random
/// streams. Zero means the property holds.
pub fn clip_violation(streams: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..streams {
        let n: usize = rng.random_range(1..60);
        let base = rng.random_range(40.0..180.0);
        let jump = rng.random_range(0.0..0.5);
        let preds: Vec<f32> = (0..n)
            .map(|_| (base * (1.0 + rng.random_range(-jump..jump))) as f32)
            .collect();
        let out = postprocess_clip(&preds);
        if out[0] != preds[0] {
            worst = worst.max((out[0] - preds[0]).abs() as f64);
        }
        for t in 1..n {
            let hist = &out[t.saturating_sub(HISTORY_LEN)..t];
            let a = hist.iter().map(|&v| v as f64).sum::<f64>() / hist.len() as f64;
            let excess = (out[t] as f64 - a).abs() - (BAND * a + 1e-9);
            // f32 storage of outputs costs up to half an ulp at the band edge
            let ulp = f32::EPSILON as f64 * a;
            worst = worst.max(excess - ulp);
            let inside = (preds[t] as f64 - a).abs() <= BAND * a - ulp;
            if inside && out[t] != preds[t] {
                worst = worst.max((out[t] - preds[t]).abs() as f64);
            }
        }
    }
    worst.max(0.0)
}

pub fn property_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(match attention_row_error(200, seed) {
        Ok(e) => CheckResult::new(
            "attention rows sum to one",
            e <= ROW_SUM_TOL,
            format!("200 windows, max |row sum - 1| {e:.2e}"),
        ),
        Err(e) => CheckResult::from_error("attention rows sum to one", e),
    });
    let v = clip_violation(2000, seed);
    out.push(CheckResult::new(
        "post-processing clip band",
        v == 0.0,
        format!("2000 random streams, max violation {v:.2e}"),
    ));
    let subjects: Vec<String> = (1..=15).map(|i| format!("S{i:02}")).collect();
    out.push(match loso_folds(&subjects, seed) {
        Ok(folds) => {
            let tests: std::collections::BTreeSet<_> = folds.iter().map(|f| f.test.clone()).collect();
            let disjoint = folds.iter().all(|f| {
                !f.train.contains(&f.test)
                    && !f.validation.contains(&f.test)
                    && f.validation.iter().all(|v| !f.train.contains(v))
            });
            CheckResult::new(
                "LOSO folds",
                folds.len() == 15 && tests.len() == 15 && disjoint,
                format!("{} iterations, {} distinct test subjects, disjoint: {disjoint}", folds.len(), tests.len()),
            )
        }
        Err(e) => CheckResult::from_error("LOSO folds", e),
    });
    out
}

/// Verifies a trained weight set: every tensor finite (naming the layer of
/// the first offender) and a clean forward pass on a random window.
pub fn model_check(params: &PulseParams, seed: u64) -> CheckResult {
    let name = "model weights";
    for (i, (t, s)) in params.tensors.iter().zip(&params.layout().specs).enumerate() {
        if !t.all_finite() {
            let layer = params.layout().layer_of(i);
            return CheckResult::new(name, false, format!("non-finite values in layer {layer} ({})", s.name));
        }
    }
    let cfg = params.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(&[cfg.input_channels(), cfg.window_len], |_| rng.random_range(-2.0..2.0));
    match forward(params, &w, false) {
        Ok((hr, _)) if hr.is_finite() => CheckResult::new(
            name,
            true,
            format!("{} tensors finite, forward pass gives {hr:.2} BPM", params.tensors.len()),
        ),
        Ok((hr, _)) => CheckResult::new(name, false, format!("forward pass produced {hr}")),
        Err(e) => CheckResult::from_error(name, e),
    }
}

/// All suites; `model` additionally checks a trained weight set.
pub fn run_selftest(model: Option<&PulseParams>, seed: u64) -> Vec<CheckResult> {
    let mut out = oracle_suite(100, seed);
    out.extend(gradient_suite(seed));
    out.extend(property_suite(seed));
    if let Some(p) = model {
        out.push(model_check(p, seed));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_conv_hand_example() {
        let y = naive_conv1d(&[vec![1.0, 2.0, 3.0, 4.0]], &[vec![vec![1.0, 1.0]]], &[0.0], 2, 0);
        assert_eq!(y, vec![vec![4.0, 6.0]]);
    }

    #[test]
    fn naive_matmul_hand_example() {
        let c = naive_matmul(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[vec![5.0], vec![6.0]]);
        assert_eq!(c, vec![vec![17.0], vec![39.0]]);
    }

    #[test]
    fn naive_mhca_uniform_scores() {
        // zero query projection gives uniform weights over keys
        let wz = vec![vec![0.0; 2]; 2];
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let kv = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let (e, maps) = naive_mhca(&[vec![1.0, 1.0]], &kv, &wz, &eye, &eye, &eye, &[0.0, 0.0], 1);
        assert_eq!(maps[0], vec![vec![0.5, 0.5]]);
        assert_eq!(e, vec![vec![2.0, 3.0]]);
    }

    #[test]
    fn clip_property_holds() {
        assert_eq!(clip_violation(200, 1), 0.0);
    }

    #[test]
    fn corrupted_weights_name_the_layer() {
        let mut p = init_params(&PulseConfig::tiny(), 0).unwrap();
        let i = p.layout().specs.iter().position(|s| s.name == "ppg.block1.conv2.weight").unwrap();
        p.tensors[i].data_mut()[0] = f32::NAN;
        let r = model_check(&p, 0);
        assert!(!r.passed);
        assert!(r.detail.contains("ppg.block1.conv2"), "{}", r.detail);
    }
}
