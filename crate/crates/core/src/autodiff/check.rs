//! Central finite-difference gradient checking.

use crate::tensorcore::Tensor;

/// Denominator floor for [`relative_error`]: gradients smaller than this are
/// compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Step sizes tried per element; the best agreement wins.
pub const GRAD_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Worst entry per parameter tensor, in parameter order.
    pub worst: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<&GradCheckEntry> {
        self.worst.iter().filter(|e| e.rel_err >= tol).collect()
    }
}

/// Central difference `(f(p + eps) - f(p - eps)) / 2eps` for element `j`
/// of tensor `p`.
pub fn central_difference(
    params: &mut [Tensor<f64>],
    p: usize,
    j: usize,
    eps: f64,
    f: &mut impl FnMut(&[Tensor<f64>]) -> f64,
) -> f64 {
    let orig = params[p].data()[j];
    params[p].data_mut()[j] = orig + eps;
    let up = f(params);
    params[p].data_mut()[j] = orig - eps;
    let down = f(params);
    params[p].data_mut()[j] = orig;
    (up - down) / (2.0 * eps)
}

/// Compares `analytic` against central differences for every element of
/// every tensor in `params`. A `None` analytic gradient stands for zero.
///
/// Each element is tried at every step in `steps` and scored by its best
/// agreement. Piecewise-linear units make a single step unreliable: a large
/// step can straddle a ReLU corner, a small one drowns tiny gradients in
/// rounding noise. A wrong derivative disagrees at every step.
pub fn check_gradients(
    params: &mut [Tensor<f64>],
    analytic: &[Option<Tensor<f64>>],
    steps: &[f64],
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for p in 0..params.len() {
        let mut worst: Option<GradCheckEntry> = None;
        for j in 0..params[p].len() {
            let a = analytic[p].as_ref().map_or(0.0, |g| g.data()[j]);
            let (numeric, rel_err) = steps
                .iter()
                .map(|&eps| {
                    let n = central_difference(params, p, j, eps, &mut f);
                    (n, relative_error(a, n))
                })
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("at least one step");
            report.checked += 1;
            if worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                worst = Some(GradCheckEntry {
                    param: p,
                    index: j,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
        report.worst.extend(worst);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut params = vec![Tensor::from_vec(&[2], vec![1.0f32, -2.0]).unwrap().cast::<f64>()];
        let analytic = vec![Some(params[0].map(|v| 2.0 * v))];
        let r = check_gradients(&mut params, &analytic, &[1e-3], |p| p[0].data().iter().map(|v| v * v).sum());
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_err() < 1e-9);
    }

    #[test]
    fn wrong_gradient_detected() {
        let mut params = vec![Tensor::<f64>::filled(&[1], 3.0)];
        let analytic = vec![Some(Tensor::filled(&[1], 1.0))];
        let r = check_gradients(&mut params, &analytic, &[1e-3], |p| p[0].data()[0] * p[0].data()[0]);
        assert_eq!(r.failures(1e-4).len(), 1);
    }

    #[test]
    fn step_sweep_survives_a_corner() {
        // |x| near its corner: the wide step straddles it, the narrow one does not
        let mut params = vec![Tensor::<f64>::filled(&[1], 1e-4)];
        let analytic = vec![Some(Tensor::filled(&[1], 1.0))];
        let f = |p: &[Tensor<f64>]| p[0].data()[0].abs();
        assert!(check_gradients(&mut params, &analytic, &[1e-3], f).max_rel_err() > 0.5);
        assert!(check_gradients(&mut params, &analytic, &[1e-3, 1e-6], f).max_rel_err() < 1e-8);
    }
}
