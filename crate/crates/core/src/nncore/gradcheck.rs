//! Central finite-difference verification of analytic gradients.
//!
//! The checker works on a flat f64 parameter vector: callers provide a loss
//! closure that rebuilds their computation from the vector, plus the analytic
//! gradient to verify. Layer-by-layer oracle tests live here so every
//! backward pass in the kernel is checked against the same yardstick.

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Tolerance floor and the worst offender found by a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Compare `analytic` against central differences of `loss_at` evaluated
/// around the current `theta`. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8).
pub fn finite_difference_check(
    theta: &mut [f64],
    analytic: &[f64],
    mut loss_at: impl FnMut(&[f64]) -> f64,
    h: f64,
) -> GradCheck {
    assert_eq!(theta.len(), analytic.len(), "gradient length must match");
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + h;
        let up = loss_at(theta);
        theta[i] = saved - h;
        let down = loss_at(theta);
        theta[i] = saved;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst.max_rel_err {
            worst = GradCheck {
                max_rel_err: rel,
                worst_index: i,
                analytic_at_worst: analytic[i],
                numeric_at_worst: numeric,
            };
        }
    }
    worst
}
