//! One-sided Huber penalty for a single linear inequality.
//!
//! The scalar kernel is
//!
//! ```text
//! p_delta(s) = s                     if s > delta
//!              (s + delta)^2/(4 delta)  if -delta <= s <= delta  (delta > 0)
//!              0                     if s < -delta
//! ```
//!
//! applied to the constraint residual s = <a,x> - b and divided by ||a||:
//! h_delta(x; a, b) = p_delta(<a,x> - b) / ||a||. For delta = 0 the kernel
//! degenerates to max(s, 0), which makes h_0 the Euclidean distance to the
//! halfspace. The function is convex, once continuously differentiable for
//! delta > 0, and its gradient norm never exceeds 1.

use crate::error::{Error, Result};
use crate::model::{ConstraintSystem, Objective};
use crate::vecmath::{dot, norm, scale};

/// One linear inequality `<a,x> <= b` with the norm of `a` cached.
///
/// The cached norm is used by every penalty formula, so value and gradient
/// stay mutually consistent regardless of rounding in a recomputed norm.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceConstraint {
    a: Vec<f64>,
    b: f64,
    norm_a: f64,
}

impl HalfspaceConstraint {
    /// Builds the constraint, caching `||a||`. Fails on a zero normal.
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        let norm_a = norm(&a);
        if norm_a <= 0.0 || !norm_a.is_finite() {
            return Err(Error::ZeroNormal);
        }
        Ok(Self { a, b, norm_a })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn norm_a(&self) -> f64 {
        self.norm_a
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Signed residual `<a,x> - b`; nonpositive means satisfied.
    pub fn residual(&self, x: &[f64]) -> f64 {
        assert_eq!(
            x.len(),
            self.a.len(),
            "constraint dimension {} vs point dimension {}",
            self.a.len(),
            x.len()
        );
        dot(&self.a, x) - self.b
    }

    /// max(0, <a,x> - b), the unnormalized violation.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.residual(x).max(0.0)
    }

    /// Euclidean distance from `x` to the halfspace.
    pub fn dist(&self, x: &[f64]) -> f64 {
        self.violation(x) / self.norm_a
    }
}

/// Penalty weight and smoothing width, `gamma > 0` and `delta >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyParams {
    pub gamma: f64,
    pub delta: f64,
}

impl PenaltyParams {
    pub fn new(gamma: f64, delta: f64) -> Self {
        assert!(gamma > 0.0, "penalty weight must be positive, got {gamma}");
        assert!(
            delta >= 0.0,
            "smoothing width must be nonnegative, got {delta}"
        );
        Self { gamma, delta }
    }
}

/// Scalar one-sided Huber kernel. Total for `delta >= 0`; at `delta = 0`
/// it is the pointwise limit max(s, 0).
///
/// Points exactly on the kinks s = -delta and s = delta take the middle
/// (quadratic) branch; both neighbors agree in value there.
pub fn p_delta(s: f64, delta: f64) -> f64 {
    debug_assert!(delta >= 0.0, "negative smoothing width {delta}");
    if delta == 0.0 {
        return s.max(0.0);
    }
    if s > delta {
        s
    } else if s < -delta {
        0.0
    } else {
        let t = s + delta;
        t * t / (4.0 * delta)
    }
}

/// Derivative of the scalar kernel, in [0, 1] and nondecreasing in `s`.
/// Panics for `delta <= 0`: the kernel is not differentiable at its kink
/// when the quadratic band has zero width.
pub fn p_delta_prime(s: f64, delta: f64) -> f64 {
    assert!(
        delta > 0.0,
        "derivative needs a positive smoothing width, got {delta}"
    );
    if s > delta {
        1.0
    } else if s < -delta {
        0.0
    } else {
        (s + delta) / (2.0 * delta)
    }
}

/// Penalty of one constraint: p_delta(<a,x> - b) / ||a||.
pub fn h_delta(x: &[f64], c: &HalfspaceConstraint, delta: f64) -> f64 {
    p_delta(c.residual(x), delta) / c.norm_a()
}

/// Gradient scale of one constraint penalty: the gradient is `scale * a`
/// with scale = p'_delta(<a,x> - b) / ||a||. Exposed separately so the
/// solver's hot loop can update in place without allocating.
pub fn grad_h_delta_scale(x: &[f64], c: &HalfspaceConstraint, delta: f64) -> f64 {
    p_delta_prime(c.residual(x), delta) / c.norm_a()
}

/// Gradient of one constraint penalty; its Euclidean norm is at most 1.
pub fn grad_h_delta(x: &[f64], c: &HalfspaceConstraint, delta: f64) -> Vec<f64> {
    scale(c.a(), grad_h_delta_scale(x, c, delta))
}

/// Norm of the gradient difference between two smoothing widths at `x`.
///
/// Both gradients point along `a`, so the norm reduces to
/// |p'_{d1}(s) - p'_{d2}(s)|. For d1 >= d2 it never exceeds
/// (d1 - d2) / (2 d1); callers must order the widths.
pub fn grad_penalty_gap(x: &[f64], c: &HalfspaceConstraint, d1: f64, d2: f64) -> f64 {
    assert!(
        d1 >= d2 && d2 > 0.0,
        "widths must satisfy d1 >= d2 > 0, got d1={d1}, d2={d2}"
    );
    let s = c.residual(x);
    (p_delta_prime(s, d1) - p_delta_prime(s, d2)).abs()
}

/// Mean penalty over the system: H(x) = (1/m) sum_i h_delta(x; a_i, b_i).
///
/// For feasible `x` this is at most delta / (4 alpha_min); it always
/// dominates the mean halfspace distance (1/m) sum_i dist(x, X_i).
/// Emptiness is excluded by `ConstraintSystem` construction.
pub fn avg_penalty(x: &[f64], sys: &ConstraintSystem, delta: f64) -> f64 {
    let m = sys.len() as f64;
    sys.constraints()
        .iter()
        .map(|c| h_delta(x, c, delta))
        .sum::<f64>()
        / m
}

/// Penalized objective F(x) = f(x) + gamma * H(x).
pub fn penalized_value(
    x: &[f64],
    f: &Objective,
    sys: &ConstraintSystem,
    p: PenaltyParams,
) -> f64 {
    f.evaluate(x) + p.gamma * avg_penalty(x, sys, p.delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstraintSystem;

    fn c(a: Vec<f64>, b: f64) -> HalfspaceConstraint {
        HalfspaceConstraint::new(a, b).unwrap()
    }

    #[test]
    fn p_delta_branches() {
        // At s = delta both branches agree: (1+1)^2/4 = 1.
        assert_eq!(p_delta(1.0, 1.0), 1.0);
        // Inactive side.
        assert_eq!(p_delta(-2.0, 1.0), 0.0);
        // Quadratic band: (0 + 0.5)^2 / (4 * 0.5) = 0.125.
        assert_eq!(p_delta(0.0, 0.5), 0.125);
        // Zero width degenerates to max(s, 0).
        assert_eq!(p_delta(3.0, 0.0), 3.0);
        assert_eq!(p_delta(-3.0, 0.0), 0.0);
        assert_eq!(p_delta(0.0, 0.0), 0.0);
    }

    #[test]
    fn p_delta_prime_branches() {
        assert_eq!(p_delta_prime(0.0, 0.5), 0.5);
        assert_eq!(p_delta_prime(10.0, 1.0), 1.0);
        // Left kink: (-delta + delta) / (2 delta) = 0.
        assert_eq!(p_delta_prime(-0.5, 0.5), 0.0);
        // Right kink takes the middle branch and still gives 1.
        assert_eq!(p_delta_prime(0.5, 0.5), 1.0);
    }

    #[test]
    #[should_panic]
    fn p_delta_prime_rejects_zero_width() {
        p_delta_prime(0.0, 0.0);
    }

    #[test]
    fn h_delta_values() {
        // Residual 0, delta 0.5, unit normal: (0.5)^2 / 2 = 0.125.
        let cu = c(vec![1.0], 0.0);
        assert_eq!(h_delta(&[0.0], &cu, 0.5), 0.125);

        // delta = 0 is the halfspace distance: max(0, 25)/5 = 5.
        let c34 = c(vec![3.0, 4.0], 0.0);
        assert_eq!(h_delta(&[3.0, 4.0], &c34, 0.0), 5.0);

        // Deep inside the band the penalty vanishes.
        assert_eq!(h_delta(&[-3.0, -4.0], &c34, 1.0), 0.0);
    }

    #[test]
    fn grad_h_delta_values() {
        // Violated beyond the band: unit vector a/||a||.
        let c34 = c(vec![3.0, 4.0], 0.0);
        let g = grad_h_delta(&[3.0, 4.0], &c34, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert!((g[1] - 0.8).abs() < 1e-15);

        // At the left kink (residual exactly -delta) the gradient is zero.
        let g0 = grad_h_delta(&[-0.75, 0.5], &c34, 0.25);
        assert_eq!(g0, vec![0.0, 0.0]);

        // a=(0,2), b=0, x=(5,0), delta=1: residual 0, p'=1/2,
        // gradient = (1/2) * a / ||a|| = (0, 0.5).
        let c02 = c(vec![0.0, 2.0], 0.0);
        let g2 = grad_h_delta(&[5.0, 0.0], &c02, 1.0);
        assert_eq!(g2, vec![0.0, 0.5]);
    }

    #[test]
    fn gap_is_zero_for_equal_widths_and_inside() {
        let c34 = c(vec![3.0, 4.0], 0.0);
        assert_eq!(grad_penalty_gap(&[1.0, 1.0], &c34, 0.7, 0.7), 0.0);
        // Deep inside both bands.
        assert_eq!(grad_penalty_gap(&[-9.0, -9.0], &c34, 1.0, 0.5), 0.0);
    }

    #[test]
    fn avg_penalty_small_system() {
        // Two 1-D constraints x <= 0 with different normals; distances from
        // x = 1 are both 1, so the zero-width mean penalty is 1.
        let sys = ConstraintSystem::new(vec![c(vec![1.0], 0.0), c(vec![2.0], 0.0)]).unwrap();
        assert_eq!(avg_penalty(&[1.0], &sys, 0.0), 1.0);

        // A single-constraint system reduces to h_delta.
        let sys1 = ConstraintSystem::new(vec![c(vec![3.0, 4.0], 0.0)]).unwrap();
        let x = [0.1, 0.2];
        assert_eq!(
            avg_penalty(&x, &sys1, 0.3),
            h_delta(&x, &sys1.constraints()[0], 0.3)
        );
    }

    #[test]
    fn penalized_value_composes() {
        let sys = ConstraintSystem::new(vec![c(vec![1.0, 0.0], 0.0)]).unwrap();
        let f = Objective::quadratic_shift(vec![-2.0, 0.0]);
        // Strictly feasible with margin beyond delta: penalty vanishes.
        let x = [-1.0, 0.0];
        let p = PenaltyParams::new(7.0, 0.5);
        assert_eq!(penalized_value(&x, &f, &sys, p), f.evaluate(&x));
    }
}
