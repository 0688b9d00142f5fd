//! Property tests for the one-sided smoothed penalty: branch continuity,
//! gradient bounds, agreement with finite differences, and the ordering
//! and convexity facts the solver analysis leans on.

use proptest::prelude::*;
use ripm::huber::{
    avg_penalty, grad_h_delta, grad_penalty_gap, h_delta, p_delta, HalfspaceConstraint,
};
use ripm::model::ConstraintSystem;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn coord() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

fn width() -> impl Strategy<Value = f64> {
    1e-3..2.0f64
}

/// A normal vector that stays comfortably away from zero.
fn normal_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(coord(), n).prop_filter("degenerate normal", |a| norm(a) > 1e-2)
}

/// (constraint, x, y, delta) with matching dimensions.
fn constraint_and_points(
) -> impl Strategy<Value = (HalfspaceConstraint, Vec<f64>, Vec<f64>, f64)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            normal_vec(n),
            -10.0..10.0f64,
            prop::collection::vec(coord(), n),
            prop::collection::vec(coord(), n),
            width(),
        )
            .prop_map(|(a, b, x, y, delta)| {
                (HalfspaceConstraint::new(a, b).unwrap(), x, y, delta)
            })
    })
}

proptest! {
    #[test]
    fn value_is_continuous_at_the_kinks(s in -5.0..5.0f64, delta in width()) {
        // Relative nudge around each branch boundary.
        for kink in [delta, -delta] {
            let eps = 1e-9 * (1.0 + kink.abs());
            let at = p_delta(kink, delta);
            let left = p_delta(kink - eps, delta);
            let right = p_delta(kink + eps, delta);
            prop_assert!((at - left).abs() <= 2.0 * eps + 1e-15, "left jump at {kink}");
            prop_assert!((at - right).abs() <= 2.0 * eps + 1e-15, "right jump at {kink}");
        }
        // And the value is finite and nonnegative wherever we look.
        prop_assert!(p_delta(s, delta) >= 0.0);
    }

    #[test]
    fn gradient_norm_is_at_most_one((c, x, _y, delta) in constraint_and_points()) {
        let g = grad_h_delta(&x, &c, delta);
        prop_assert!(norm(&g) <= 1.0 + 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((c, x, _y, delta) in constraint_and_points()) {
        let step = 1e-6 * (1.0 + norm(&x));
        // The second derivative jumps at the band edges, so skip points
        // whose residual sits within 10 steps of either kink.
        let r = c.residual(&x);
        let guard = 10.0 * step * c.norm_a();
        prop_assume!((r - delta).abs() > guard && (r + delta).abs() > guard);

        let g = grad_h_delta(&x, &c, delta);
        for i in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += step;
            lo[i] -= step;
            let fd = (h_delta(&hi, &c, delta) - h_delta(&lo, &c, delta)) / (2.0 * step);
            let scale = 1.0f64.max(g[i].abs());
            prop_assert!(
                (fd - g[i]).abs() <= 1e-5 * scale,
                "coordinate {i}: fd {fd} vs gradient {}",
                g[i]
            );
        }
    }

    #[test]
    fn gradient_is_lipschitz((c, x, y, delta) in constraint_and_points()) {
        let gx = grad_h_delta(&x, &c, delta);
        let gy = grad_h_delta(&y, &c, delta);
        let diff: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let cap = c.norm_a() / (2.0 * delta) * norm(&dxy);
        prop_assert!(norm(&diff) <= cap + 1e-12);
    }

    #[test]
    fn value_grows_with_the_width((c, x, _y, delta) in constraint_and_points(), bump in 0.0..3.0f64) {
        let wider = delta + bump;
        prop_assert!(h_delta(&x, &c, 0.0) <= h_delta(&x, &c, delta) + 1e-15);
        prop_assert!(h_delta(&x, &c, delta) <= h_delta(&x, &c, wider) + 1e-15);
    }

    #[test]
    fn zero_width_is_the_halfspace_distance((c, x, _y, _delta) in constraint_and_points()) {
        let expect = c.residual(&x).max(0.0) / c.norm_a();
        prop_assert_eq!(h_delta(&x, &c, 0.0), expect);
    }

    #[test]
    fn violated_points_pay_more_than_the_band_floor((c, x, _y, delta) in constraint_and_points()) {
        prop_assume!(c.residual(&x) > 0.0);
        prop_assert!(h_delta(&x, &c, delta) > delta / (4.0 * c.norm_a()));
    }

    #[test]
    fn midpoint_convexity((c, x, y, delta) in constraint_and_points()) {
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a + b) / 2.0).collect();
        let lhs = h_delta(&mid, &c, delta);
        let rhs = (h_delta(&x, &c, delta) + h_delta(&y, &c, delta)) / 2.0;
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn gradient_gap_respects_the_width_bound(
        (c, x, _y, d2) in constraint_and_points(),
        bump in 0.0..3.0f64,
    ) {
        let d1 = d2 + bump;
        let gap = grad_penalty_gap(&x, &c, d1, d2);
        prop_assert!(gap <= (d1 - d2) / (2.0 * d1) + 1e-12);
    }

    #[test]
    fn feasible_points_sit_under_the_average_penalty_cap(
        n in 1usize..=4,
        seeds in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 4), 0.0..2.0f64), 1..20),
        anchor in prop::collection::vec(-3.0..3.0f64, 4),
        delta in width(),
    ) {
        // Build every halfspace through or above the anchor, which is
        // then feasible by construction.
        let anchor = &anchor[..n];
        let mut constraints = Vec::new();
        for (a_raw, slack) in &seeds {
            let a = a_raw[..n].to_vec();
            if norm(&a) <= 1e-2 {
                continue;
            }
            let b = a.iter().zip(anchor).map(|(ai, zi)| ai * zi).sum::<f64>() + slack;
            constraints.push(HalfspaceConstraint::new(a, b).unwrap());
        }
        prop_assume!(!constraints.is_empty());
        let sys = ConstraintSystem::new(constraints).unwrap();
        prop_assert!(sys.max_violation(anchor) <= 0.0);
        let cap = delta / (4.0 * sys.alpha_min());
        prop_assert!(avg_penalty(anchor, &sys, delta) <= cap + 1e-12);
    }
}
