//! Parameter schedules (s_k, gamma_k, delta_k) and their validation.
//!
//! Four named schedules plus a fully custom one:
//!
//! * `polylog_convex`: s_k = 1/(k^c ln^{(1+3g)/2}(k+1)), gamma_k = ln^g(k+1),
//!   delta_k = 1/k^d; valid for c in [1/2, 1), d > 1/2, g > 0.
//! * `strongly_convex`: s_k = 2/(mu k), same gamma and delta forms, d > 1.
//! * `simulation_sc`: s_k = 1/k^0.99, gamma_k = c_gamma ln(k+1),
//!   delta_k = 1/k^2.
//! * `simulation_cvx`: s_k = S/k^0.5, same gamma and delta as simulation_sc.
//!
//! Every logarithm is ln(k+1) rather than ln k, so gamma_1 > 0 and the
//! closed forms match the analytic schedules; against a plain ln k this is
//! only a reparameterization of c_gamma. Note that simulation_cvx fails the
//! summability condition on s_k^2 gamma_k^2 (its terms behave like
//! ln^2(k)/k); it is shipped because the reference experiments tune it
//! anyway, and runs using it must explicitly override validation.

use std::fmt;
use std::sync::Arc;

type SeqFn = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

/// The stepsize, penalty growth, and smoothing decay sequences.
#[derive(Clone)]
pub enum ScheduleTriple {
    PolylogConvex { c: f64, g: f64, d: f64 },
    StronglyConvex { mu: f64, g: f64, d: f64 },
    SimulationSc { c_gamma: f64 },
    SimulationCvx { s_scale: f64, c_gamma: f64 },
    Custom {
        step: SeqFn,
        gamma: SeqFn,
        delta: SeqFn,
        label: String,
    },
}

impl fmt::Debug for ScheduleTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleTriple::PolylogConvex { c, g, d } => {
                write!(f, "polylog_convex(c={c}, g={g}, d={d})")
            }
            ScheduleTriple::StronglyConvex { mu, g, d } => {
                write!(f, "strongly_convex(mu={mu}, g={g}, d={d})")
            }
            ScheduleTriple::SimulationSc { c_gamma } => {
                write!(f, "simulation_sc(c_gamma={c_gamma})")
            }
            ScheduleTriple::SimulationCvx { s_scale, c_gamma } => {
                write!(f, "simulation_cvx(S={s_scale}, c_gamma={c_gamma})")
            }
            ScheduleTriple::Custom { label, .. } => write!(f, "custom({label})"),
        }
    }
}

fn ln1p_k(k: u64) -> f64 {
    ((k + 1) as f64).ln()
}

impl ScheduleTriple {
    /// Stepsize s_k, strictly positive for k >= 1.
    pub fn step_s(&self, k: u64) -> f64 {
        assert!(k >= 1, "schedules are indexed from 1");
        match self {
            ScheduleTriple::PolylogConvex { c, g, .. } => {
                1.0 / ((k as f64).powf(*c) * ln1p_k(k).powf((1.0 + 3.0 * g) / 2.0))
            }
            ScheduleTriple::StronglyConvex { mu, .. } => 2.0 / (mu * k as f64),
            ScheduleTriple::SimulationSc { .. } => 1.0 / (k as f64).powf(0.99),
            ScheduleTriple::SimulationCvx { s_scale, .. } => s_scale / (k as f64).sqrt(),
            ScheduleTriple::Custom { step, .. } => step(k),
        }
    }

    /// 1/s_k in closed form. Computed directly rather than by dividing,
    /// so that e.g. the strongly convex weights mu*k/2 sum exactly in f64.
    pub fn inv_step_s(&self, k: u64) -> f64 {
        assert!(k >= 1, "schedules are indexed from 1");
        match self {
            ScheduleTriple::PolylogConvex { c, g, .. } => {
                (k as f64).powf(*c) * ln1p_k(k).powf((1.0 + 3.0 * g) / 2.0)
            }
            ScheduleTriple::StronglyConvex { mu, .. } => mu * k as f64 / 2.0,
            ScheduleTriple::SimulationSc { .. } => (k as f64).powf(0.99),
            ScheduleTriple::SimulationCvx { s_scale, .. } => (k as f64).sqrt() / s_scale,
            ScheduleTriple::Custom { step, .. } => 1.0 / step(k),
        }
    }

    /// Penalty weight gamma_k, nondecreasing in k.
    pub fn penalty_gamma(&self, k: u64) -> f64 {
        assert!(k >= 1, "schedules are indexed from 1");
        match self {
            ScheduleTriple::PolylogConvex { g, .. } | ScheduleTriple::StronglyConvex { g, .. } => {
                ln1p_k(k).powf(*g)
            }
            ScheduleTriple::SimulationSc { c_gamma }
            | ScheduleTriple::SimulationCvx { c_gamma, .. } => c_gamma * ln1p_k(k),
            ScheduleTriple::Custom { gamma, .. } => gamma(k),
        }
    }

    /// Smoothing width delta_k, nonincreasing in k.
    pub fn smoothing_delta(&self, k: u64) -> f64 {
        assert!(k >= 1, "schedules are indexed from 1");
        match self {
            ScheduleTriple::PolylogConvex { d, .. } | ScheduleTriple::StronglyConvex { d, .. } => {
                (k as f64).powf(-d)
            }
            ScheduleTriple::SimulationSc { .. } | ScheduleTriple::SimulationCvx { .. } => {
                1.0 / ((k * k) as f64)
            }
            ScheduleTriple::Custom { delta, .. } => delta(k),
        }
    }

    /// Symbolic validation of the convergence conditions: gamma_k -> inf,
    /// sum s_k = inf, sum s_k gamma_k delta_k < inf, sum s_k^2 gamma_k^2 < inf,
    /// plus the schedule kind's own parameter domain. Exponent arithmetic
    /// only; numeric partial sums never decide these verdicts.
    pub fn validate_assumption(&self) -> ValidationReport {
        let mut checks = Vec::new();
        match self {
            ScheduleTriple::PolylogConvex { c, g, d } => {
                checks.push(domain_check(
                    *c >= 0.5 && *c < 1.0 && *d > 0.5 && *g > 0.0,
                    format!("needs c in [1/2, 1) (c={c}), d > 1/2 (d={d}), g > 0 (g={g})"),
                ));
                checks.push(gamma_check(*g > 0.0, format!("log exponent g={g}")));
                // Terms of the three series as 1/(k^e ln^p(k+1)).
                checks.push(series_check(
                    "step_sum_diverges",
                    true,
                    *c,
                    (1.0 + 3.0 * g) / 2.0,
                    "s_k",
                ));
                checks.push(series_check(
                    "coupling_sum_finite",
                    false,
                    c + d,
                    (1.0 + g) / 2.0,
                    "s_k*gamma_k*delta_k",
                ));
                checks.push(series_check(
                    "noise_sum_finite",
                    false,
                    2.0 * c,
                    1.0 + g,
                    "s_k^2*gamma_k^2",
                ));
            }
            ScheduleTriple::StronglyConvex { mu, g, d } => {
                checks.push(domain_check(
                    *mu > 0.0 && *d > 1.0 && *g > 0.0,
                    format!("needs mu > 0 (mu={mu}), d > 1 (d={d}), g > 0 (g={g})"),
                ));
                checks.push(gamma_check(*g > 0.0, format!("log exponent g={g}")));
                checks.push(series_check("step_sum_diverges", true, 1.0, 0.0, "s_k"));
                checks.push(series_check(
                    "coupling_sum_finite",
                    false,
                    1.0 + d,
                    -g,
                    "s_k*gamma_k*delta_k",
                ));
                checks.push(series_check(
                    "noise_sum_finite",
                    false,
                    2.0,
                    -2.0 * g,
                    "s_k^2*gamma_k^2",
                ));
            }
            ScheduleTriple::SimulationSc { c_gamma } => {
                checks.push(domain_check(
                    *c_gamma > 0.0,
                    format!("needs c_gamma > 0 (c_gamma={c_gamma})"),
                ));
                checks.push(gamma_check(
                    *c_gamma > 0.0,
                    format!("scale c_gamma={c_gamma}"),
                ));
                checks.push(series_check("step_sum_diverges", true, 0.99, 0.0, "s_k"));
                checks.push(series_check(
                    "coupling_sum_finite",
                    false,
                    2.99,
                    -1.0,
                    "s_k*gamma_k*delta_k",
                ));
                checks.push(series_check(
                    "noise_sum_finite",
                    false,
                    1.98,
                    -2.0,
                    "s_k^2*gamma_k^2",
                ));
            }
            ScheduleTriple::SimulationCvx { s_scale, c_gamma } => {
                checks.push(domain_check(
                    *s_scale > 0.0 && *c_gamma > 0.0,
                    format!("needs S > 0 (S={s_scale}), c_gamma > 0 (c_gamma={c_gamma})"),
                ));
                checks.push(gamma_check(
                    *c_gamma > 0.0,
                    format!("scale c_gamma={c_gamma}"),
                ));
                checks.push(series_check("step_sum_diverges", true, 0.5, 0.0, "s_k"));
                checks.push(series_check(
                    "coupling_sum_finite",
                    false,
                    2.5,
                    -1.0,
                    "s_k*gamma_k*delta_k",
                ));
                // Terms behave like ln^2(k+1)/k: not summable. Reported
                // honestly; the reference experiments tune this schedule
                // regardless, so runs with it must override validation.
                checks.push(series_check(
                    "noise_sum_finite",
                    false,
                    1.0,
                    -2.0,
                    "s_k^2*gamma_k^2",
                ));
            }
            ScheduleTriple::Custom { .. } => {
                for name in [
                    "kind_domain",
                    "gamma_unbounded",
                    "step_sum_diverges",
                    "coupling_sum_finite",
                    "noise_sum_finite",
                ] {
                    checks.push(ConditionCheck {
                        name,
                        pass: None,
                        detail: "not statically checkable for a custom schedule".into(),
                    });
                }
            }
        }
        ValidationReport {
            schedule: format!("{self:?}"),
            checks,
        }
    }

    /// Running sums up to t of s_k, 1/s_k, s_k^2 gamma_k^2, s_k gamma_k delta_k.
    pub fn partial_sums(&self, t: u64) -> PartialSums {
        assert!(t >= 1, "schedules are indexed from 1");
        let mut out = PartialSums::default();
        for k in 1..=t {
            let s = self.step_s(k);
            let g = self.penalty_gamma(k);
            let d = self.smoothing_delta(k);
            out.s_sum += s;
            out.s_inv_sum += self.inv_step_s(k);
            out.ssq_gsq_sum += s * s * g * g;
            out.sgd_sum += s * g * d;
        }
        out
    }
}

/// Lower bound on the polylog stepsize partial sum,
/// ((t+1)^{1-c} - 1) / ((1-c) ln^{(1+3g)/2}(t+1)), valid for c < 1.
pub fn polylog_step_sum_lower_bound(c: f64, g: f64, t: u64) -> f64 {
    assert!(c < 1.0);
    let tp = (t + 1) as f64;
    (tp.powf(1.0 - c) - 1.0) / ((1.0 - c) * tp.ln().powf((1.0 + 3.0 * g) / 2.0))
}

/// Closed-form cap on sum_k s_k^2 gamma_k^2 for the polylog schedule with
/// any c >= 1/2: 1/ln^{1+g}(2) + 2/(g ln^g(2)).
///
/// Derivation: the terms are at most 1/(k ln^{1+g}(k+1)); the k=1 term is
/// the first summand and the tail is bounded by the integral of
/// 1/(x ln^{1+g}(x+1)), which 1/x <= 2/(x+1) turns into an exact integral
/// worth 2/(g ln^g 2). A tighter-looking variant with g/ln^g(2) as the
/// second summand circulates but fails numerically for small g (at g=0.1
/// the partial sums pass it before k reaches 10), so it is not used here.
pub fn polylog_noise_sum_cap(g: f64) -> f64 {
    assert!(g > 0.0);
    let ln2 = std::f64::consts::LN_2;
    1.0 / ln2.powf(1.0 + g) + 2.0 / (g * ln2.powf(g))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PartialSums {
    /// S_t = sum s_k
    pub s_sum: f64,
    /// Sbar_t = sum 1/s_k
    pub s_inv_sum: f64,
    /// sum s_k^2 gamma_k^2
    pub ssq_gsq_sum: f64,
    /// sum s_k gamma_k delta_k
    pub sgd_sum: f64,
}

/// One validated condition; `pass = None` means not statically checkable.
#[derive(Clone, Debug)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub pass: Option<bool>,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub schedule: String,
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    /// True iff every condition is statically checkable and holds.
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass == Some(true))
    }

    pub fn failing(&self) -> Vec<&ConditionCheck> {
        self.checks
            .iter()
            .filter(|c| c.pass != Some(true))
            .collect()
    }

    /// Conditions that are statically checkable and definitely violated.
    /// Unchecked conditions on custom schedules do not count: they are
    /// the caller's responsibility, not a detected failure.
    pub fn definite_failures(&self) -> Vec<&ConditionCheck> {
        self.checks
            .iter()
            .filter(|c| c.pass == Some(false))
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "schedule {}", self.schedule)?;
        for c in &self.checks {
            let verdict = match c.pass {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "unchecked",
            };
            writeln!(f, "  {:<22} {:<9} {}", c.name, verdict, c.detail)?;
        }
        Ok(())
    }
}

fn domain_check(ok: bool, detail: String) -> ConditionCheck {
    ConditionCheck {
        name: "kind_domain",
        pass: Some(ok),
        detail,
    }
}

fn gamma_check(ok: bool, detail: String) -> ConditionCheck {
    ConditionCheck {
        name: "gamma_unbounded",
        pass: Some(ok),
        detail,
    }
}

/// Convergence of sum 1/(k^e ln^p(k+1)): the series diverges iff e < 1,
/// or e = 1 with p <= 1.
fn series_diverges(e: f64, p: f64) -> bool {
    e < 1.0 || (e == 1.0 && p <= 1.0)
}

fn series_check(
    name: &'static str,
    want_divergent: bool,
    e: f64,
    p: f64,
    what: &str,
) -> ConditionCheck {
    let diverges = series_diverges(e, p);
    let ok = diverges == want_divergent;
    ConditionCheck {
        name,
        pass: Some(ok),
        detail: format!("{what} ~ 1/(k^{e:.4} ln^{p:.4}(k+1))"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_values() {
        let sc = ScheduleTriple::StronglyConvex {
            mu: 2.0,
            g: 1.0,
            d: 2.0,
        };
        assert_eq!(sc.step_s(4), 0.25);

        let pl = ScheduleTriple::PolylogConvex {
            c: 0.5,
            g: 0.25,
            d: 0.75,
        };
        let expect = 1.0 / (2.0f64.ln()).powf((1.0 + 0.75) / 2.0);
        assert!((pl.step_s(1) - expect).abs() < 1e-15);

        let sim = ScheduleTriple::SimulationSc { c_gamma: 1.0 };
        assert_eq!(sim.step_s(1), 1.0);
    }

    #[test]
    fn gamma_values() {
        let sc = ScheduleTriple::StronglyConvex {
            mu: 2.0,
            g: 2.0,
            d: 2.0,
        };
        assert!((sc.penalty_gamma(6) - 7.0f64.ln().powi(2)).abs() < 1e-15);

        let sim = ScheduleTriple::SimulationSc { c_gamma: 5.0 };
        assert!((sim.penalty_gamma(9) - 5.0 * 10.0f64.ln()).abs() < 1e-15);
        assert!(sim.penalty_gamma(1) > 0.0);
    }

    #[test]
    fn delta_values() {
        let pl = ScheduleTriple::PolylogConvex {
            c: 0.5,
            g: 1.0,
            d: 2.0,
        };
        assert_eq!(pl.smoothing_delta(10), 0.01);

        let pl15 = ScheduleTriple::PolylogConvex {
            c: 0.5,
            g: 1.0,
            d: 1.5,
        };
        assert_eq!(pl15.smoothing_delta(4), 0.125);

        let sim = ScheduleTriple::SimulationCvx {
            s_scale: 1.0,
            c_gamma: 1.0,
        };
        assert!((sim.smoothing_delta(3) - 1.0 / 9.0).abs() < 1e-17);
    }

    #[test]
    fn validation_region() {
        let ok = ScheduleTriple::PolylogConvex {
            c: 0.5,
            g: 0.1,
            d: 0.75,
        };
        assert!(ok.validate_assumption().all_pass());

        // c + d on the boundary: the coupling series diverges.
        let boundary = ScheduleTriple::PolylogConvex {
            c: 0.5,
            g: 0.1,
            d: 0.5,
        };
        let rep = boundary.validate_assumption();
        assert!(!rep.all_pass());
        assert!(rep
            .failing()
            .iter()
            .any(|c| c.name == "coupling_sum_finite"));

        // g = 0 keeps gamma bounded.
        let flat = ScheduleTriple::PolylogConvex {
            c: 0.75,
            g: 0.0,
            d: 2.0,
        };
        let rep = flat.validate_assumption();
        assert!(rep.failing().iter().any(|c| c.name == "gamma_unbounded"));
    }

    #[test]
    fn simulation_cvx_fails_noise_sum() {
        let sim = ScheduleTriple::SimulationCvx {
            s_scale: 1.0,
            c_gamma: 2.0,
        };
        let rep = sim.validate_assumption();
        assert!(!rep.all_pass());
        let failing = rep.failing();
        assert_eq!(failing.len(), 1);
        assert_eq!(failing[0].name, "noise_sum_finite");
    }

    #[test]
    fn partial_sums_strongly_convex_exact() {
        // mu = 2 gives s_k = 1/k and weights k; Sbar_3 = 6 exactly.
        let sc = ScheduleTriple::StronglyConvex {
            mu: 2.0,
            g: 1.0,
            d: 2.0,
        };
        let ps = sc.partial_sums(3);
        assert_eq!(ps.s_inv_sum, 6.0);
        assert_eq!(ps.s_sum, 1.0 + 0.5 + 1.0 / 3.0);
    }

    #[test]
    fn partial_sums_single_term() {
        let sim = ScheduleTriple::SimulationSc { c_gamma: 3.0 };
        let ps = sim.partial_sums(1);
        assert_eq!(ps.s_sum, sim.step_s(1));
        assert_eq!(ps.sgd_sum, sim.step_s(1) * sim.penalty_gamma(1) * 1.0);
    }

    #[test]
    fn polylog_lower_bound_holds() {
        let (c, g) = (0.5, 1.0);
        let pl = ScheduleTriple::PolylogConvex { c, g, d: 2.0 };
        let ps = pl.partial_sums(100);
        assert!(ps.s_sum >= polylog_step_sum_lower_bound(c, g, 100));
    }

    #[test]
    fn custom_is_not_checkable() {
        let sch = ScheduleTriple::Custom {
            step: Arc::new(|k| 1.0 / k as f64),
            gamma: Arc::new(|k| (k as f64).ln() + 1.0),
            delta: Arc::new(|k| 1.0 / (k * k) as f64),
            label: "test".into(),
        };
        let rep = sch.validate_assumption();
        assert!(!rep.all_pass());
        assert!(rep.checks.iter().all(|c| c.pass.is_none()));
    }

    #[test]
    fn monotone_directions() {
        for sch in [
            ScheduleTriple::PolylogConvex {
                c: 0.5,
                g: 0.1,
                d: 0.75,
            },
            ScheduleTriple::StronglyConvex {
                mu: 2.0,
                g: 0.1,
                d: 2.0,
            },
            ScheduleTriple::SimulationSc { c_gamma: 10.0 },
            ScheduleTriple::SimulationCvx {
                s_scale: 0.5,
                c_gamma: 10.0,
            },
        ] {
            let mut prev_s = f64::INFINITY;
            let mut prev_g = 0.0;
            let mut prev_d = f64::INFINITY;
            for k in 1..200 {
                let (s, g, d) = (
                    sch.step_s(k),
                    sch.penalty_gamma(k),
                    sch.smoothing_delta(k),
                );
                assert!(s > 0.0 && g > 0.0 && d > 0.0);
                assert!(s <= prev_s, "stepsize must not increase");
                assert!(g >= prev_g, "penalty weight must not decrease");
                assert!(d <= prev_d, "smoothing width must not increase");
                prev_s = s;
                prev_g = g;
                prev_d = d;
            }
        }
    }
}
