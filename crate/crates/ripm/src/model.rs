//! Problem data: objectives, constraint systems, and full instances.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::huber::HalfspaceConstraint;
use crate::vecmath::{dist, dot, sub};

/// Ordered collection of halfspaces `<a_i,x> <= b_i` whose intersection is
/// the feasible set. Caches `alpha_min`, the smallest constraint norm, which
/// scales every feasibility bound in the penalty theory.
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    constraints: Vec<HalfspaceConstraint>,
    alpha_min: f64,
    dim: usize,
}

impl ConstraintSystem {
    pub fn new(constraints: Vec<HalfspaceConstraint>) -> Result<Self> {
        let first = constraints.first().ok_or(Error::EmptySystem)?;
        let dim = first.dim();
        for c in &constraints {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        let alpha_min = constraints
            .iter()
            .map(|c| c.norm_a())
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            constraints,
            alpha_min,
            dim,
        })
    }

    pub fn constraints(&self) -> &[HalfspaceConstraint] {
        &self.constraints
    }

    pub fn constraint(&self, i: usize) -> &HalfspaceConstraint {
        &self.constraints[i]
    }

    /// Number of constraints m.
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one constraint
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest cached constraint norm, strictly positive.
    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    /// max_i (<a_i,x> - b_i); the point is feasible iff this is <= 0.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.residual(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type SubgradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Objective oracle: value, one subgradient per point, and a strong
/// convexity modulus `mu >= 0`.
///
/// The two built-ins are the shifted quadratic `||x - x0||^2` (mu = 2) and
/// the shifted l1 norm `sum |x_j - x0_j|` (mu = 0, sign subgradient with 0
/// at ties, which is the minimal-norm choice). Custom objectives declare
/// `mu` themselves; bounded level sets are a caller obligation that cannot
/// be checked here.
#[derive(Clone)]
pub enum Objective {
    QuadraticShift { x0: Vec<f64> },
    L1Shift { x0: Vec<f64> },
    Custom {
        dim: usize,
        mu: f64,
        value: ValueFn,
        subgradient: SubgradFn,
        label: String,
    },
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::QuadraticShift { x0 } => {
                f.debug_struct("QuadraticShift").field("x0", x0).finish()
            }
            Objective::L1Shift { x0 } => f.debug_struct("L1Shift").field("x0", x0).finish(),
            Objective::Custom { dim, mu, label, .. } => f
                .debug_struct("Custom")
                .field("dim", dim)
                .field("mu", mu)
                .field("label", label)
                .finish(),
        }
    }
}

impl Objective {
    pub fn quadratic_shift(x0: Vec<f64>) -> Self {
        Objective::QuadraticShift { x0 }
    }

    pub fn l1_shift(x0: Vec<f64>) -> Self {
        Objective::L1Shift { x0 }
    }

    pub fn custom(
        dim: usize,
        mu: f64,
        value: ValueFn,
        subgradient: SubgradFn,
        label: impl Into<String>,
    ) -> Self {
        assert!(mu >= 0.0, "strong convexity modulus must be nonnegative");
        Objective::Custom {
            dim,
            mu,
            value,
            subgradient,
            label: label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::QuadraticShift { x0 } | Objective::L1Shift { x0 } => x0.len(),
            Objective::Custom { dim, .. } => *dim,
        }
    }

    /// Strong convexity modulus: 2 for the quadratic, 0 for l1, declared
    /// for custom objectives.
    pub fn mu(&self) -> f64 {
        match self {
            Objective::QuadraticShift { .. } => 2.0,
            Objective::L1Shift { .. } => 0.0,
            Objective::Custom { mu, .. } => *mu,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.check_dim(x);
        match self {
            Objective::QuadraticShift { x0 } => {
                let d = dist(x, x0);
                d * d
            }
            Objective::L1Shift { x0 } => x.iter().zip(x0).map(|(a, b)| (a - b).abs()).sum(),
            Objective::Custom { value, .. } => value(x),
        }
    }

    /// One element of the subdifferential at `x`.
    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        self.check_dim(x);
        match self {
            Objective::QuadraticShift { x0 } => {
                x.iter().zip(x0).map(|(a, b)| 2.0 * (a - b)).collect()
            }
            Objective::L1Shift { x0 } => x
                .iter()
                .zip(x0)
                .map(|(a, b)| {
                    if a > b {
                        1.0
                    } else if a < b {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Objective::Custom { subgradient, .. } => subgradient(x),
        }
    }

    /// In-place variant for the solver's hot loop.
    pub fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.check_dim(x);
        match self {
            Objective::QuadraticShift { x0 } => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(x0) {
                    *o = 2.0 * (a - b);
                }
            }
            Objective::L1Shift { x0 } => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(x0) {
                    *o = if a > b {
                        1.0
                    } else if a < b {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Objective::Custom { subgradient, .. } => out.copy_from_slice(&subgradient(x)),
        }
    }

    fn check_dim(&self, x: &[f64]) {
        assert_eq!(
            x.len(),
            self.dim(),
            "objective dimension {} vs point dimension {}",
            self.dim(),
            x.len()
        );
    }
}

/// Samples random pairs (u, v) and checks the strong convexity inequality
/// f(v) + <g(v), u - v> + (mu/2) ||u - v||^2 <= f(u) with tolerance
/// 1e-9 * (1 + |f(u)|). Returns true iff every sampled pair passes.
pub fn strong_convexity_check(obj: &Objective, trials: usize, rng_seed: u64) -> bool {
    strong_convexity_check_with_mu(obj, obj.mu(), trials, rng_seed)
}

/// Same check against an arbitrary claimed modulus, so tests can show that
/// an inflated `mu` is caught.
pub fn strong_convexity_check_with_mu(
    obj: &Objective,
    mu: f64,
    trials: usize,
    rng_seed: u64,
) -> bool {
    assert!(trials >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = obj.dim();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    for _ in 0..trials {
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let g = obj.subgradient(&v);
        let duv = dist(&u, &v);
        let lhs = obj.evaluate(&v) + dot(&g, &sub(&u, &v)) + 0.5 * mu * duv * duv;
        let fu = obj.evaluate(&u);
        if lhs > fu + 1e-9 * (1.0 + fu.abs()) {
            return false;
        }
    }
    true
}

/// Where a stored optimum came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Known in closed form (e.g. the unconstrained minimizer is feasible).
    Exact,
    /// Produced by a reference solver to its own accuracy.
    OracleComputed,
}

#[derive(Clone, Debug)]
pub struct KnownOptimum {
    pub x: Vec<f64>,
    pub provenance: Provenance,
}

/// A complete problem: objective, constraints, a feasible witness point,
/// and optionally a known optimum for error curves.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub objective: Objective,
    pub system: ConstraintSystem,
    pub witness: Vec<f64>,
    pub known_optimum: Option<KnownOptimum>,
    pub instance_id: String,
    pub seed: u64,
}

impl ProblemInstance {
    /// Validates the stored invariants: matching dimensions, a feasible
    /// witness, and feasibility (within 1e-9) of any exact optimum.
    pub fn validate(&self) -> Result<()> {
        let n = self.system.dim();
        if self.objective.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.objective.dim(),
            });
        }
        if self.witness.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.witness.len(),
            });
        }
        let wv = self.system.max_violation(&self.witness);
        if wv > 0.0 {
            return Err(Error::InfeasibleWitness { violation: wv });
        }
        if let Some(opt) = &self.known_optimum {
            if opt.x.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: opt.x.len(),
                });
            }
            if opt.provenance == Provenance::Exact {
                let ov = self.system.max_violation(&opt.x);
                if ov > 1e-9 {
                    return Err(Error::InfeasibleOptimum { violation: ov });
                }
            }
        }
        Ok(())
    }
}

/// Decimal with 17 significant digits, enough for f64 round-trips.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

fn parse_vec(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad number {t:?}: {e}"),
            })
        })
        .collect()
}

/// Writes an instance in the flat text format: one `key value` line per
/// field, vectors as comma-separated decimals, constraints as rows
/// `a_1,...,a_n | b`. Custom objectives have no serializable form.
pub fn write_instance<W: Write>(inst: &ProblemInstance, mut w: W) -> Result<()> {
    let kind = match &inst.objective {
        Objective::QuadraticShift { .. } => "quadratic_shift",
        Objective::L1Shift { .. } => "l1_shift",
        Objective::Custom { .. } => {
            return Err(Error::UnsupportedObjective {
                op: "write_instance",
                reason: "custom objectives are closures without a text form",
            })
        }
    };
    let x0 = match &inst.objective {
        Objective::QuadraticShift { x0 } | Objective::L1Shift { x0 } => x0,
        Objective::Custom { .. } => unreachable!(),
    };
    writeln!(w, "instance {}", inst.instance_id)?;
    writeln!(w, "seed {}", inst.seed)?;
    writeln!(w, "objective {kind}")?;
    writeln!(w, "x0 {}", fmt_vec(x0))?;
    writeln!(w, "dim {}", inst.system.dim())?;
    writeln!(w, "m {}", inst.system.len())?;
    for c in inst.system.constraints() {
        writeln!(w, "constraint {} | {}", fmt_vec(c.a()), fmt_f64(c.b()))?;
    }
    writeln!(w, "witness {}", fmt_vec(&inst.witness))?;
    if let Some(opt) = &inst.known_optimum {
        let tag = match opt.provenance {
            Provenance::Exact => "exact",
            Provenance::OracleComputed => "oracle",
        };
        writeln!(w, "optimum {tag} {}", fmt_vec(&opt.x))?;
    }
    writeln!(w, "end")?;
    Ok(())
}

/// Parses the format written by [`write_instance`] and validates the result.
pub fn read_instance<R: BufRead>(r: R) -> Result<ProblemInstance> {
    let mut id = None;
    let mut seed = 0u64;
    let mut kind = None;
    let mut x0 = None;
    let mut dim = None;
    let mut m = None;
    let mut constraints = Vec::new();
    let mut witness = None;
    let mut optimum = None;
    let mut saw_end = false;

    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "instance" => id = Some(rest.to_string()),
            "seed" => {
                seed = rest.trim().parse().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad seed: {e}"),
                })?
            }
            "objective" => kind = Some(rest.trim().to_string()),
            "x0" => x0 = Some(parse_vec(rest, lineno)?),
            "dim" => {
                dim = Some(rest.trim().parse::<usize>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad dim: {e}"),
                })?)
            }
            "m" => {
                m = Some(rest.trim().parse::<usize>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad m: {e}"),
                })?)
            }
            "constraint" => {
                let (av, bv) = rest.split_once('|').ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "constraint row needs `a_1,...,a_n | b`".into(),
                })?;
                let a = parse_vec(av.trim(), lineno)?;
                let b = bv.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad offset: {e}"),
                })?;
                constraints.push(HalfspaceConstraint::new(a, b)?);
            }
            "witness" => witness = Some(parse_vec(rest, lineno)?),
            "optimum" => {
                let (tag, xv) = rest.split_once(' ').ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "optimum needs `exact|oracle x_1,...`".into(),
                })?;
                let provenance = match tag {
                    "exact" => Provenance::Exact,
                    "oracle" => Provenance::OracleComputed,
                    other => {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("unknown optimum tag {other:?}"),
                        })
                    }
                };
                optimum = Some(KnownOptimum {
                    x: parse_vec(xv, lineno)?,
                    provenance,
                });
            }
            "end" => {
                saw_end = true;
                break;
            }
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }
    if !saw_end {
        return Err(Error::Parse {
            line: 0,
            msg: "missing `end` marker".into(),
        });
    }

    let id = id.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing instance id".into(),
    })?;
    let kind = kind.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing objective kind".into(),
    })?;
    let x0 = x0.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing x0".into(),
    })?;
    let witness = witness.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing witness".into(),
    })?;
    let objective = match kind.as_str() {
        "quadratic_shift" => Objective::quadratic_shift(x0),
        "l1_shift" => Objective::l1_shift(x0),
        other => {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unknown objective kind {other:?}"),
            })
        }
    };
    let system = ConstraintSystem::new(constraints)?;
    if let (Some(d), Some(mm)) = (dim, m) {
        if system.dim() != d || system.len() != mm {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "declared dim/m {}x{} but parsed {}x{}",
                    d,
                    mm,
                    system.dim(),
                    system.len()
                ),
            });
        }
    }
    let inst = ProblemInstance {
        objective,
        system,
        witness,
        known_optimum: optimum,
        instance_id: id,
        seed,
    };
    inst.validate()?;
    Ok(inst)
}

pub fn save_instance(inst: &ProblemInstance, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_instance(inst, std::io::BufWriter::new(f))
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    let f = std::fs::File::open(path)?;
    read_instance(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hc(a: Vec<f64>, b: f64) -> HalfspaceConstraint {
        HalfspaceConstraint::new(a, b).unwrap()
    }

    #[test]
    fn evaluate_builtins() {
        let q = Objective::quadratic_shift(vec![0.0, 0.0]);
        assert_eq!(q.evaluate(&[3.0, 4.0]), 25.0);
        assert_eq!(q.evaluate(&[0.0, 0.0]), 0.0);

        let l = Objective::l1_shift(vec![1.0, -1.0]);
        assert_eq!(l.evaluate(&[0.0, 0.0]), 2.0);
    }

    #[test]
    fn subgradient_builtins() {
        let q = Objective::quadratic_shift(vec![1.0, 1.0]);
        assert_eq!(q.subgradient(&[2.0, 3.0]), vec![2.0, 4.0]);

        let l = Objective::l1_shift(vec![0.0, 0.0]);
        assert_eq!(l.subgradient(&[-5.0, 2.0]), vec![-1.0, 1.0]);
        // Tie rule: zero at equality.
        assert_eq!(l.subgradient(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn max_violation_cases() {
        let sys = ConstraintSystem::new(vec![hc(vec![1.0], 1.0)]).unwrap();
        assert_eq!(sys.max_violation(&[3.0]), 2.0);
        assert_eq!(sys.max_violation(&[1.0]), 0.0);
        assert!(sys.max_violation(&[0.0]) < 0.0);
    }

    #[test]
    fn alpha_min_is_smallest_norm() {
        let sys =
            ConstraintSystem::new(vec![hc(vec![3.0, 4.0], 0.0), hc(vec![0.0, 2.0], 1.0)]).unwrap();
        assert_eq!(sys.alpha_min(), 2.0);
    }

    #[test]
    fn strong_convexity_verdicts() {
        let q = Objective::quadratic_shift(vec![0.5, -0.25]);
        assert!(strong_convexity_check(&q, 200, 7));
        // The quadratic is exactly 2-strongly convex; claiming 10 fails.
        assert!(!strong_convexity_check_with_mu(&q, 10.0, 200, 7));

        let l = Objective::l1_shift(vec![0.0, 0.0, 0.0]);
        assert!(strong_convexity_check(&l, 200, 7));
    }

    #[test]
    fn instance_round_trip_is_exact() {
        let inst = ProblemInstance {
            objective: Objective::quadratic_shift(vec![0.1, 0.2 + 1e-17]),
            system: ConstraintSystem::new(vec![
                hc(vec![1.0 / 3.0, -2.0 / 7.0], 0.123456789012345678),
                hc(vec![-1e-30, 4.0], 2.5),
            ])
            .unwrap(),
            witness: vec![-10.0, 0.0],
            known_optimum: Some(KnownOptimum {
                x: vec![0.1, 0.2],
                provenance: Provenance::OracleComputed,
            }),
            instance_id: "roundtrip".into(),
            seed: 99,
        };
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let back = read_instance(buf.as_slice()).unwrap();
        assert_eq!(back.instance_id, inst.instance_id);
        assert_eq!(back.seed, inst.seed);
        assert_eq!(back.witness, inst.witness);
        let (a0, b0) = (
            back.system.constraints()[0].a().to_vec(),
            back.system.constraints()[0].b(),
        );
        assert_eq!(a0, inst.system.constraints()[0].a());
        assert_eq!(b0, inst.system.constraints()[0].b());
        match (&back.objective, &inst.objective) {
            (Objective::QuadraticShift { x0: a }, Objective::QuadraticShift { x0: b }) => {
                assert_eq!(a, b)
            }
            _ => panic!("objective kind changed in round trip"),
        }
        assert_eq!(back.known_optimum.unwrap().x, vec![0.1, 0.2]);
    }

    #[test]
    fn validate_rejects_bad_witness() {
        let inst = ProblemInstance {
            objective: Objective::quadratic_shift(vec![0.0]),
            system: ConstraintSystem::new(vec![hc(vec![1.0], 0.0)]).unwrap(),
            witness: vec![1.0],
            known_optimum: None,
            instance_id: "bad".into(),
            seed: 0,
        };
        assert!(matches!(
            inst.validate(),
            Err(Error::InfeasibleWitness { .. })
        ));
    }
}
