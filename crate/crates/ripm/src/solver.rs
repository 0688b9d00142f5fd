//! The random incremental penalty subgradient iteration.
//!
//! One step moves the iterate against the objective subgradient plus a
//! penalty pull from a single uniformly drawn constraint:
//!
//! ```text
//! x_{k+1} = x_k - s_k (subgrad f(x_k) + gamma_k grad h_{delta_k}(x_k; a_i, b_i))
//! ```
//!
//! A full-gradient variant averages the penalty pull over all m constraints
//! and draws nothing. Two weighted averages of the iterates run alongside,
//! with weights s_k and 1/s_k; each keeps only a running weighted sum plus
//! optional checkpoints, so memory stays O(n) at any iteration count.
//!
//! Determinism contract: the generator is seeded from a u64 and consumes
//! exactly one uniform index per incremental step and none on full-gradient
//! steps, so a (instance, schedule, seed, iters) tuple always reproduces the
//! same trace byte for byte.

use crate::error::{Error, Result};
use crate::huber;
use crate::model::{fmt_f64, ProblemInstance};
use crate::projection::{dist_to_feasible, DykstraConfig};
use crate::schedule::ScheduleTriple;
use crate::vecmath;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::{BufRead, Write};

/// How much per-step checking a run performs.
///
/// `Off` keeps only the always-on divergence guard. `Cheap` additionally
/// verifies the averaging convex-combination identity at every recorded
/// checkpoint. `Full` also asserts the per-path basic iteration inequality
/// at every incremental step, with the witness (and the known optimum, when
/// it is feasible) as the anchor point; that costs an extra objective
/// evaluation and a vector clone per step, so reserve it for short runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssertLevel {
    Off,
    Cheap,
    Full,
}

/// Where the iterate x_1 starts.
#[derive(Clone, Debug)]
pub enum InitPoint {
    /// The zero vector (default).
    Zero,
    /// The instance's stored feasible witness.
    Witness,
    /// A caller-supplied vector.
    Explicit(Vec<f64>),
}

impl InitPoint {
    fn resolve(&self, inst: &ProblemInstance) -> Result<Vec<f64>> {
        let n = inst.system.dim();
        match self {
            InitPoint::Zero => Ok(vec![0.0; n]),
            InitPoint::Witness => Ok(inst.witness.clone()),
            InitPoint::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: v.len(),
                    });
                }
                Ok(v.clone())
            }
        }
    }
}

/// Which iterations get a trace row. The final iteration is always
/// recorded regardless of the rule.
#[derive(Clone, Debug)]
pub enum Checkpoints {
    /// Record every n-th iteration (n >= 1).
    EveryN(u64),
    /// Record exactly these iteration numbers (deduplicated, sorted;
    /// entries outside 1..=iters are ignored).
    Explicit(Vec<u64>),
}

/// Checkpoint numbers kappa_j = ceil(1.25^j), deduplicated and capped at
/// `iters`, with `iters` itself always included. Roughly 60 points per
/// decade-and-a-half, evenly spaced on a log axis.
pub fn geometric_checkpoints(iters: u64) -> Vec<u64> {
    let mut ks = Vec::new();
    let mut v = 1.0f64;
    loop {
        let k = v.ceil() as u64;
        if k >= iters {
            break;
        }
        if ks.last() != Some(&k) {
            ks.push(k);
        }
        v *= 1.25;
    }
    ks.push(iters);
    ks
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub iters: u64,
    pub seed: u64,
    pub checkpoints: Checkpoints,
    pub assert_level: AssertLevel,
    pub init: InitPoint,
    /// Run a schedule even though validate_assumption rejects it. Needed
    /// for the reference simulation schedule on merely convex problems,
    /// whose noise series genuinely diverges.
    pub allow_unvalidated: bool,
    /// Use the full averaged penalty gradient instead of sampling.
    pub full_gradient: bool,
}

impl RunOptions {
    pub fn new(iters: u64, seed: u64) -> Self {
        RunOptions {
            iters,
            seed,
            checkpoints: Checkpoints::EveryN((iters / 100).max(1)),
            assert_level: AssertLevel::Cheap,
            init: InitPoint::Zero,
            allow_unvalidated: false,
            full_gradient: false,
        }
    }
}

/// Running extrema over a run, reported rather than thresholded.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    /// Largest objective subgradient norm seen at any visited iterate.
    pub max_subgrad_norm: f64,
    /// Largest iterate norm seen.
    pub max_x_norm: f64,
}

/// One weighted average of the iterate sequence, stored as a running
/// weighted sum so the memory cost is one vector regardless of iteration
/// count. Snapshots of the raw sums support truncated tail averages and the
/// convex-combination identity without replaying the run.
#[derive(Clone, Debug)]
pub struct AveragingAccumulator {
    weighted_sum: Vec<f64>,
    weight_total: f64,
    checkpoints: Vec<AvgCheckpoint>,
}

/// Raw accumulator state frozen at iteration k.
#[derive(Clone, Debug)]
pub struct AvgCheckpoint {
    pub k: u64,
    pub weight_total: f64,
    pub weighted_sum: Vec<f64>,
}

impl AveragingAccumulator {
    pub fn new(dim: usize) -> Self {
        AveragingAccumulator {
            weighted_sum: vec![0.0; dim],
            weight_total: 0.0,
            checkpoints: Vec::new(),
        }
    }

    pub fn feed(&mut self, x: &[f64], weight: f64) {
        assert_eq!(x.len(), self.weighted_sum.len(), "dimension mismatch");
        assert!(weight > 0.0, "averaging weights must be positive");
        vecmath::axpy(&mut self.weighted_sum, weight, x);
        self.weight_total += weight;
    }

    pub fn weight_total(&self) -> f64 {
        self.weight_total
    }

    /// The weighted average of everything fed so far.
    pub fn average(&self) -> Result<Vec<f64>> {
        if self.weight_total <= 0.0 {
            return Err(Error::EmptyAccumulator);
        }
        Ok(vecmath::scale(&self.weighted_sum, 1.0 / self.weight_total))
    }

    /// Freeze the current raw sums under iteration number k.
    pub fn snapshot(&mut self, k: u64) {
        self.checkpoints.push(AvgCheckpoint {
            k,
            weight_total: self.weight_total,
            weighted_sum: self.weighted_sum.clone(),
        });
    }

    pub fn checkpoints(&self) -> &[AvgCheckpoint] {
        &self.checkpoints
    }

    /// Average over only the iterates fed after checkpoint `cp`.
    pub fn truncated_average(&self, cp: &AvgCheckpoint) -> Result<Vec<f64>> {
        let tail_weight = self.weight_total - cp.weight_total;
        if tail_weight <= 0.0 {
            return Err(Error::EmptyAccumulator);
        }
        let mut v = vecmath::sub(&self.weighted_sum, &cp.weighted_sum);
        for e in &mut v {
            *e /= tail_weight;
        }
        Ok(v)
    }

    /// Largest relative deviation, over coordinates, between the direct
    /// average and its reconstruction from the checkpoint average and the
    /// tail average: (S_tau x_tau + (S_t - S_tau) x_tail) / S_t.
    pub fn convex_combination_residual(&self, cp: &AvgCheckpoint) -> Result<f64> {
        let direct = self.average()?;
        let head = vecmath::scale(&cp.weighted_sum, 1.0 / cp.weight_total);
        let tail = self.truncated_average(cp)?;
        let tail_weight = self.weight_total - cp.weight_total;
        let mut worst = 0.0f64;
        for i in 0..direct.len() {
            let recombined =
                (cp.weight_total * head[i] + tail_weight * tail[i]) / self.weight_total;
            let dev = (recombined - direct[i]).abs() / (1.0 + direct[i].abs());
            worst = worst.max(dev);
        }
        Ok(worst)
    }
}

/// What a single step did: the constraint it drew (None for full-gradient
/// steps) and the objective subgradient norm it measured.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub drawn_index: Option<usize>,
    pub subgrad_norm: f64,
}

/// Iteration state: the current iterate, the counter, the generator, and
/// the two averaging accumulators.
#[derive(Clone, Debug)]
pub struct SolverState {
    x: Vec<f64>,
    k: u64,
    rng: ChaCha8Rng,
    schedule: ScheduleTriple,
    avg_s: AveragingAccumulator,
    avg_sinv: AveragingAccumulator,
    stats: RunningStats,
    scratch: Vec<f64>,
}

const DIVERGENCE_NORM: f64 = 1e12;

impl SolverState {
    pub fn new(
        inst: &ProblemInstance,
        schedule: ScheduleTriple,
        seed: u64,
        init: &InitPoint,
    ) -> Result<Self> {
        let x = init.resolve(inst)?;
        let n = x.len();
        Ok(SolverState {
            x,
            k: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
            schedule,
            avg_s: AveragingAccumulator::new(n),
            avg_sinv: AveragingAccumulator::new(n),
            stats: RunningStats::default(),
            scratch: vec![0.0; n],
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn stats(&self) -> RunningStats {
        self.stats
    }

    pub fn avg_s(&self) -> &AveragingAccumulator {
        &self.avg_s
    }

    pub fn avg_sinv(&self) -> &AveragingAccumulator {
        &self.avg_sinv
    }

    pub fn avg_s_mut(&mut self) -> &mut AveragingAccumulator {
        &mut self.avg_s
    }

    pub fn avg_sinv_mut(&mut self) -> &mut AveragingAccumulator {
        &mut self.avg_sinv
    }

    /// Both weighted averages (weights s_k, then 1/s_k).
    pub fn current_averages(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.avg_s.average()?, self.avg_sinv.average()?))
    }

    /// One incremental step: draw a constraint index uniformly (exactly one
    /// generator draw), feed the accumulators with the pre-update iterate,
    /// then move against the combined direction.
    pub fn step(&mut self, inst: &ProblemInstance) -> Result<StepOutcome> {
        self.advance(inst, false)
    }

    /// One step of the deterministic baseline: identical update with the
    /// penalty gradient averaged over all constraints, no generator draw.
    pub fn step_full_gradient(&mut self, inst: &ProblemInstance) -> Result<StepOutcome> {
        self.advance(inst, true)
    }

    fn advance(&mut self, inst: &ProblemInstance, full: bool) -> Result<StepOutcome> {
        let k = self.k;
        let s = self.schedule.step_s(k);
        let gamma = self.schedule.penalty_gamma(k);
        let delta = self.schedule.smoothing_delta(k);
        assert!(
            delta > 0.0,
            "smoothing width must be positive at every step (delta_{k} = {delta})"
        );

        self.avg_s.feed(&self.x, s);
        self.avg_sinv.feed(&self.x, self.schedule.inv_step_s(k));

        inst.objective.subgradient_into(&self.x, &mut self.scratch);
        let subgrad_norm = vecmath::norm(&self.scratch);
        self.stats.max_subgrad_norm = self.stats.max_subgrad_norm.max(subgrad_norm);
        self.stats.max_x_norm = self.stats.max_x_norm.max(vecmath::norm(&self.x));

        let drawn_index = if full {
            let weight = gamma / inst.system.len() as f64;
            for c in inst.system.constraints() {
                let scale = huber::grad_h_delta_scale(&self.x, c, delta);
                if scale != 0.0 {
                    vecmath::axpy(&mut self.scratch, weight * scale, c.a());
                }
            }
            None
        } else {
            let i = self.rng.random_range(0..inst.system.len());
            let c = inst.system.constraint(i);
            let scale = huber::grad_h_delta_scale(&self.x, c, delta);
            if scale != 0.0 {
                vecmath::axpy(&mut self.scratch, gamma * scale, c.a());
            }
            Some(i)
        };

        if !vecmath::all_finite(&self.scratch) {
            return Err(Error::Diverged {
                k,
                norm: vecmath::norm(&self.x),
            });
        }
        vecmath::axpy(&mut self.x, -s, &self.scratch);
        self.k += 1;

        let norm = vecmath::norm(&self.x);
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            // Roll the update back (up to rounding) so the caller sees the
            // last usable iterate in its diagnostics.
            vecmath::axpy(&mut self.x, s, &self.scratch);
            self.k -= 1;
            return Err(Error::Diverged { k, norm });
        }
        Ok(StepOutcome {
            drawn_index,
            subgrad_norm,
        })
    }
}

/// The surely-holding per-step inequality, checked on an actual path: for
/// any feasible anchor y,
///
/// ```text
/// |x_{k+1} - y|^2 <= (1 - mu s_k)|x_k - y|^2 + 2 s_k (f(y) - f(x_k))
///                    + s_k gamma_k delta_k / (2 alpha_min)
///                    - 2 s_k gamma_k dist(x_k, X_i)
///                    + s_k^2 (|subgrad f(x_k)| + gamma_k)^2
/// ```
///
/// with X_i the halfspace drawn at step k (its distance has a closed form,
/// so this costs no projection solve). The additive tolerance is
/// 1e-9 (1 + |x_k - y|^2).
pub fn assert_basic_iter_inequality(
    x_k: &[f64],
    x_k1: &[f64],
    y: &[f64],
    inst: &ProblemInstance,
    sch: &ScheduleTriple,
    k: u64,
    i_k: usize,
) -> bool {
    assert!(
        inst.system.max_violation(y) <= 1e-9,
        "anchor point must be feasible"
    );
    let s = sch.step_s(k);
    let gamma = sch.penalty_gamma(k);
    let delta = sch.smoothing_delta(k);
    let mu = inst.objective.mu();

    let before = vecmath::dist(x_k, y).powi(2);
    let after = vecmath::dist(x_k1, y).powi(2);
    let f_gap = inst.objective.evaluate(y) - inst.objective.evaluate(x_k);
    let subgrad_norm = vecmath::norm(&inst.objective.subgradient(x_k));
    let dist_i = inst.system.constraint(i_k).dist(x_k);

    let rhs = (1.0 - mu * s) * before + 2.0 * s * f_gap
        + s * gamma * delta / (2.0 * inst.system.alpha_min())
        - 2.0 * s * gamma * dist_i
        + s * s * (subgrad_norm + gamma).powi(2);
    after <= rhs + 1e-9 * (1.0 + before)
}

/// One recorded trace line. Relative errors are filled only when the
/// instance carries a known optimum; they are measured as
/// |v - x*| / |x*| (with a unit denominator if x* happens to be zero).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub f_x: f64,
    pub f_avg_s: f64,
    pub f_avg_sinv: f64,
    pub dist_x: f64,
    pub dist_avg_s: f64,
    pub dist_avg_sinv: f64,
    pub max_violation: f64,
    pub rel_err_x: Option<f64>,
    pub rel_err_avg_s: Option<f64>,
    pub rel_err_avg_sinv: Option<f64>,
    pub s_k: f64,
    pub gamma_k: f64,
    pub delta_k: f64,
    pub max_subgrad_norm: f64,
}

pub const TRACE_HEADER: &str = "k,f_x,f_avg_s,f_avg_sinv,dist_x,dist_avg_s,dist_avg_sinv,\
max_violation,rel_err_x,rel_err_avg_s,rel_err_avg_sinv,s_k,gamma_k,delta_k,max_subgrad_norm";

/// A completed (or truncated) run: every recorded row plus the final
/// iterate and averages.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub schedule: String,
    pub seed: u64,
    pub iters: u64,
    pub rows: Vec<TraceRow>,
    pub final_x: Vec<f64>,
    pub final_avg_s: Vec<f64>,
    pub final_avg_sinv: Vec<f64>,
    pub stats: RunningStats,
}

impl RunTrace {
    /// The last recorded row. Complete runs always record the final
    /// iteration, so this is the state at k = iters.
    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("a completed run records its final row")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                fmt_f64(r.f_x),
                fmt_f64(r.f_avg_s),
                fmt_f64(r.f_avg_sinv),
                fmt_f64(r.dist_x),
                fmt_f64(r.dist_avg_s),
                fmt_f64(r.dist_avg_sinv),
                fmt_f64(r.max_violation),
                opt(r.rel_err_x),
                opt(r.rel_err_avg_s),
                opt(r.rel_err_avg_sinv),
                fmt_f64(r.s_k),
                fmt_f64(r.gamma_k),
                fmt_f64(r.delta_k),
                fmt_f64(r.max_subgrad_norm),
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("trace rows are ASCII")
    }
}

/// Parse rows back out of a trace CSV produced by `write_csv`.
pub fn read_trace_rows<R: BufRead>(r: R) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != TRACE_HEADER {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "unrecognized trace header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 15 fields, found {}", fields.len()),
            });
        }
        let req = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("field {}: {e}", i + 1),
            })
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                req(i).map(Some)
            }
        };
        rows.push(TraceRow {
            k: fields[0].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("field 1: {e}"),
            })?,
            f_x: req(1)?,
            f_avg_s: req(2)?,
            f_avg_sinv: req(3)?,
            dist_x: req(4)?,
            dist_avg_s: req(5)?,
            dist_avg_sinv: req(6)?,
            max_violation: req(7)?,
            rel_err_x: opt(8)?,
            rel_err_avg_s: opt(9)?,
            rel_err_avg_sinv: opt(10)?,
            s_k: req(11)?,
            gamma_k: req(12)?,
            delta_k: req(13)?,
            max_subgrad_norm: req(14)?,
        });
    }
    Ok(rows)
}

/// A run that did not finish: the error plus whatever trace had been
/// recorded, ending with the last usable iterate.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<RunTrace>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.partial {
            Some(t) => write!(
                f,
                "run aborted after recording {} rows: {}",
                t.rows.len(),
                self.error
            ),
            None => write!(f, "run rejected before the first step: {}", self.error),
        }
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Execute a full run and collect its trace.
///
/// The schedule must pass `validate_assumption` unless
/// `opts.allow_unvalidated` is set. Rows are recorded at the configured
/// checkpoints plus always at the final iteration; each row shows the
/// pre-update iterate x_k together with averages over x_1..x_k. With
/// `AssertLevel::Full`, every incremental step is checked against the
/// basic iteration inequality and a violation panics with the step number.
pub fn run(
    inst: &ProblemInstance,
    sch: &ScheduleTriple,
    opts: &RunOptions,
) -> std::result::Result<RunTrace, Box<RunFailure>> {
    assert!(opts.iters >= 1, "a run needs at least one iteration");
    let reject = |error: Error| Box::new(RunFailure {
        error,
        partial: None,
    });

    let report = sch.validate_assumption();
    let hard = report.definite_failures();
    if !hard.is_empty() && !opts.allow_unvalidated {
        let names: Vec<&str> = hard.iter().map(|c| c.name).collect();
        return Err(reject(Error::InvalidSchedule(format!(
            "{} fails {}; rerun with the unvalidated-schedule override to proceed anyway",
            report.schedule,
            names.join(", ")
        ))));
    }

    let mut explicit = match &opts.checkpoints {
        Checkpoints::EveryN(n) => {
            assert!(*n >= 1, "checkpoint stride must be at least 1");
            Vec::new()
        }
        Checkpoints::Explicit(ks) => {
            let mut ks: Vec<u64> = ks
                .iter()
                .copied()
                .filter(|&k| k >= 1 && k <= opts.iters)
                .collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        }
    };
    if let Checkpoints::Explicit(_) = opts.checkpoints {
        if explicit.last() != Some(&opts.iters) {
            explicit.push(opts.iters);
        }
    }
    let record_at = |k: u64, next_idx: usize| -> bool {
        match &opts.checkpoints {
            Checkpoints::EveryN(n) => k == opts.iters || k % n == 0,
            Checkpoints::Explicit(_) => explicit.get(next_idx) == Some(&k),
        }
    };

    let mut state = match SolverState::new(inst, sch.clone(), opts.seed, &opts.init) {
        Ok(s) => s,
        Err(e) => return Err(reject(e)),
    };

    // Feasible anchors for the full assertion level.
    let mut anchors: Vec<Vec<f64>> = Vec::new();
    if opts.assert_level == AssertLevel::Full && !opts.full_gradient {
        anchors.push(inst.witness.clone());
        if let Some(opt) = &inst.known_optimum {
            if inst.system.max_violation(&opt.x) <= 1e-9 {
                anchors.push(opt.x.clone());
            }
        }
    }

    let mut rows: Vec<TraceRow> = Vec::new();
    let mut explicit_idx = 0usize;
    let mut x_before: Vec<f64> = Vec::new();
    let dyk = DykstraConfig::default_for(&inst.system, inst.witness.as_slice());

    let fail = |error: Error, rows: Vec<TraceRow>, state: &SolverState, stats: RunningStats| {
        Box::new(RunFailure {
            error,
            partial: Some(RunTrace {
                schedule: format!("{sch:?}"),
                seed: opts.seed,
                iters: opts.iters,
                rows,
                final_x: state.x().to_vec(),
                final_avg_s: state.avg_s().average().unwrap_or_default(),
                final_avg_sinv: state.avg_sinv().average().unwrap_or_default(),
                stats,
            }),
        })
    };

    for k in 1..=opts.iters {
        let recording = record_at(k, explicit_idx);
        if recording || !anchors.is_empty() {
            x_before.clear();
            x_before.extend_from_slice(state.x());
        }

        let outcome = if opts.full_gradient {
            state.step_full_gradient(inst)
        } else {
            state.step(inst)
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => return Err(fail(e, rows, &state, state.stats())),
        };

        if let Some(i_k) = outcome.drawn_index {
            for y in &anchors {
                assert!(
                    assert_basic_iter_inequality(&x_before, state.x(), y, inst, sch, k, i_k),
                    "basic iteration inequality violated at step {k}"
                );
            }
        }

        if recording {
            explicit_idx += 1;
            state.avg_s_mut().snapshot(k);
            state.avg_sinv_mut().snapshot(k);
            let row = match build_row(k, &x_before, &state, inst, sch, &dyk) {
                Ok(r) => r,
                Err(e) => return Err(fail(e, rows, &state, state.stats())),
            };
            rows.push(row);

            if opts.assert_level != AssertLevel::Off {
                for acc in [state.avg_s(), state.avg_sinv()] {
                    if let Some(cp) = acc.checkpoints().first() {
                        if cp.k < k {
                            let res = acc
                                .convex_combination_residual(cp)
                                .expect("accumulator is nonempty at a checkpoint");
                            assert!(
                                res <= 1e-12,
                                "averaging identity drifted to {res:.3e} at step {k}"
                            );
                        }
                    }
                }
            }
        }
    }

    let (final_avg_s, final_avg_sinv) = match state.current_averages() {
        Ok(v) => v,
        Err(e) => return Err(fail(e, rows, &state, state.stats())),
    };
    Ok(RunTrace {
        schedule: format!("{sch:?}"),
        seed: opts.seed,
        iters: opts.iters,
        rows,
        final_x: state.x().to_vec(),
        final_avg_s,
        final_avg_sinv,
        stats: state.stats(),
    })
}

fn build_row(
    k: u64,
    x_k: &[f64],
    state: &SolverState,
    inst: &ProblemInstance,
    sch: &ScheduleTriple,
    dyk: &DykstraConfig,
) -> Result<TraceRow> {
    let (avg_s, avg_sinv) = state.current_averages()?;
    let rel = |v: &[f64]| -> Option<f64> {
        inst.known_optimum.as_ref().map(|opt| {
            let scale = vecmath::norm(&opt.x);
            vecmath::dist(v, &opt.x) / if scale > 0.0 { scale } else { 1.0 }
        })
    };
    Ok(TraceRow {
        k,
        f_x: inst.objective.evaluate(x_k),
        f_avg_s: inst.objective.evaluate(&avg_s),
        f_avg_sinv: inst.objective.evaluate(&avg_sinv),
        dist_x: dist_to_feasible(x_k, &inst.system, dyk)?,
        dist_avg_s: dist_to_feasible(&avg_s, &inst.system, dyk)?,
        dist_avg_sinv: dist_to_feasible(&avg_sinv, &inst.system, dyk)?,
        max_violation: inst.system.max_violation(x_k),
        rel_err_x: rel(x_k),
        rel_err_avg_s: rel(&avg_s),
        rel_err_avg_sinv: rel(&avg_sinv),
        s_k: sch.step_s(k),
        gamma_k: sch.penalty_gamma(k),
        delta_k: sch.smoothing_delta(k),
        max_subgrad_norm: state.stats().max_subgrad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstraintSystem, Objective};
    use std::sync::Arc;

    fn constant_schedule(s: f64, gamma: f64, delta: f64) -> ScheduleTriple {
        ScheduleTriple::Custom {
            step: Arc::new(move |_| s),
            gamma: Arc::new(move |_| gamma),
            delta: Arc::new(move |_| delta),
            label: "constant".into(),
        }
    }

    fn one_dim_instance() -> ProblemInstance {
        // f = (x-2)^2, constraint x <= 0; optimum of the constrained
        // problem at the origin.
        let system = ConstraintSystem::new(vec![
            crate::huber::HalfspaceConstraint::new(vec![1.0], 0.0).unwrap()
        ])
        .unwrap();
        ProblemInstance {
            objective: Objective::quadratic_shift(vec![2.0]),
            system,
            witness: vec![-1.0],
            known_optimum: None,
            instance_id: "one-dim".into(),
            seed: 0,
        }
    }

    fn square_instance() -> ProblemInstance {
        // f = |x - (2,2)|^2 over the box x1 <= 1, x2 <= 1 (plus slack
        // constraints), witness at the origin.
        let cs = vec![
            crate::huber::HalfspaceConstraint::new(vec![1.0, 0.0], 1.0).unwrap(),
            crate::huber::HalfspaceConstraint::new(vec![0.0, 1.0], 1.0).unwrap(),
        ];
        let system = ConstraintSystem::new(cs).unwrap();
        ProblemInstance {
            objective: Objective::quadratic_shift(vec![2.0, 2.0]),
            system,
            witness: vec![0.0, 0.0],
            known_optimum: Some(crate::model::KnownOptimum {
                x: vec![1.0, 1.0],
                provenance: crate::model::Provenance::Exact,
            }),
            instance_id: "square".into(),
            seed: 0,
        }
    }

    #[test]
    fn accumulator_constant_sequence() {
        let mut acc = AveragingAccumulator::new(2);
        for w in [0.5, 1.5, 2.0] {
            acc.feed(&[3.0, -1.0], w);
        }
        let avg = acc.average().unwrap();
        assert!((avg[0] - 3.0).abs() < 1e-15);
        assert!((avg[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn accumulator_two_point_weights() {
        let mut acc = AveragingAccumulator::new(1);
        acc.feed(&[1.0], 1.0);
        acc.feed(&[5.0], 3.0);
        assert_eq!(acc.average().unwrap(), vec![4.0]);
    }

    #[test]
    fn accumulator_empty_errors() {
        let acc = AveragingAccumulator::new(3);
        assert!(matches!(acc.average(), Err(Error::EmptyAccumulator)));
    }

    #[test]
    fn accumulator_truncated_and_identity() {
        let mut acc = AveragingAccumulator::new(1);
        acc.feed(&[1.0], 1.0);
        acc.feed(&[2.0], 1.0);
        acc.snapshot(2);
        acc.feed(&[10.0], 2.0);
        let cp = &acc.checkpoints()[0];
        assert_eq!(acc.truncated_average(cp).unwrap(), vec![10.0]);
        assert!(acc.convex_combination_residual(cp).unwrap() <= 1e-15);
    }

    #[test]
    fn hand_worked_one_dim_step() {
        // From x_1 = 0 with s = 0.1, gamma = 1, delta = 0.5: the objective
        // pulls with -4, the penalty with p'(0) = 1/2, so
        // x_2 = 0 - 0.1 (-4 + 0.5) = 0.35.
        let inst = one_dim_instance();
        let sch = constant_schedule(0.1, 1.0, 0.5);
        let mut state = SolverState::new(&inst, sch, 7, &InitPoint::Zero).unwrap();
        let out = state.step(&inst).unwrap();
        assert_eq!(out.drawn_index, Some(0));
        assert!((state.x()[0] - 0.35).abs() < 1e-15);
        assert_eq!(state.k(), 2);
        assert_eq!(out.subgrad_norm, 4.0);
    }

    #[test]
    fn interior_point_is_stationary() {
        // At the objective's own minimum, strictly inside the feasible
        // set with margin beyond delta, both pulls vanish.
        let inst = square_instance();
        let sch = constant_schedule(0.1, 5.0, 0.5);
        let mut state =
            SolverState::new(&inst, sch, 3, &InitPoint::Explicit(vec![-1.0, -1.0])).unwrap();
        let inst2 = ProblemInstance {
            objective: Objective::quadratic_shift(vec![-1.0, -1.0]),
            ..inst
        };
        state.step(&inst2).unwrap();
        assert_eq!(state.x(), &[-1.0, -1.0]);
    }

    #[test]
    fn feasible_margin_gives_pure_subgradient_step() {
        let inst = square_instance();
        let sch = constant_schedule(0.05, 100.0, 0.25);
        // Residuals at the origin are -1, well below -delta.
        let mut state = SolverState::new(&inst, sch, 5, &InitPoint::Zero).unwrap();
        state.step(&inst).unwrap();
        // Pure step against subgrad f(0) = -2 (2,2).
        assert!((state.x()[0] - 0.2).abs() < 1e-15);
        assert!((state.x()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_constraint_full_equals_incremental() {
        let inst = one_dim_instance();
        let sch = constant_schedule(0.1, 2.0, 0.5);
        let mut a = SolverState::new(&inst, sch.clone(), 11, &InitPoint::Zero).unwrap();
        let mut b = SolverState::new(&inst, sch, 11, &InitPoint::Zero).unwrap();
        for _ in 0..20 {
            a.step(&inst).unwrap();
            b.step_full_gradient(&inst).unwrap();
        }
        assert_eq!(a.x(), b.x());
    }

    #[test]
    fn run_single_iteration() {
        let inst = square_instance();
        let sch = constant_schedule(0.1, 1.0, 0.5);
        let opts = RunOptions::new(1, 42);
        let trace = run(&inst, &sch, &opts).unwrap();
        assert_eq!(trace.rows.len(), 1);
        let row = trace.final_row();
        assert_eq!(row.k, 1);
        // Averages over a single point equal that point: x_1 = 0.
        assert_eq!(row.f_avg_s, row.f_x);
        assert_eq!(row.f_avg_sinv, row.f_x);
        assert_eq!(trace.final_avg_s, vec![0.0, 0.0]);
    }

    #[test]
    fn run_is_deterministic() {
        let inst = square_instance();
        let sch = ScheduleTriple::StronglyConvex {
            mu: 2.0,
            g: 0.5,
            d: 2.0,
        };
        let mut opts = RunOptions::new(500, 1234);
        opts.checkpoints = Checkpoints::EveryN(50);
        let a = run(&inst, &sch, &opts).unwrap();
        let b = run(&inst, &sch, &opts).unwrap();
        assert_eq!(a.csv_string(), b.csv_string());
        let c = run(
            &inst,
            &sch,
            &RunOptions {
                seed: 1235,
                ..opts.clone()
            },
        )
        .unwrap();
        assert_ne!(a.csv_string(), c.csv_string());
    }

    #[test]
    fn final_row_always_recorded() {
        let inst = square_instance();
        let sch = constant_schedule(0.01, 1.0, 0.5);
        let mut opts = RunOptions::new(7, 9);
        opts.checkpoints = Checkpoints::EveryN(3);
        let trace = run(&inst, &sch, &opts).unwrap();
        let ks: Vec<u64> = trace.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![3, 6, 7]);

        opts.checkpoints = Checkpoints::Explicit(vec![2, 2, 900, 5]);
        let trace = run(&inst, &sch, &opts).unwrap();
        let ks: Vec<u64> = trace.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![2, 5, 7]);
    }

    #[test]
    fn unvalidated_schedule_rejected_without_override() {
        let inst = square_instance();
        // Its squared noise series diverges, a definite validation failure.
        let sch = ScheduleTriple::SimulationCvx {
            s_scale: 0.1,
            c_gamma: 1.0,
        };
        let mut opts = RunOptions::new(10, 1);
        opts.allow_unvalidated = false;
        let err = run(&inst, &sch, &opts).unwrap_err();
        assert!(matches!(err.error, Error::InvalidSchedule(_)));
        assert!(err.error.to_string().contains("noise_sum_finite"));
        assert!(err.partial.is_none());

        opts.allow_unvalidated = true;
        assert!(run(&inst, &sch, &opts).is_ok());

        // Custom schedules are merely unchecked, which is not a failure:
        // they run without the override.
        let custom = constant_schedule(0.1, 1.0, 0.5);
        let strict = RunOptions::new(10, 1);
        assert!(!strict.allow_unvalidated);
        assert!(run(&inst, &custom, &strict).is_ok());
    }

    #[test]
    fn divergent_run_reports_partial_trace() {
        let inst = square_instance();
        // An absurd constant step turns the quadratic into an expanding map.
        let sch = constant_schedule(1e9, 1.0, 0.5);
        let mut opts = RunOptions::new(1000, 3);
        opts.allow_unvalidated = true;
        opts.checkpoints = Checkpoints::EveryN(1);
        let err = run(&inst, &sch, &opts).unwrap_err();
        assert!(matches!(err.error, Error::Diverged { .. }));
        let partial = err.partial.expect("divergence keeps the partial trace");
        assert!(!partial.rows.is_empty() || partial.final_x.len() == 2);
        assert!(partial.final_x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn full_assert_level_holds_on_a_real_run() {
        let inst = square_instance();
        let sch = ScheduleTriple::StronglyConvex {
            mu: 2.0,
            g: 0.5,
            d: 2.0,
        };
        let mut opts = RunOptions::new(300, 77);
        opts.assert_level = AssertLevel::Full;
        run(&inst, &sch, &opts).unwrap();
    }

    #[test]
    fn basic_inequality_mutation_has_teeth() {
        let inst = one_dim_instance();
        let sch = constant_schedule(0.1, 1.0, 0.5);
        let x_k = vec![0.0];
        let x_k1 = vec![0.35];
        let y = vec![-0.0];
        assert!(assert_basic_iter_inequality(
            &x_k, &x_k1, &y, &inst, &sch, 1, 0
        ));
        // Push the post-step point far off the true update.
        let corrupted = vec![0.35 + 10.0 * 0.1];
        assert!(!assert_basic_iter_inequality(
            &x_k, &corrupted, &y, &inst, &sch, 1, 0
        ));
    }

    #[test]
    fn csv_round_trip() {
        let inst = square_instance();
        let sch = ScheduleTriple::StronglyConvex {
            mu: 2.0,
            g: 0.5,
            d: 2.0,
        };
        let mut opts = RunOptions::new(40, 5);
        opts.checkpoints = Checkpoints::EveryN(10);
        let trace = run(&inst, &sch, &opts).unwrap();
        let csv = trace.csv_string();
        let rows = read_trace_rows(csv.as_bytes()).unwrap();
        assert_eq!(rows, trace.rows);
    }

    #[test]
    fn geometric_checkpoints_shape() {
        let ks = geometric_checkpoints(100);
        assert_eq!(ks.first(), Some(&1));
        assert_eq!(ks.last(), Some(&100));
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(geometric_checkpoints(1), vec![1]);
    }
}
