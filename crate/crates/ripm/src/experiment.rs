//! Instance generation, batch experiment runs, rate fitting, and reports.
//!
//! The reference setup: n-dimensional objectives shifted to a random point
//! x0, with m halfspaces whose normals and offsets come from a normal
//! distribution, arranged so that x0 lands either inside the feasible set
//! (the constrained optimum is then x0 itself) or outside it. A suite runs
//! every generated instance over several solver seeds, averages the traces
//! at shared geometric checkpoints, fits log-log slopes, and writes CSVs
//! plus structural SVG charts.

use crate::error::{Error, Result};
use crate::model::{fmt_f64, KnownOptimum, Objective, ProblemInstance};
use crate::model::ConstraintSystem;
use crate::huber::HalfspaceConstraint;
use crate::projection::reference_solution;
use crate::schedule::ScheduleTriple;
use crate::solver::{
    self, geometric_checkpoints, AssertLevel, Checkpoints, InitPoint, RunOptions, RunTrace,
    TraceRow,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    QuadraticShift,
    L1Shift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimumLocation {
    /// x0 is feasible, so the unconstrained minimum solves the constrained
    /// problem and the optimum is known exactly.
    Inside,
    /// x0 violates at least one constraint; the optimum comes from the
    /// reference oracle.
    Outside,
}

/// Recipe for one random instance.
#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub n: usize,
    pub m: usize,
    pub objective_kind: ObjectiveKind,
    pub optimum_location: OptimumLocation,
    pub seed: u64,
    /// Standard deviation of the constraint normal coordinates.
    pub constraint_scale: f64,
}

impl GeneratorSpec {
    pub fn new(
        n: usize,
        m: usize,
        objective_kind: ObjectiveKind,
        optimum_location: OptimumLocation,
        seed: u64,
    ) -> Self {
        GeneratorSpec {
            n,
            m,
            objective_kind,
            optimum_location,
            seed,
            constraint_scale: 1.0,
        }
    }

    /// Stable identifier used in filenames and aggregate rows.
    pub fn label(&self) -> String {
        let kind = match self.objective_kind {
            ObjectiveKind::QuadraticShift => "quad",
            ObjectiveKind::L1Shift => "l1",
        };
        let loc = match self.optimum_location {
            OptimumLocation::Inside => "in",
            OptimumLocation::Outside => "out",
        };
        format!("{kind}_{loc}_m{}_n{}_seed{}", self.m, self.n, self.seed)
    }
}

const OUTSIDE_REDRAW_BUDGET: usize = 100;
const L1_REFERENCE_ITERS: usize = 2000;

/// Draw an instance according to the spec. Deterministic in the seed.
pub fn generate(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    assert!(spec.n >= 1 && spec.m >= 1, "need at least one dimension and constraint");
    assert!(spec.constraint_scale > 0.0, "constraint scale must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal_vec = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..spec.n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let x0 = normal_vec(&mut rng, 1.0);
    let anchor = match spec.optimum_location {
        // Constraints get their slack around x0 itself.
        OptimumLocation::Inside => x0.clone(),
        // Constraints get their slack around a separate feasible witness,
        // leaving x0 free to fall outside.
        OptimumLocation::Outside => normal_vec(&mut rng, 1.0),
    };

    let mut constraints = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let a = normal_vec(&mut rng, spec.constraint_scale);
        let slack: f64 = rng.sample::<f64, _>(StandardNormal);
        let b = a.iter().zip(&anchor).map(|(ai, xi)| ai * xi).sum::<f64>() + slack.abs();
        constraints.push(HalfspaceConstraint::new(a, b)?);
    }
    let system = ConstraintSystem::new(constraints)?;

    let x0 = match spec.optimum_location {
        OptimumLocation::Inside => x0,
        OptimumLocation::Outside => {
            // The first draw usually already violates something; redraw a
            // bounded number of times if it happens to be feasible.
            let mut candidate = x0;
            let mut attempts = 1;
            while system.max_violation(&candidate) <= 0.0 {
                if attempts >= OUTSIDE_REDRAW_BUDGET {
                    return Err(Error::GeneratorExhausted { attempts });
                }
                candidate = normal_vec(&mut rng, 1.0);
                attempts += 1;
            }
            candidate
        }
    };

    let objective = match spec.objective_kind {
        ObjectiveKind::QuadraticShift => Objective::quadratic_shift(x0),
        ObjectiveKind::L1Shift => Objective::l1_shift(x0),
    };
    let mut inst = ProblemInstance {
        objective,
        system,
        witness: anchor,
        known_optimum: None,
        instance_id: spec.label(),
        seed: spec.seed,
    };
    let (x_star, provenance) = reference_solution(&inst, L1_REFERENCE_ITERS, spec.seed)?;
    inst.known_optimum = Some(KnownOptimum {
        x: x_star,
        provenance,
    });
    inst.validate()?;
    Ok(inst)
}

/// Which runs a suite performs for each spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Incremental,
    FullGradient,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Incremental => "incremental",
            Variant::FullGradient => "full_gradient",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub specs: Vec<GeneratorSpec>,
    pub schedule: ScheduleTriple,
    pub iters: u64,
    /// Solver seeds; the first `repetitions` of them are used per spec.
    pub seeds: Vec<u64>,
    pub repetitions: usize,
    pub allow_unvalidated: bool,
    /// Also run the deterministic full-gradient baseline once per spec.
    pub include_full_gradient: bool,
}

impl SuiteConfig {
    pub fn new(specs: Vec<GeneratorSpec>, schedule: ScheduleTriple, iters: u64) -> Self {
        SuiteConfig {
            specs,
            schedule,
            iters,
            seeds: vec![1],
            repetitions: 1,
            allow_unvalidated: false,
            include_full_gradient: false,
        }
    }
}

/// One run's outcome; failures are recorded, not propagated, so a suite
/// always completes.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub spec_label: String,
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<RunTrace, String>,
}

/// Seed-averaged values at one shared checkpoint. The f-gaps are
/// |mean_seeds f(v) - f*|, matching the expectation-level rate statements;
/// they are present only when the instance carries a known optimum.
#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub spec_label: String,
    pub variant: Variant,
    pub k: u64,
    pub n_runs: usize,
    pub fgap_x: Option<f64>,
    pub fgap_avg_s: Option<f64>,
    pub fgap_avg_sinv: Option<f64>,
    pub rel_err_x: Option<f64>,
    pub rel_err_avg_s: Option<f64>,
    pub rel_err_avg_sinv: Option<f64>,
    pub dist_x: f64,
    pub dist_avg_s: f64,
    pub dist_avg_sinv: f64,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub schedule: String,
    pub iters: u64,
    pub validation: crate::schedule::ValidationReport,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

impl SuiteReport {
    /// The aggregate curve of one quantity for one (spec, variant),
    /// skipping checkpoints where it is missing.
    pub fn aggregate_points(
        &self,
        spec_label: &str,
        variant: Variant,
        quantity: Quantity,
    ) -> Vec<(u64, f64)> {
        self.aggregates
            .iter()
            .filter(|r| r.spec_label == spec_label && r.variant == variant)
            .filter_map(|r| {
                let v = match quantity {
                    Quantity::FgapAvgS => r.fgap_avg_s,
                    Quantity::FgapAvgSinv => r.fgap_avg_sinv,
                    Quantity::DistAvg => Some(r.dist_avg_s),
                };
                v.map(|v| (r.k, v))
            })
            .collect()
    }
}

/// Generate every spec's instance, run it over the configured seeds (in
/// parallel), and aggregate the traces at shared geometric checkpoints.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.specs.is_empty() {
        return Err(Error::EmptySuite);
    }
    if cfg.repetitions == 0 || cfg.repetitions > cfg.seeds.len() {
        return Err(Error::Config(format!(
            "repetitions must be in 1..={}, got {}",
            cfg.seeds.len(),
            cfg.repetitions
        )));
    }

    let instances: Vec<(GeneratorSpec, ProblemInstance)> = cfg
        .specs
        .iter()
        .map(|s| generate(s).map(|i| (s.clone(), i)))
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(usize, Variant, u64)> = Vec::new();
    for (idx, _) in instances.iter().enumerate() {
        for seed in &cfg.seeds[..cfg.repetitions] {
            jobs.push((idx, Variant::Incremental, *seed));
        }
        if cfg.include_full_gradient {
            jobs.push((idx, Variant::FullGradient, cfg.seeds[0]));
        }
    }

    let checkpoints = geometric_checkpoints(cfg.iters);
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(idx, variant, seed)| {
            let (spec, inst) = &instances[idx];
            let opts = RunOptions {
                iters: cfg.iters,
                seed,
                checkpoints: Checkpoints::Explicit(checkpoints.clone()),
                assert_level: AssertLevel::Cheap,
                init: InitPoint::Zero,
                allow_unvalidated: cfg.allow_unvalidated,
                full_gradient: variant == Variant::FullGradient,
            };
            let outcome = solver::run(inst, &cfg.schedule, &opts).map_err(|e| e.to_string());
            RunRecord {
                spec_label: spec.label(),
                variant,
                seed,
                outcome,
            }
        })
        .collect();

    let mut aggregates = Vec::new();
    for (spec, inst) in &instances {
        let f_star = inst
            .known_optimum
            .as_ref()
            .map(|o| inst.objective.evaluate(&o.x));
        for variant in [Variant::Incremental, Variant::FullGradient] {
            // Sort by seed so the mean is summed in a canonical order and
            // the aggregate is exactly invariant to seed permutations.
            let mut traces: Vec<(&u64, &RunTrace)> = records
                .iter()
                .filter(|r| r.spec_label == spec.label() && r.variant == variant)
                .filter_map(|r| r.outcome.as_ref().ok().map(|t| (&r.seed, t)))
                .collect();
            traces.sort_by_key(|(seed, _)| **seed);
            if traces.is_empty() {
                continue;
            }
            aggregates.extend(aggregate_traces(
                &spec.label(),
                variant,
                &traces.iter().map(|(_, t)| *t).collect::<Vec<_>>(),
                f_star,
            ));
        }
    }

    Ok(SuiteReport {
        schedule: format!("{:?}", cfg.schedule),
        iters: cfg.iters,
        validation: cfg.schedule.validate_assumption(),
        records,
        aggregates,
    })
}

fn aggregate_traces(
    spec_label: &str,
    variant: Variant,
    traces: &[&RunTrace],
    f_star: Option<f64>,
) -> Vec<AggregateRow> {
    let n_rows = traces[0].rows.len();
    debug_assert!(
        traces.iter().all(|t| t.rows.len() == n_rows),
        "runs of one spec share their checkpoint grid"
    );
    let n = traces.len() as f64;
    let mean = |get: &dyn Fn(&TraceRow) -> f64, i: usize| -> f64 {
        traces.iter().map(|t| get(&t.rows[i])).sum::<f64>() / n
    };
    let mean_opt = |get: &dyn Fn(&TraceRow) -> Option<f64>, i: usize| -> Option<f64> {
        traces
            .iter()
            .map(|t| get(&t.rows[i]))
            .collect::<Option<Vec<f64>>>()
            .map(|vs| vs.iter().sum::<f64>() / n)
    };
    (0..n_rows)
        .map(|i| {
            let k = traces[0].rows[i].k;
            debug_assert!(traces.iter().all(|t| t.rows[i].k == k));
            let fgap = |get: &dyn Fn(&TraceRow) -> f64| -> Option<f64> {
                f_star.map(|fs| (mean(get, i) - fs).abs())
            };
            AggregateRow {
                spec_label: spec_label.to_string(),
                variant,
                k,
                n_runs: traces.len(),
                fgap_x: fgap(&|r| r.f_x),
                fgap_avg_s: fgap(&|r| r.f_avg_s),
                fgap_avg_sinv: fgap(&|r| r.f_avg_sinv),
                rel_err_x: mean_opt(&|r| r.rel_err_x, i),
                rel_err_avg_s: mean_opt(&|r| r.rel_err_avg_s, i),
                rel_err_avg_sinv: mean_opt(&|r| r.rel_err_avg_sinv, i),
                dist_x: mean(&|r| r.dist_x, i),
                dist_avg_s: mean(&|r| r.dist_avg_s, i),
                dist_avg_sinv: mean(&|r| r.dist_avg_sinv, i),
            }
        })
        .collect()
}

/// Quantities whose decay order the theory pins down.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    /// |f(x_t^av) - f*| with the s-weighted average.
    FgapAvgS,
    /// |f(x-bar_t^av) - f*| with the 1/s-weighted average.
    FgapAvgSinv,
    /// Distance of the s-weighted average to the feasible set.
    DistAvg,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::FgapAvgS => "fgap_avg_s",
            Quantity::FgapAvgSinv => "fgap_avg_sinv",
            Quantity::DistAvg => "dist_avg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgap_avg_s" => Ok(Quantity::FgapAvgS),
            "fgap_avg_sinv" => Ok(Quantity::FgapAvgSinv),
            "dist_avg" => Ok(Quantity::DistAvg),
            other => Err(Error::Config(format!(
                "unknown quantity {other:?}; expected fgap_avg_s, fgap_avg_sinv, or dist_avg"
            ))),
        }
    }
}

/// Pull one quantity's (k, value) points out of raw trace rows. The f-gap
/// quantities need the optimal value.
pub fn trace_quantity_points(
    rows: &[TraceRow],
    quantity: Quantity,
    f_star: Option<f64>,
) -> Result<Vec<(u64, f64)>> {
    rows.iter()
        .map(|r| {
            let v = match quantity {
                Quantity::FgapAvgS | Quantity::FgapAvgSinv => {
                    let fs = f_star.ok_or_else(|| {
                        Error::Config(format!(
                            "{} needs the optimal value, and none is available",
                            quantity.as_str()
                        ))
                    })?;
                    let f = if quantity == Quantity::FgapAvgS {
                        r.f_avg_s
                    } else {
                        r.f_avg_sinv
                    };
                    (f - fs).abs()
                }
                Quantity::DistAvg => r.dist_avg_s,
            };
            Ok((r.k, v))
        })
        .collect()
}

/// Least-squares line through (log t, log q_t).
#[derive(Clone, Copy, Debug)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (u64, u64),
    pub quantity: Quantity,
}

const FIT_MIN_POINTS: usize = 10;

/// Fit log(quantity) against log(t) over the checkpoints inside the
/// window. The slope estimates the decay exponent; log factors from the
/// theoretical rates bend the line slightly and surface as intercept
/// drift, which is why assertions on the slope use wide intervals.
pub fn fit_rate(
    points: &[(u64, f64)],
    quantity: Quantity,
    window: (u64, u64),
) -> Result<RateFit> {
    assert!(window.0 < window.1, "empty fit window");
    let selected: Vec<(u64, f64)> = points
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if selected.len() < FIT_MIN_POINTS {
        return Err(Error::TooFewCheckpoints {
            needed: FIT_MIN_POINTS,
            found: selected.len(),
        });
    }
    if let Some(&(t, value)) = selected.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonPositiveQuantity { t, value });
    }

    let xs: Vec<f64> = selected.iter().map(|(t, _)| (*t as f64).ln()).collect();
    let ys: Vec<f64> = selected.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window,
        quantity,
    })
}

const TRACKED_QUANTITIES: [&str; 6] = [
    "rel_err_x",
    "fgap_avg_s",
    "fgap_avg_sinv",
    "dist_x",
    "dist_avg_s",
    "dist_avg_sinv",
];

fn aggregate_field(row: &AggregateRow, name: &str) -> Option<f64> {
    match name {
        "rel_err_x" => row.rel_err_x,
        "fgap_avg_s" => row.fgap_avg_s,
        "fgap_avg_sinv" => row.fgap_avg_sinv,
        "dist_x" => Some(row.dist_x),
        "dist_avg_s" => Some(row.dist_avg_s),
        "dist_avg_sinv" => Some(row.dist_avg_sinv),
        _ => unreachable!("unknown tracked quantity"),
    }
}

pub const AGGREGATE_HEADER: &str = "spec,variant,k,n_runs,fgap_x,fgap_avg_s,fgap_avg_sinv,\
rel_err_x,rel_err_avg_s,rel_err_avg_sinv,dist_x,dist_avg_s,dist_avg_sinv";

fn write_aggregate_csv<W: Write>(report: &SuiteReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in &report.aggregates {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.spec_label,
            r.variant.as_str(),
            r.k,
            r.n_runs,
            opt(r.fgap_x),
            opt(r.fgap_avg_s),
            opt(r.fgap_avg_sinv),
            opt(r.rel_err_x),
            opt(r.rel_err_avg_s),
            opt(r.rel_err_avg_sinv),
            fmt_f64(r.dist_x),
            fmt_f64(r.dist_avg_s),
            fmt_f64(r.dist_avg_sinv),
        )?;
    }
    Ok(())
}

fn write_summary<W: Write>(report: &SuiteReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "schedule: {}", report.schedule)?;
    writeln!(w, "iterations per run: {}", report.iters)?;
    writeln!(w, "{}", report.validation)?;
    let failures: Vec<&RunRecord> = report
        .records
        .iter()
        .filter(|r| r.outcome.is_err())
        .collect();
    writeln!(
        w,
        "runs: {} total, {} failed",
        report.records.len(),
        failures.len()
    )?;
    for r in failures {
        writeln!(
            w,
            "  FAILED {} {} seed {}: {}",
            r.spec_label,
            r.variant.as_str(),
            r.seed,
            r.outcome.as_ref().unwrap_err()
        )?;
    }
    writeln!(w)?;

    let mut keys: Vec<(String, Variant)> = Vec::new();
    for r in &report.aggregates {
        let key = (r.spec_label.clone(), r.variant);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (label, variant) in keys {
        let rows: Vec<&AggregateRow> = report
            .aggregates
            .iter()
            .filter(|r| r.spec_label == label && r.variant == variant)
            .collect();
        let last = rows.last().expect("aggregate groups are nonempty");
        writeln!(w, "{label} [{}], {} runs", variant.as_str(), last.n_runs)?;
        let show = |v: Option<f64>| v.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        writeln!(
            w,
            "  final k={}: fgap_avg_s={} fgap_avg_sinv={} rel_err_x={} dist_avg_sinv={:.3e}",
            last.k,
            show(last.fgap_avg_s),
            show(last.fgap_avg_sinv),
            show(last.rel_err_x),
            last.dist_avg_sinv,
        )?;
        // Slope over the last two decades of checkpoints, where the
        // asymptotic order has had a chance to set in.
        let window = ((report.iters / 100).max(1), report.iters);
        for q in [Quantity::FgapAvgS, Quantity::FgapAvgSinv, Quantity::DistAvg] {
            let pts: Vec<(u64, f64)> = rows
                .iter()
                .filter_map(|r| {
                    let v = match q {
                        Quantity::FgapAvgS => r.fgap_avg_s,
                        Quantity::FgapAvgSinv => r.fgap_avg_sinv,
                        Quantity::DistAvg => Some(r.dist_avg_s),
                    };
                    v.map(|v| (r.k, v))
                })
                .collect();
            match fit_rate(&pts, q, window) {
                Ok(fit) => writeln!(
                    w,
                    "  {}: slope {:.3} (r^2 {:.3}) over [{}, {}]",
                    q.as_str(),
                    fit.slope,
                    fit.r_squared,
                    window.0,
                    window.1
                )?,
                Err(e) => writeln!(w, "  {}: fit unavailable ({e})", q.as_str())?,
            }
        }
    }
    Ok(())
}

/// Write the suite's artifacts under `dir`: per-run trace CSVs in runs/,
/// aggregate.csv, summary.txt, and one log-log SVG per tracked quantity.
/// Returns the paths written.
pub fn emit_report(report: &SuiteReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.aggregates.is_empty() && report.records.is_empty() {
        return Err(Error::EmptySuite);
    }
    fs::create_dir_all(dir.join("runs"))?;
    let mut written = Vec::new();

    for r in &report.records {
        if let Ok(trace) = &r.outcome {
            let path = dir
                .join("runs")
                .join(format!("{}_{}_seed{}.csv", r.spec_label, r.variant.as_str(), r.seed));
            let mut f = fs::File::create(&path)?;
            trace.write_csv(&mut f)?;
            written.push(path);
        }
    }

    let agg_path = dir.join("aggregate.csv");
    write_aggregate_csv(report, fs::File::create(&agg_path)?)?;
    written.push(agg_path);

    let summary_path = dir.join("summary.txt");
    write_summary(report, fs::File::create(&summary_path)?)?;
    written.push(summary_path);

    for name in TRACKED_QUANTITIES {
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        let mut keys: Vec<(String, Variant)> = Vec::new();
        for r in &report.aggregates {
            let key = (r.spec_label.clone(), r.variant);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        for (label, variant) in keys {
            let pts: Vec<(f64, f64)> = report
                .aggregates
                .iter()
                .filter(|r| r.spec_label == label && r.variant == variant)
                .filter_map(|r| aggregate_field(r, name).map(|v| (r.k as f64, v)))
                .filter(|(k, v)| *k > 0.0 && *v > 0.0 && v.is_finite())
                .collect();
            series.push((format!("{label} [{}]", variant.as_str()), pts));
        }
        let path = dir.join(format!("{name}.svg"));
        fs::write(&path, svg_loglog(name, &series))?;
        written.push(path);
    }
    Ok(written)
}

const SVG_PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
    "#7f7f7f", "#bcbd22", "#aec7e8", "#98df8a",
];

/// A structural log-log line chart: axes with decade gridlines, one
/// polyline per series, a text legend. No styling beyond what makes the
/// curves readable.
fn svg_loglog(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (width, height) = (800.0, 560.0);
    let (ml, mr, mt, mb) = (70.0, 24.0, 40.0, 50.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);

    let mut lx = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ly = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for &(x, y) in pts {
            lx = (lx.0.min(x.log10()), lx.1.max(x.log10()));
            ly = (ly.0.min(y.log10()), ly.1.max(y.log10()));
        }
    }
    let has_data = lx.0.is_finite();
    if !has_data {
        lx = (0.0, 1.0);
        ly = (0.0, 1.0);
    }
    let pad = |r: (f64, f64)| -> (f64, f64) {
        if r.1 - r.0 < 1e-9 {
            (r.0 - 0.5, r.1 + 0.5)
        } else {
            r
        }
    };
    let lx = pad((lx.0.floor(), lx.1.ceil()));
    let ly = pad((ly.0.floor(), ly.1.ceil()));
    let px = |x: f64| ml + (x.log10() - lx.0) / (lx.1 - lx.0) * pw;
    let py = |y: f64| mt + ph - (y.log10() - ly.0) / (ly.1 - ly.0) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        ml + pw / 2.0
    ));
    s.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n"
    ));

    let mut e = lx.0 as i64;
    while (e as f64) <= lx.1 {
        let x = px(10f64.powi(e as i32));
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{mt}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            mt + ph
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{e}</text>\n",
            mt + ph + 18.0
        ));
        e += 1;
    }
    let mut e = ly.0 as i64;
    while (e as f64) <= ly.1 {
        let y = py(10f64.powi(e as i32));
        s.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            ml + pw
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>\n",
            ml - 6.0,
            y + 4.0
        ));
        e += 1;
    }

    if !has_data {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no positive data</text>\n",
            ml + pw / 2.0,
            mt + ph / 2.0
        ));
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        let yl = mt + 16.0 + 16.0 * i as f64;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{yl:.1}\" x2=\"{:.1}\" y2=\"{yl:.1}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            ml + pw - 180.0,
            ml + pw - 160.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{label}</text>\n",
            ml + pw - 154.0,
            yl + 4.0
        ));
    }
    s.push_str("</svg>\n");
    s
}
