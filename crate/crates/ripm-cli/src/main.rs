//! Command line front end: generate instances, run the solver, drive
//! experiment suites, fit decay rates, and check the penalization theory.
//!
//! Exit codes: 0 on success, 1 when a run or a theory check fails, 2 when
//! the configuration or the input files are unusable.

use clap::{Parser, Subcommand};
use ripm::config::{self, ExperimentConfig};
use ripm::diagnostics::{
    infeasibility_scan, strong_convexity_gap_check, write_gap_csv, write_scan_csv,
};
use ripm::experiment::{self, Quantity};
use ripm::model::{load_instance, save_instance};
use ripm::solver::{self, Checkpoints, RunOptions};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ripm",
    version,
    about = "Random incremental penalty method for linearly constrained convex problems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random problem instance from a spec file.
    Generate {
        /// TOML file with a [problem] table of generator keys.
        #[arg(long)]
        spec: PathBuf,
        /// Where to write the instance.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the solver on one instance and write the iterate trace.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// TOML file with a [schedule] table.
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        iters: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Record every T-th iteration (default: about 100 rows).
        #[arg(long, value_name = "T")]
        trace_every: Option<u64>,
        /// Inequality checking: off, cheap, or full.
        #[arg(long, default_value = "cheap", value_name = "LEVEL")]
        assert: String,
        #[arg(long)]
        out: PathBuf,
        /// Run a schedule that fails the step-size conditions anyway.
        #[arg(long)]
        allow_unvalidated: bool,
        /// Use the full averaged penalty gradient instead of sampling one
        /// constraint per step.
        #[arg(long)]
        full_gradient: bool,
    },
    /// Run a suite of configurations and emit CSVs, a summary, and charts.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides [output] dir from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit a decay exponent to one quantity of a trace CSV.
    Ratefit {
        #[arg(long)]
        trace: PathBuf,
        /// fgap_avg_s, fgap_avg_sinv, or dist_avg.
        #[arg(long)]
        quantity: String,
        /// Fit window as tmin:tmax.
        #[arg(long)]
        window: String,
        /// Optimal objective value; required for the f-gap quantities.
        #[arg(long)]
        fstar: Option<f64>,
    },
    /// Solve the penalized problem over a parameter grid and check the
    /// level-set, O(delta), and squared-gap predictions.
    Diagnose {
        #[arg(long)]
        instance: PathBuf,
        /// Comma-separated penalty weights.
        #[arg(long)]
        gammas: String,
        /// Comma-separated smoothing widths.
        #[arg(long)]
        deltas: String,
        #[arg(long)]
        out: PathBuf,
        /// Also run the squared-gap check and write its table here.
        #[arg(long)]
        gap_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

/// Failures split by exit code: bad inputs (2) versus runs or checks that
/// went wrong (1).
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) | Failure::Run(msg) => f.write_str(msg),
        }
    }
}

/// Classify library errors: configuration and input-shape problems are
/// the user's setup, everything else happened during a run.
fn classify(e: ripm::Error) -> Failure {
    match &e {
        ripm::Error::Config(_)
        | ripm::Error::Parse { .. }
        | ripm::Error::UnsupportedObjective { .. }
        | ripm::Error::DimensionMismatch { .. }
        | ripm::Error::Io(_) => Failure::Config(e.to_string()),
        _ => Failure::Run(e.to_string()),
    }
}

fn config_failure(e: impl fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Generate { spec, out } => generate(&spec, &out),
        Cmd::Solve {
            instance,
            schedule,
            iters,
            seed,
            trace_every,
            assert,
            out,
            allow_unvalidated,
            full_gradient,
        } => solve(
            &instance,
            &schedule,
            iters,
            seed,
            trace_every,
            &assert,
            &out,
            allow_unvalidated,
            full_gradient,
        ),
        Cmd::Experiment { config, out_dir } => run_experiment(&config, out_dir),
        Cmd::Ratefit {
            trace,
            quantity,
            window,
            fstar,
        } => ratefit(&trace, &quantity, &window, fstar),
        Cmd::Diagnose {
            instance,
            gammas,
            deltas,
            out,
            gap_out,
            tol,
        } => diagnose(&instance, &gammas, &deltas, &out, gap_out.as_deref(), tol),
    }
}

fn generate(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let spec = config::load_generator_spec(spec_path).map_err(classify)?;
    let inst = experiment::generate(&spec).map_err(classify)?;
    save_instance(&inst, out).map_err(classify)?;
    println!(
        "wrote {} ({} variables, {} constraints, optimum {})",
        out.display(),
        inst.objective.dim(),
        inst.system.len(),
        match &inst.known_optimum {
            Some(o) => format!("known, {:?}", o.provenance),
            None => "unknown".into(),
        }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve(
    instance: &Path,
    schedule: &Path,
    iters: u64,
    seed: u64,
    trace_every: Option<u64>,
    assert: &str,
    out: &Path,
    allow_unvalidated: bool,
    full_gradient: bool,
) -> Result<(), Failure> {
    let inst = load_instance(instance).map_err(classify)?;
    let sch = config::load_schedule(schedule).map_err(classify)?;
    let mut opts = RunOptions::new(iters, seed);
    opts.assert_level = config::parse_assert_level(assert).map_err(classify)?;
    opts.allow_unvalidated = allow_unvalidated;
    opts.full_gradient = full_gradient;
    if let Some(t) = trace_every {
        if t == 0 {
            return Err(Failure::Config("trace-every must be at least 1".into()));
        }
        opts.checkpoints = Checkpoints::EveryN(t);
    }

    let trace = match solver::run(&inst, &sch, &opts) {
        Ok(trace) => trace,
        Err(failure) => {
            let mut msg = failure.to_string();
            if let Some(partial) = &failure.partial {
                let written = File::create(out)
                    .map(|f| partial.write_csv(BufWriter::new(f)).is_ok())
                    .unwrap_or(false);
                if written {
                    msg.push_str(&format!("; partial trace written to {}", out.display()));
                }
            }
            return Err(Failure::Run(msg));
        }
    };

    trace
        .write_csv(BufWriter::new(File::create(out).map_err(config_failure)?))
        .map_err(|e| Failure::Run(e.to_string()))?;
    let last = trace.final_row();
    println!(
        "{} iterations of {} on {}; trace ({} rows) written to {}",
        iters,
        trace.schedule,
        inst.instance_id,
        trace.rows.len(),
        out.display()
    );
    println!(
        "final: f(x) = {:.6e}, dist(x, X) = {:.3e}, dist(avg, X) = {:.3e}, max subgradient norm = {:.3e}",
        last.f_x, last.dist_x, last.dist_avg_s, trace.stats.max_subgrad_norm
    );
    Ok(())
}

fn run_experiment(config_path: &Path, out_dir: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config_path).map_err(classify)?;
    let suite = cfg.suite().map_err(classify)?;
    let dir = out_dir.unwrap_or_else(|| cfg.output_dir());
    let report = experiment::run_suite(&suite).map_err(classify)?;
    let files = experiment::emit_report(&report, &dir).map_err(classify)?;
    println!(
        "{} configurations, {} runs, {} files under {}",
        suite.specs.len(),
        report.records.len(),
        files.len(),
        dir.display()
    );

    let failed: Vec<&experiment::RunRecord> = report
        .records
        .iter()
        .filter(|r| r.outcome.is_err())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        for r in &failed {
            if let Err(msg) = &r.outcome {
                eprintln!("failed: {} {} seed {}: {}", r.spec_label, r.variant.as_str(), r.seed, msg);
            }
        }
        Err(Failure::Run(format!(
            "{} of {} runs failed",
            failed.len(),
            report.records.len()
        )))
    }
}

fn ratefit(trace: &Path, quantity: &str, window: &str, fstar: Option<f64>) -> Result<(), Failure> {
    let q = Quantity::parse(quantity).map_err(classify)?;
    let window = parse_window(window)?;
    let rows = solver::read_trace_rows(BufReader::new(
        File::open(trace).map_err(config_failure)?,
    ))
    .map_err(classify)?;
    let points = experiment::trace_quantity_points(&rows, q, fstar).map_err(classify)?;
    let fit = experiment::fit_rate(&points, q, window).map_err(classify)?;
    println!(
        "{} ~ t^{:.4} over t in [{}, {}] (intercept {:.4}, r^2 {:.4})",
        q.as_str(),
        fit.slope,
        fit.window.0,
        fit.window.1,
        fit.intercept,
        fit.r_squared
    );
    Ok(())
}

fn parse_window(s: &str) -> Result<(u64, u64), Failure> {
    let bad = || Failure::Config(format!("window {s:?} is not of the form tmin:tmax with tmin < tmax"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    if lo >= hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn parse_grid(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite()) => Ok(v),
        _ => Err(Failure::Config(format!(
            "{what} must be a comma-separated list of positive numbers, got {s:?}"
        ))),
    }
}

fn diagnose(
    instance: &Path,
    gammas: &str,
    deltas: &str,
    out: &Path,
    gap_out: Option<&Path>,
    tol: f64,
) -> Result<(), Failure> {
    if tol <= 0.0 {
        return Err(Failure::Config("tol must be positive".into()));
    }
    let inst = load_instance(instance).map_err(classify)?;
    let gammas = parse_grid(gammas, "gammas")?;
    let deltas = parse_grid(deltas, "deltas")?;

    let scan = infeasibility_scan(&inst, &gammas, &deltas, tol).map_err(classify)?;
    write_scan_csv(&scan, BufWriter::new(File::create(out).map_err(config_failure)?))
        .map_err(|e| Failure::Run(e.to_string()))?;
    let solve_failures = scan.entries.iter().filter(|e| e.outcome.is_err()).count();
    println!(
        "scan: {} pairs ({} solve failures), {} measurable delta-halving ratios, written to {}",
        scan.entries.len(),
        solve_failures,
        scan.halving_ratios.len(),
        out.display()
    );
    let mut ok = scan.all_checks_pass();
    if !ok {
        eprintln!(
            "scan checks failed: level containment {}, joint decay {}, ratios {}",
            scan.entries.iter().all(|e| e
                .outcome
                .as_ref()
                .map(|r| r.level_contained)
                .unwrap_or(false)),
            scan.joint_decreasing,
            scan.halving_ratios.iter().all(|r| r.within_factor)
        );
    }

    if let Some(gap_path) = gap_out {
        let gap = strong_convexity_gap_check(&inst, &gammas, &deltas, tol).map_err(classify)?;
        write_gap_csv(&gap, BufWriter::new(File::create(gap_path).map_err(config_failure)?))
            .map_err(|e| Failure::Run(e.to_string()))?;
        let in_regime = gap
            .entries
            .iter()
            .filter(|e| matches!(&e.outcome, Ok(d) if d.in_regime))
            .count();
        println!(
            "squared-gap check: {} pairs in regime of {}, written to {}",
            in_regime,
            gap.entries.len(),
            gap_path.display()
        );
        if !gap.all_in_regime_pass() {
            eprintln!("squared-gap bound violated on an in-regime pair");
            ok = false;
        }
    }

    if ok {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Failure::Run("diagnostic checks failed".into()))
    }
}
