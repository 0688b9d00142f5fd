//! TOML configuration shared by the command-line subcommands.
//!
//! An experiment file holds one or more `[[problem]]` tables (generator
//! keys), a `[schedule]` table, a `[run]` table, and an optional
//! `[output]` table:
//!
//! ```toml
//! [[problem]]
//! n = 10
//! m = 100
//! objective_kind = "quadratic"
//! optimum_location = "outside"
//! seed = 7
//!
//! [schedule]
//! kind = "simulation_sc"
//! c_gamma = 4.0
//!
//! [run]
//! iters = 100000
//! seeds = [1, 2, 3, 4, 5]
//!
//! [output]
//! dir = "out/quad_outside"
//! ```
//!
//! Schedule files for the `solve` subcommand hold just the `[schedule]`
//! table, and generator files for `generate` just one `[problem]` table.

use crate::error::{Error, Result};
use crate::experiment::{GeneratorSpec, ObjectiveKind, OptimumLocation, SuiteConfig};
use crate::schedule::ScheduleTriple;
use crate::solver::AssertLevel;
use serde::Deserialize;
use std::path::{Path, PathBuf};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// Load a serialized instance instead of generating one. Mutually
    /// exclusive with the generator keys; `solve` and `diagnose` accept
    /// it, `experiment` does not (suites generate their instances so the
    /// spec label and seed stay attached to the results).
    pub instance: Option<PathBuf>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub objective_kind: Option<String>,
    pub optimum_location: Option<String>,
    pub seed: Option<u64>,
    pub constraint_scale: Option<f64>,
}

impl ProblemSection {
    pub fn generator_spec(&self) -> Result<GeneratorSpec> {
        if self.instance.is_some() {
            return Err(config_err(
                "this problem names an instance file; generator keys expected",
            ));
        }
        let n = self.n.ok_or_else(|| config_err("problem is missing n"))?;
        let m = self.m.ok_or_else(|| config_err("problem is missing m"))?;
        let objective_kind = match self.objective_kind.as_deref() {
            None | Some("quadratic") => ObjectiveKind::QuadraticShift,
            Some("l1") => ObjectiveKind::L1Shift,
            Some(other) => {
                return Err(config_err(format!(
                    "unknown objective_kind {other:?}; expected \"quadratic\" or \"l1\""
                )))
            }
        };
        let optimum_location = match self.optimum_location.as_deref() {
            None | Some("inside") => OptimumLocation::Inside,
            Some("outside") => OptimumLocation::Outside,
            Some(other) => {
                return Err(config_err(format!(
                    "unknown optimum_location {other:?}; expected \"inside\" or \"outside\""
                )))
            }
        };
        let mut spec = GeneratorSpec::new(n, m, objective_kind, optimum_location, self.seed.unwrap_or(1));
        if let Some(scale) = self.constraint_scale {
            if scale <= 0.0 {
                return Err(config_err("constraint_scale must be positive"));
            }
            spec.constraint_scale = scale;
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: String,
    pub c: Option<f64>,
    pub g: Option<f64>,
    pub d: Option<f64>,
    pub mu: Option<f64>,
    pub s_scale: Option<f64>,
    pub c_gamma: Option<f64>,
}

impl ScheduleSection {
    /// Build the schedule, rejecting keys the kind does not take so a
    /// misplaced parameter fails loudly instead of being ignored.
    pub fn build(&self) -> Result<ScheduleTriple> {
        let reject_unused = |allowed: &[&str]| -> Result<()> {
            let present: &[(&str, bool)] = &[
                ("c", self.c.is_some()),
                ("g", self.g.is_some()),
                ("d", self.d.is_some()),
                ("mu", self.mu.is_some()),
                ("s_scale", self.s_scale.is_some()),
                ("c_gamma", self.c_gamma.is_some()),
            ];
            for (name, is_set) in present {
                if *is_set && !allowed.contains(name) {
                    return Err(config_err(format!(
                        "schedule kind {:?} does not take key {name:?}",
                        self.kind
                    )));
                }
            }
            Ok(())
        };
        match self.kind.as_str() {
            "polylog_convex" => {
                reject_unused(&["c", "g", "d"])?;
                Ok(ScheduleTriple::PolylogConvex {
                    c: self.c.unwrap_or(0.5),
                    g: self.g.unwrap_or(0.1),
                    d: self.d.unwrap_or(0.51),
                })
            }
            "strongly_convex" => {
                reject_unused(&["mu", "g", "d"])?;
                Ok(ScheduleTriple::StronglyConvex {
                    mu: self.mu.unwrap_or(2.0),
                    g: self.g.unwrap_or(0.1),
                    d: self.d.unwrap_or(2.0),
                })
            }
            "simulation_sc" => {
                reject_unused(&["c_gamma"])?;
                Ok(ScheduleTriple::SimulationSc {
                    c_gamma: self.c_gamma.unwrap_or(1.0),
                })
            }
            "simulation_cvx" => {
                reject_unused(&["s_scale", "c_gamma"])?;
                Ok(ScheduleTriple::SimulationCvx {
                    s_scale: self.s_scale.unwrap_or(1.0),
                    c_gamma: self.c_gamma.unwrap_or(1.0),
                })
            }
            other => Err(config_err(format!(
                "unknown schedule kind {other:?}; expected polylog_convex, \
                 strongly_convex, simulation_sc, or simulation_cvx"
            ))),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iters: u64,
    pub seeds: Option<Vec<u64>>,
    pub repetitions: Option<usize>,
    pub allow_unvalidated: Option<bool>,
    pub include_full_gradient: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "problem")]
    pub problems: Vec<ProblemSection>,
    pub schedule: ScheduleSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.problems.is_empty() {
            return Err(config_err("no [[problem]] tables"));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn suite(&self) -> Result<SuiteConfig> {
        let specs = self
            .problems
            .iter()
            .map(|p| p.generator_spec())
            .collect::<Result<Vec<_>>>()?;
        let mut suite = SuiteConfig::new(specs, self.schedule.build()?, self.run.iters);
        if let Some(seeds) = &self.run.seeds {
            if seeds.is_empty() {
                return Err(config_err("seeds must not be empty"));
            }
            suite.seeds = seeds.clone();
        }
        suite.repetitions = self.run.repetitions.unwrap_or(suite.seeds.len());
        suite.allow_unvalidated = self.run.allow_unvalidated.unwrap_or(false);
        suite.include_full_gradient = self.run.include_full_gradient.unwrap_or(false);
        Ok(suite)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// A file holding just a `[schedule]` table.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    schedule: ScheduleSection,
}

pub fn load_schedule(path: impl AsRef<Path>) -> Result<ScheduleTriple> {
    let text = std::fs::read_to_string(path)?;
    let file: ScheduleFile = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
    file.schedule.build()
}

/// A file holding just a `[problem]` table with generator keys.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorFile {
    problem: ProblemSection,
}

pub fn load_generator_spec(path: impl AsRef<Path>) -> Result<GeneratorSpec> {
    let text = std::fs::read_to_string(path)?;
    let file: GeneratorFile = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
    file.problem.generator_spec()
}

pub fn parse_assert_level(s: &str) -> Result<AssertLevel> {
    match s {
        "off" => Ok(AssertLevel::Off),
        "cheap" => Ok(AssertLevel::Cheap),
        "full" => Ok(AssertLevel::Full),
        other => Err(config_err(format!(
            "unknown assert level {other:?}; expected off, cheap, or full"
        ))),
    }
}
