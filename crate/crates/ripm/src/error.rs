use thiserror::Error;

/// Unified error type for the fallible operations in this crate.
///
/// Pure math kernels (the scalar penalty branches, per-constraint values
/// and gradients) are total functions or panic on contract violations such
/// as a nonpositive smoothing width; everything that can fail for reasons
/// outside the caller's control goes through this enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("constraint system needs at least one constraint")]
    EmptySystem,

    #[error("constraint normal must be nonzero")]
    ZeroNormal,

    #[error("witness violates the constraints by {violation:.3e}")]
    InfeasibleWitness { violation: f64 },

    #[error("point tagged as exact optimum violates the constraints by {violation:.3e}")]
    InfeasibleOptimum { violation: f64 },

    #[error(
        "projection stalled after {sweeps} sweeps (displacement {displacement:.3e}, \
         violation {violation:.3e})"
    )]
    ProjectionStalled {
        sweeps: usize,
        displacement: f64,
        violation: f64,
        /// Last iterate of the alternating scheme, for post-mortems.
        last: Vec<f64>,
    },

    #[error(
        "penalized solve stalled after {iters} iterations \
         (gradient norm {residual:.3e}, tolerance {tol:.3e})"
    )]
    PenalizedSolveStalled { iters: usize, residual: f64, tol: f64 },

    #[error("{op} is not available for this objective kind: {reason}")]
    UnsupportedObjective { op: &'static str, reason: &'static str },

    #[error("iterate diverged at step {k} (norm {norm:.3e})")]
    Diverged { k: u64, norm: f64 },

    #[error("averaging accumulator holds no iterates yet")]
    EmptyAccumulator,

    #[error("schedule failed validation: {0}")]
    InvalidSchedule(String),

    #[error("generator could not place the objective shift outside the feasible set after {attempts} attempts")]
    GeneratorExhausted { attempts: usize },

    #[error("rate fit needs at least {needed} checkpoints in the window, found {found}")]
    TooFewCheckpoints { needed: usize, found: usize },

    #[error("rate fit requires positive values; checkpoint t={t} has {value:.3e}")]
    NonPositiveQuantity { t: u64, value: f64 },

    #[error("empty suite: nothing to report")]
    EmptySuite,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
