//! Random incremental penalty methods for linearly constrained convex
//! minimization.
//!
//! The target problem is min f(x) subject to finitely many halfspace
//! constraints ⟨a_i, x⟩ ≤ b_i. Instead of projecting onto the feasible
//! set, the constraints are folded into the objective through a one-sided
//! Huber penalty: each constraint contributes a smoothed hinge
//! h_delta(x; a_i, b_i), zero well inside the halfspace, growing linearly
//! with the violation outside, rounded off on a width-delta band around
//! the boundary. The solver then runs a subgradient iteration on
//!
//! ```text
//! f(x) + gamma_k * (1/m) * sum_i h_{delta_k}(x; a_i, b_i)
//! ```
//!
//! sampling one random constraint per step while gamma_k grows without
//! bound and delta_k shrinks to zero. With a compatible stepsize schedule
//! the iterates and their weighted averages converge to the constrained
//! optimum without a single projection.
//!
//! The crate is organized around that pipeline:
//!
//! * [`huber`]: the scalar penalty branches, per-constraint values and
//!   gradients, and the penalized objective.
//! * [`model`]: objectives, constraint systems, problem instances, and
//!   their text serialization.
//! * [`projection`]: reference oracles kept out of the solver's hot path;
//!   alternating projections for distances and a smooth descent solver for
//!   fixed-penalty problems.
//! * [`schedule`]: the (s_k, gamma_k, delta_k) schedules and the symbolic
//!   validation of the convergence conditions.
//! * [`solver`]: the incremental iteration itself, the full-gradient
//!   baseline, averaging accumulators, per-path assertions, and traces.
//! * [`experiment`]: instance generators, batch runs, rate fitting, and
//!   report emission.
//! * [`diagnostics`]: checks of the penalty-solution theory (level-set
//!   containment, infeasibility decay, distance-to-optimum bounds) against
//!   the oracles.

pub mod config;
pub mod diagnostics;
mod error;
pub mod experiment;
pub mod huber;
pub mod model;
pub mod projection;
pub mod schedule;
pub mod solver;
mod vecmath;

pub use error::{Error, Result};
