//! Trajectory-shaping measures for dynamic optimization.
//!
//! The crate poses continuous-time optimal-control problems whose objective
//! is a trajectory-shaping measure (integral, weighted expectation,
//! mean-variance, CVaR, disutility), discretizes them by direct transcription
//! with backward finite differences, solves the resulting smooth NLP with a
//! bundled augmented-Lagrangian solver, and analyzes trajectories with
//! time-valued statistics (cdf, quantile, CVaR, excursion sets, dominance)
//! plus an executable coherence-property suite.

pub mod analysis;
pub mod expr;
pub mod measures;
pub mod model;
pub mod nlp;
pub mod transcribe;

pub use expr::{EvalError, ExprBuilder, Expression, VarId};
pub use measures::{LoweredObjective, MeasureError, QuadRule, QuadratureWeights};
pub use model::{
    build_seir, DynModel, MeasureKind, MeasureSpec, ModelBuilder, Pdf, SeirParams, Sense,
    TimeDomain,
};
pub use nlp::{kkt_check, solve, NlpError, Solution, SolveOptions, SolveStatus};
pub use transcribe::{transcribe, Grid, NlpInstance, TranscribeError};
