//! Stochastic saddle-point dynamics (SSDS) for robust min-max learning.
//!
//! The solver couples descent on the model parameters with ascent on
//! per-sample perturbations and multiplier dynamics for the epigraph and
//! budget constraints. Budgets are enforced softly through the multipliers
//! or, for SSDS-p, by projection.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod problems;
pub mod types;

pub use config::SsdsConfig;
pub use error::{CheckpointError, ConfigError, Error, IdxError, Result};
pub use types::{
    BudgetConstraint, DecisionState, DualState, NormOrder, SaddleIterate, StepSchedule, SubgradientRule,
    UncertaintyState,
};
