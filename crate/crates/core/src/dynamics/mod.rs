//! The coupled update laws, the mini-batch training loops built on them,
//! and the perturbation-only attack loops.

mod attack;
mod directions;
mod minibatch;
mod report;

pub use attack::{sgda_attack, sgda_attack_traced, ssds_attack, ssds_attack_traced};
pub use directions::{compute_directions, ssds_step, FIXED_POINT_TOL, u_distance, weighted_distance, SampleSelection, UpdateDirections};
pub use minibatch::{
    minibatch_sgda_epoch, minibatch_ssds_epoch, minibatch_ssds_p_epoch, natural_epoch, run_epoch,
    TrainingAlgorithm, LAMBDA_LIMIT,
};
pub use report::{DivergenceReport, EpochReport};
