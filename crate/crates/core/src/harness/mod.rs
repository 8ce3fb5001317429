//! Run orchestration: data specs, run directories and manifests, replay
//! verification and the scripted figure experiments.
//!
//! A run directory is named by the run id and holds
//!
//! ```text
//! trajectory.csv          epoch,alpha,lambda,t,mean_loss,frac_u_within_budget,mean_u_delta_l2
//! timing.csv              epoch,wall_ms
//! u_hist_epochNNNNN.csv   sample_id,linf_norm   (every histogram_every epochs)
//! model.ckpt | state.json
//! manifest.json
//! ```

mod data;
mod reproduce;
mod run;

pub use data::DataSpec;
pub use reproduce::{
    attack_accuracy_curve, dynamics_attack_accuracy, reproduce, train, Figure, ReproduceOptions, ReproduceOutcome,
    DEFAULT_DATA, DEFAULT_HIDDEN,
};
pub use run::{
    create_fresh_dir, execute, execute_in, quadratic_instance, replay, trajectory_row, u_hist_csv, u_hist_name,
    write_atomic, AnyProblem, DatasetInfo, ProblemKind, ReplayOutcome, RunManifest, RunOutcome, RunRequest, RunStatus,
    Session, CHECKPOINT_FILE, MANIFEST_FILE, QUADRATIC_TARGET, STATE_FILE, TIMING_FILE, TRAJECTORY_FILE,
    TRAJECTORY_HEADER, VERSION,
};

/// Reals in CSV output: 17 significant digits, so every `f64` round-trips.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}
