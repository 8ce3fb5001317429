//! Robust learning problems: a per-sample loss `L(I + u, y, w)` with
//! gradient oracles in `w` and `u`, plus the budget `h(u) = ‖u‖ − ε`.

mod dataset;
mod idx;
mod logistic;
mod mlp;
mod quadratic;

pub use dataset::{make_synthetic_dataset, Dataset, Sample, BLOB_SIGMA};
pub use idx::{encode_idx, load_idx_dataset, IMAGES_MAGIC, LABELS_MAGIC};
pub use logistic::RobustLogisticProblem;
pub use mlp::MlpProblem;
pub use quadratic::{saddle_oracle, QuadraticSaddleProblem};

use rand::RngCore;

use crate::error::Result;
use crate::types::{BudgetConstraint, SubgradientRule};

/// Loss and both gradients from one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_w: Vec<f64>,
    pub grad_u: Vec<f64>,
}

/// A per-sample loss with first-order oracles and a perturbation budget.
///
/// Implementations are pure functions of `(w, sample, u)`.
pub trait RobustProblem: Sync {
    /// Dimension `n` of `w`.
    fn param_dim(&self) -> usize;
    /// Dimension `m` of each `u^i`.
    fn input_dim(&self) -> usize;
    fn budget(&self) -> &BudgetConstraint;
    fn subgradient_rule(&self) -> SubgradientRule {
        SubgradientRule::Sign
    }

    fn loss(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<f64>;
    fn loss_and_grads(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<LossGrads>;

    fn grad_w(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grads(w, sample, u)?.grad_w)
    }

    fn grad_u(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grads(w, sample, u)?.grad_u)
    }

    /// `h(u) = ‖u‖ − ε`.
    fn constraint(&self, u: &[f64]) -> f64 {
        self.budget().value(u)
    }

    /// Direction multiplying `v` in the `u` update.
    fn constraint_subgrad(&self, u: &[f64]) -> Vec<f64> {
        self.budget().subgradient(u, self.subgradient_rule())
    }

    fn init_params(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Problems whose loss is a cross-entropy over class logits.
pub trait ClassifierProblem: RobustProblem {
    fn logits(&self, w: &[f64], input: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, w: &[f64], input: &[f64]) -> Result<usize> {
        Ok(crate::autodiff::argmax(&self.logits(w, input)?))
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(crate::error::Error::Shape {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Adds `u` to the sample input.
pub(crate) fn perturbed(sample: &Sample, u: &[f64]) -> Result<Vec<f64>> {
    check_len("perturbation", sample.input.len(), u.len())?;
    Ok(sample.input.iter().zip(u).map(|(a, b)| a + b).collect())
}
