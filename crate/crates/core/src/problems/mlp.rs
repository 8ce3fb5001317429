use rand::RngCore;

use super::{perturbed, ClassifierProblem, LossGrads, RobustProblem, Sample};
use crate::autodiff::MlpArchitecture;
use crate::error::Result;
use crate::types::{BudgetConstraint, SubgradientRule};

/// ReLU MLP with softmax cross-entropy; `w` is the flat parameter vector of
/// [`MlpArchitecture`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProblem {
    arch: MlpArchitecture,
    budget: BudgetConstraint,
    rule: SubgradientRule,
}

impl MlpProblem {
    pub fn new(arch: MlpArchitecture, budget: BudgetConstraint) -> Self {
        Self {
            arch,
            budget,
            rule: SubgradientRule::Sign,
        }
    }

    pub fn with_subgradient_rule(mut self, rule: SubgradientRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }
}

impl RobustProblem for MlpProblem {
    fn param_dim(&self) -> usize {
        self.arch.param_count()
    }

    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn budget(&self) -> &BudgetConstraint {
        &self.budget
    }

    fn subgradient_rule(&self) -> SubgradientRule {
        self.rule
    }

    fn loss(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<f64> {
        let x = perturbed(sample, u)?;
        crate::autodiff::cross_entropy_slice(&self.arch.logits(w, &x)?, sample.label)
    }

    fn loss_and_grads(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<LossGrads> {
        let x = perturbed(sample, u)?;
        let (_, mut tape) = self.arch.forward(w, &x)?;
        let loss = tape.cross_entropy(sample.label)?;
        let g = tape.backward(1.0)?;
        // ∂(I + u)/∂u is the identity
        Ok(LossGrads {
            loss,
            grad_w: g.params,
            grad_u: g.input,
        })
    }

    fn init_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.arch.init_params(rng)
    }
}

impl ClassifierProblem for MlpProblem {
    fn logits(&self, w: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.arch.logits(w, input)
    }
}
