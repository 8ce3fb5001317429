use rand::RngCore;

use super::{check_len, perturbed, ClassifierProblem, LossGrads, RobustProblem, Sample};
use crate::autodiff::cross_entropy_slice;
use crate::error::Result;
use crate::types::{BudgetConstraint, SubgradientRule};

/// Linear softmax classifier with cross-entropy loss on `I + u`.
///
/// `w` holds the `(classes, input_dim)` weight matrix row-major followed by
/// the bias, the same layout as a single-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustLogisticProblem {
    input_dim: usize,
    num_classes: usize,
    budget: BudgetConstraint,
    rule: SubgradientRule,
}

impl RobustLogisticProblem {
    pub fn new(input_dim: usize, num_classes: usize, budget: BudgetConstraint) -> Self {
        Self {
            input_dim,
            num_classes,
            budget,
            rule: SubgradientRule::Sign,
        }
    }

    pub fn with_subgradient_rule(mut self, rule: SubgradientRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn scores(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let m = self.input_dim;
        let bias = &w[m * self.num_classes..];
        w[..m * self.num_classes]
            .chunks_exact(m)
            .zip(bias)
            .map(|(row, b)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }
}

impl RobustProblem for RobustLogisticProblem {
    fn param_dim(&self) -> usize {
        (self.input_dim + 1) * self.num_classes
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn budget(&self) -> &BudgetConstraint {
        &self.budget
    }

    fn subgradient_rule(&self) -> SubgradientRule {
        self.rule
    }

    fn loss(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<f64> {
        let x = perturbed(sample, u)?;
        cross_entropy_slice(&self.logits(w, &x)?, sample.label)
    }

    fn loss_and_grads(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<LossGrads> {
        let x = perturbed(sample, u)?;
        let z = self.logits(w, &x)?;
        let loss = cross_entropy_slice(&z, sample.label)?;
        // residual r = softmax(z) − e_y
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let r: Vec<f64> = e
            .iter()
            .enumerate()
            .map(|(k, e)| e / s - if k == sample.label { 1.0 } else { 0.0 })
            .collect();

        let d = self.input_dim;
        let mut grad_w = vec![0.0; self.param_dim()];
        let mut grad_u = vec![0.0; d];
        for (k, rk) in r.iter().enumerate() {
            let row = &w[k * d..(k + 1) * d];
            for j in 0..d {
                grad_w[k * d + j] = rk * x[j];
                grad_u[j] += rk * row[j];
            }
            grad_w[d * self.num_classes + k] = *rk;
        }
        Ok(LossGrads { loss, grad_w, grad_u })
    }

    /// Zero weights: the loss is convex in `w`, so no symmetry breaking is needed.
    fn init_params(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0; self.param_dim()]
    }
}

impl ClassifierProblem for RobustLogisticProblem {
    fn logits(&self, w: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        check_len("logistic parameters", self.param_dim(), w.len())?;
        check_len("logistic input", self.input_dim, input.len())?;
        Ok(self.scores(w, input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::MlpArchitecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_single_layer_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RobustLogisticProblem::new(5, 3, BudgetConstraint::linf(0.1));
        let arch = MlpArchitecture::new(vec![5, 3]).unwrap();
        assert_eq!(arch.param_count(), p.param_dim());
        let w: Vec<f64> = (0..p.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Sample {
            id: 0,
            input: (0..5).map(|_| rng.random_range(0.0..1.0)).collect(),
            label: 1,
        };
        let u = vec![0.05, -0.05, 0.0, 0.1, -0.1];
        let g = p.loss_and_grads(&w, &s, &u).unwrap();

        let x = perturbed(&s, &u).unwrap();
        let (_, mut tape) = arch.forward(&w, &x).unwrap();
        let l = tape.cross_entropy(1).unwrap();
        let tg = tape.backward(1.0).unwrap();
        assert!((l - g.loss).abs() < 1e-14);
        for (a, b) in g.grad_w.iter().zip(&tg.params) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in g.grad_u.iter().zip(&tg.input) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_model_predicts_uniformly() {
        let p = RobustLogisticProblem::new(2, 2, BudgetConstraint::linf(0.1));
        let w = p.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let s = Sample {
            id: 0,
            input: vec![1.0, 2.0],
            label: 0,
        };
        assert!((p.loss(&w, &s, &[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.predict(&w, &s.input).unwrap(), 0);
    }
}
