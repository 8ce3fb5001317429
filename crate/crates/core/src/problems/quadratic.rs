use rand::{Rng, RngCore};

use super::{check_len, Dataset, LossGrads, RobustProblem, Sample};
use crate::error::{Error, Result};
use crate::types::{BudgetConstraint, DecisionState, DualState, SaddleIterate, SubgradientRule, UncertaintyState};

/// `L(w, I, u) = a‖w − I‖² − b‖u − c‖²`: strictly convex in `w`, strictly
/// concave in `u`, with a closed-form saddle point. Labels are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSaddleProblem {
    a: f64,
    b: f64,
    c: Vec<f64>,
    budget: BudgetConstraint,
    rule: SubgradientRule,
}

impl QuadraticSaddleProblem {
    pub fn new(a: f64, b: f64, c: Vec<f64>, budget: BudgetConstraint) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument("curvatures a and b must be positive".into()));
        }
        if c.is_empty() || c.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("target c must be a nonempty finite vector".into()));
        }
        Ok(Self {
            a,
            b,
            c,
            budget,
            rule: SubgradientRule::Sign,
        })
    }

    pub fn with_subgradient_rule(mut self, rule: SubgradientRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn target(&self) -> &[f64] {
        &self.c
    }

    /// Exact maximizer of `L(w, I, ·)` over the budget ball (the projection
    /// of `c`) and the attained value.
    pub fn inner_max_oracle(&self, w: &[f64], sample: &Sample) -> Result<(Vec<f64>, f64)> {
        let u = self.budget.project(&self.c)?;
        let value = self.loss(w, sample, &u)?;
        Ok((u, value))
    }

    /// Multiplier `v*` making `∂_u L(u*) = v*·s(u*)` for the configured
    /// subgradient direction `s`, in the least-squares sense.
    fn optimal_v(&self, u_star: &[f64]) -> f64 {
        let s = self.constraint_subgrad(u_star);
        let ss: f64 = s.iter().map(|x| x * x).sum();
        if ss == 0.0 {
            return 0.0;
        }
        let rs: f64 = self.c.iter().zip(u_star).zip(&s).map(|((c, u), s)| (c - u) * s).sum();
        (2.0 * self.b * rs / ss).max(0.0)
    }
}

impl RobustProblem for QuadraticSaddleProblem {
    fn param_dim(&self) -> usize {
        self.c.len()
    }

    fn input_dim(&self) -> usize {
        self.c.len()
    }

    fn budget(&self) -> &BudgetConstraint {
        &self.budget
    }

    fn subgradient_rule(&self) -> SubgradientRule {
        self.rule
    }

    fn loss(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<f64> {
        let n = self.c.len();
        check_len("quadratic w", n, w.len())?;
        check_len("quadratic sample", n, sample.input.len())?;
        check_len("quadratic u", n, u.len())?;
        let dw: f64 = w.iter().zip(&sample.input).map(|(w, i)| (w - i) * (w - i)).sum();
        let du: f64 = u.iter().zip(&self.c).map(|(u, c)| (u - c) * (u - c)).sum();
        Ok(self.a * dw - self.b * du)
    }

    fn loss_and_grads(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<LossGrads> {
        let loss = self.loss(w, sample, u)?;
        Ok(LossGrads {
            loss,
            grad_w: w.iter().zip(&sample.input).map(|(w, i)| 2.0 * self.a * (w - i)).collect(),
            grad_u: u.iter().zip(&self.c).map(|(u, c)| -2.0 * self.b * (u - c)).collect(),
        })
    }

    fn init_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.c.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

/// Closed-form saddle point `(x*, λ*, u*, v*)` of the epigraph Lagrangian
/// over `dataset`: `w*` is the sample mean, every `u^i*` is the projection
/// of `c`, `t*` the summed inner maximum, and `λ* = 1`.
pub fn saddle_oracle(problem: &QuadraticSaddleProblem, dataset: &Dataset) -> Result<SaddleIterate> {
    let n = problem.param_dim();
    check_len("dataset input", n, dataset.input_dim())?;
    let mut w = vec![0.0; n];
    for s in dataset.samples() {
        for (acc, x) in w.iter_mut().zip(&s.input) {
            *acc += x;
        }
    }
    let count = dataset.len() as f64;
    w.iter_mut().for_each(|x| *x /= count);

    let u_star = problem.budget.project(&problem.c)?;
    let mut t = 0.0;
    for s in dataset.samples() {
        t += problem.loss(&w, s, &u_star)?;
    }
    let v_star = problem.optimal_v(&u_star);
    Ok(SaddleIterate {
        x: DecisionState { w, t },
        duals: DualState {
            lambda: 1.0,
            v: vec![v_star; dataset.len()],
        },
        u: UncertaintyState(vec![u_star; dataset.len()]),
        k: 0,
    })
}
