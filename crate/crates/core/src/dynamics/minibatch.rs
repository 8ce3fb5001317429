//! Epoch-level training loops over shuffled mini-batches.
//!
//! Within a batch every update reads the pre-batch values of `w`, `λ`,
//! `u^j` and `v^j`. The `t` update and the step-size decay happen once per
//! epoch, with `t` driven by the epoch-start `λ`.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::{DivergenceReport, EpochReport};
use crate::config::SsdsConfig;
use crate::error::{Error, Result};
use crate::problems::{Dataset, RobustProblem};
use crate::types::{l2_norm, positive_project, SaddleIterate};

/// Divergence threshold on `λ`.
pub const LAMBDA_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingAlgorithm {
    /// Mini-batch SSDS with soft (multiplier) budget enforcement.
    Ssds,
    /// SSDS plus a hard projection of each `u^j` every batch.
    SsdsP,
    /// Gradient descent on `w`, ascent on `u`, no multipliers.
    Sgda,
    /// Plain mini-batch gradient descent on clean inputs.
    Natural,
}

impl TrainingAlgorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingAlgorithm::Ssds => "ssds",
            TrainingAlgorithm::SsdsP => "ssds-p",
            TrainingAlgorithm::Sgda => "sgda",
            TrainingAlgorithm::Natural => "natural",
        }
    }
}

impl FromStr for TrainingAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssds" => Ok(Self::Ssds),
            "ssds-p" => Ok(Self::SsdsP),
            "sgda" => Ok(Self::Sgda),
            "natural" => Ok(Self::Natural),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for TrainingAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Algorithm 1: one epoch of mini-batch SSDS.
pub fn minibatch_ssds_epoch<P, R>(
    problem: &P,
    state: &SaddleIterate,
    dataset: &Dataset,
    config: &SsdsConfig,
    rng: &mut R,
) -> Result<(SaddleIterate, EpochReport)>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    run_epoch(problem, state, dataset, config, TrainingAlgorithm::Ssds, rng)
}

/// Algorithm 3: SSDS with `u^j` projected onto the budget ball every batch.
pub fn minibatch_ssds_p_epoch<P, R>(
    problem: &P,
    state: &SaddleIterate,
    dataset: &Dataset,
    config: &SsdsConfig,
    rng: &mut R,
) -> Result<(SaddleIterate, EpochReport)>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    run_epoch(problem, state, dataset, config, TrainingAlgorithm::SsdsP, rng)
}

/// Algorithm 2: mini-batch SGDA.
pub fn minibatch_sgda_epoch<P, R>(
    problem: &P,
    state: &SaddleIterate,
    dataset: &Dataset,
    config: &SsdsConfig,
    rng: &mut R,
) -> Result<(SaddleIterate, EpochReport)>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    run_epoch(problem, state, dataset, config, TrainingAlgorithm::Sgda, rng)
}

/// Natural (non-robust) training on clean inputs; `u` stays at zero.
pub fn natural_epoch<P, R>(
    problem: &P,
    state: &SaddleIterate,
    dataset: &Dataset,
    config: &SsdsConfig,
    rng: &mut R,
) -> Result<(SaddleIterate, EpochReport)>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    run_epoch(problem, state, dataset, config, TrainingAlgorithm::Natural, rng)
}

struct Guard<'a> {
    epoch: u64,
    batch: Option<usize>,
    state: &'a SaddleIterate,
}

impl Guard<'_> {
    fn fail(&self, component: String, value: f64) -> Error {
        Error::Divergence(Box::new(DivergenceReport {
            epoch: self.epoch,
            batch: self.batch,
            component,
            value,
            lambda: self.state.duals.lambda,
            t: self.state.x.t,
        }))
    }

    fn scalar(&self, name: &str, x: f64) -> Result<()> {
        if x.is_finite() {
            Ok(())
        } else {
            Err(self.fail(name.to_string(), x))
        }
    }

    fn vector(&self, name: &str, xs: &[f64]) -> Result<()> {
        match xs.iter().find(|x| !x.is_finite()) {
            Some(&x) => Err(self.fail(name.to_string(), x)),
            None => Ok(()),
        }
    }
}

/// Runs one epoch of `algo`. `state.k` counts completed epochs.
pub fn run_epoch<P, R>(
    problem: &P,
    state: &SaddleIterate,
    dataset: &Dataset,
    config: &SsdsConfig,
    algo: TrainingAlgorithm,
    rng: &mut R,
) -> Result<(SaddleIterate, EpochReport)>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    let n = dataset.len();
    if state.num_samples() != n || state.duals.v.len() != n {
        return Err(Error::Shape {
            context: "training state vs dataset",
            expected: n,
            got: state.num_samples(),
        });
    }
    if state.x.w.len() != problem.param_dim() {
        return Err(Error::Shape {
            context: "training parameters",
            expected: problem.param_dim(),
            got: state.x.w.len(),
        });
    }
    let epoch = state.k + 1;
    let alpha = config.schedule().step_size(epoch, 1.0)?;
    let batches = dataset.shuffled_batches(config.batch_size, rng)?;

    let mut next = state.clone();
    next.k = epoch;
    let lambda_start = state.duals.lambda;
    let t_k = state.x.t;
    let zero_u = vec![0.0; dataset.input_dim()];
    let mut loss_total = 0.0;

    for (b, batch) in batches.iter().enumerate() {
        let mut grad_w = vec![0.0; next.x.w.len()];
        let mut losses = Vec::with_capacity(batch.len());
        let mut grads_u = Vec::with_capacity(batch.len());
        for &j in batch {
            let u = if algo == TrainingAlgorithm::Natural {
                &zero_u[..]
            } else {
                next.u.get(j)
            };
            let g = problem.loss_and_grads(&next.x.w, dataset.get(j), u)?;
            for (acc, gw) in grad_w.iter_mut().zip(&g.grad_w) {
                *acc += gw;
            }
            losses.push(g.loss);
            grads_u.push(g.grad_u);
        }
        loss_total += losses.iter().sum::<f64>();

        let lambda = next.duals.lambda;
        let w_scale = match algo {
            TrainingAlgorithm::Ssds | TrainingAlgorithm::SsdsP => config.lr * lambda,
            TrainingAlgorithm::Sgda | TrainingAlgorithm::Natural => config.lr,
        };
        for (w, g) in next.x.w.iter_mut().zip(&grad_w) {
            *w -= w_scale * g;
        }

        match algo {
            TrainingAlgorithm::Natural => {}
            TrainingAlgorithm::Sgda => {
                for (&j, gu) in batch.iter().zip(&grads_u) {
                    for (u, g) in next.u.0[j].iter_mut().zip(gu) {
                        *u += alpha * config.eta * g;
                    }
                }
            }
            TrainingAlgorithm::Ssds | TrainingAlgorithm::SsdsP => {
                let mut big_u = 0.0;
                for ((&j, gu), loss) in batch.iter().zip(&grads_u).zip(&losses) {
                    let u_old = next.u.0[j].clone();
                    let v_old = next.duals.v[j];
                    let h = problem.constraint(&u_old);
                    let s = problem.constraint_subgrad(&u_old);
                    let dv = if config.include_lambda_in_v_update { lambda * h } else { h };
                    next.duals.v[j] = positive_project(v_old + alpha * dv).map_err(|_| {
                        Guard { epoch, batch: Some(b), state: &next }.fail(format!("v[{j}]"), v_old + alpha * dv)
                    })?;
                    let mut u_new: Vec<f64> = u_old
                        .iter()
                        .zip(gu)
                        .zip(&s)
                        .map(|((u, g), s)| u + alpha * config.eta * (g - config.c1 * v_old * s))
                        .collect();
                    if algo == TrainingAlgorithm::SsdsP {
                        Guard { epoch, batch: Some(b), state: &next }.vector(&format!("u[{j}]"), &u_new)?;
                        u_new = problem.budget().project(&u_new)?;
                    }
                    next.u.0[j] = u_new;
                    big_u += (loss - v_old) * h;
                }
                let raw = lambda + config.c2 * alpha * (big_u - t_k);
                let guard = Guard { epoch, batch: Some(b), state: &next };
                guard.scalar("lambda", raw)?;
                let mut l = positive_project(raw)?;
                if let Some(ceiling) = config.lambda_ceiling {
                    l = l.min(ceiling);
                }
                next.duals.lambda = l;
            }
        }

        let guard = Guard { epoch, batch: Some(b), state: &next };
        guard.vector("w", &next.x.w)?;
        for &j in batch {
            guard.vector(&format!("u[{j}]"), next.u.get(j))?;
        }
        if next.duals.lambda > LAMBDA_LIMIT {
            return Err(guard.fail("lambda".into(), next.duals.lambda));
        }
    }

    if matches!(algo, TrainingAlgorithm::Ssds | TrainingAlgorithm::SsdsP) {
        next.x.t = t_k + alpha * (lambda_start - 1.0);
        Guard { epoch, batch: None, state: &next }.scalar("t", next.x.t)?;
    }

    let budget = problem.budget();
    let within = next.u.0.iter().filter(|u| budget.value(u) <= 0.0).count();
    let delta: f64 = next
        .u
        .0
        .iter()
        .zip(&state.u.0)
        .map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            l2_norm(&d)
        })
        .sum();
    let report = EpochReport {
        epoch,
        alpha,
        lambda: next.duals.lambda,
        t: next.x.t,
        mean_loss: loss_total / n as f64,
        frac_u_within_budget: within as f64 / n as f64,
        mean_u_delta_l2: delta / n as f64,
    };
    Guard { epoch, batch: None, state: &next }.scalar("mean_loss", report.mean_loss)?;
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_synthetic_dataset, QuadraticSaddleProblem, RobustLogisticProblem};
    use crate::types::BudgetConstraint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logistic_setup(eps: f64) -> (RobustLogisticProblem, Dataset, SsdsConfig) {
        let d = make_synthetic_dataset(60, 3, 2, 2.0, 4).unwrap();
        let p = RobustLogisticProblem::new(3, 2, BudgetConstraint::linf(eps));
        let cfg = SsdsConfig {
            epsilon: eps,
            batch_size: 16,
            lr: 0.01,
            ..SsdsConfig::default()
        };
        (p, d, cfg)
    }

    fn init(p: &RobustLogisticProblem, d: &Dataset, cfg: &SsdsConfig) -> SaddleIterate {
        let w = p.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        SaddleIterate::initial(w, d.len(), d.input_dim(), cfg.lambda0, cfg.v0, cfg.t0)
    }

    #[test]
    fn epoch_counts_and_report_ranges() {
        let (p, d, cfg) = logistic_setup(0.03);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut z = init(&p, &d, &cfg);
        for e in 1..=3 {
            let (next, rep) = minibatch_ssds_epoch(&p, &z, &d, &cfg, &mut rng).unwrap();
            assert_eq!(rep.epoch, e);
            assert_eq!(next.k, e);
            assert!((0.0..=1.0).contains(&rep.frac_u_within_budget));
            assert!(next.duals.lambda >= 0.0 && next.duals.v.iter().all(|v| *v >= 0.0));
            z = next;
        }
    }

    #[test]
    fn ssds_p_respects_budget_and_matches_ssds_with_huge_budget() {
        let (p, d, cfg) = logistic_setup(0.03);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut z = init(&p, &d, &cfg);
        for _ in 0..5 {
            let (next, _) = minibatch_ssds_p_epoch(&p, &z, &d, &cfg, &mut rng).unwrap();
            assert!(next.u.max_linf() <= 0.03);
            z = next;
        }

        // c2 = 0 keeps λ away from the huge (Σ(L − v)·h) term
        let (p, d, mut cfg) = logistic_setup(1e6);
        cfg.c2 = 0.0;
        let z0 = init(&p, &d, &cfg);
        let (mut a, mut b) = (z0.clone(), z0);
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(2), ChaCha8Rng::seed_from_u64(2));
        for _ in 0..5 {
            a = minibatch_ssds_epoch(&p, &a, &d, &cfg, &mut ra).unwrap().0;
            b = minibatch_ssds_p_epoch(&p, &b, &d, &cfg, &mut rb).unwrap().0;
            assert!(a.u.max_linf() < 1e6);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sgda_with_constant_loss_only_advances_k() {
        // w = I and u = c give zero gradients for every sample
        let p = QuadraticSaddleProblem::new(1.0, 1.0, vec![0.0, 0.0], BudgetConstraint::linf(0.03)).unwrap();
        let d = Dataset::from_pairs(vec![(vec![0.2, 0.2], 0), (vec![0.2, 0.2], 0)], 1).unwrap();
        let cfg = SsdsConfig {
            batch_size: 1,
            ..SsdsConfig::default()
        };
        let z = SaddleIterate::initial(vec![0.2, 0.2], 2, 2, 4.0, 1.0, 1.0);
        let (next, _) = minibatch_sgda_epoch(&p, &z, &d, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut expected = z.clone();
        expected.k = 1;
        assert_eq!(next, expected);
    }

    #[test]
    fn divergence_is_reported() {
        let (p, d, mut cfg) = logistic_setup(0.03);
        cfg.lr = f64::MAX / 2.0;
        let z = init(&p, &d, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut res = Ok((z.clone(), None));
        for _ in 0..5 {
            res = match res {
                Ok((z, _)) => minibatch_ssds_epoch(&p, &z, &d, &cfg, &mut rng).map(|(z, r)| (z, Some(r))),
                e => e,
            };
        }
        match res {
            Err(Error::Divergence(rep)) => assert!(!rep.component.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [
            TrainingAlgorithm::Ssds,
            TrainingAlgorithm::SsdsP,
            TrainingAlgorithm::Sgda,
            TrainingAlgorithm::Natural,
        ] {
            assert_eq!(a.as_str().parse::<TrainingAlgorithm>().unwrap(), a);
        }
        assert!("adam".parse::<TrainingAlgorithm>().is_err());
    }
}
