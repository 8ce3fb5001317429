//! Perturbation-only dynamics against a frozen model.

use super::report::DivergenceReport;
use crate::config::SsdsConfig;
use crate::error::{Error, Result};
use crate::problems::{RobustProblem, Sample};
use crate::types::{positive_project, UncertaintyState};

fn diverged(step: u64, component: String, value: f64) -> Error {
    Error::Divergence(Box::new(DivergenceReport {
        epoch: step,
        batch: None,
        component,
        value,
        lambda: f64::NAN,
        t: f64::NAN,
    }))
}

/// `K` steps of `v ← [v + α h(u)]₊`, `u ← u + α(∂_u L − C₁ v s(u))` with
/// `w` (and `λ`) frozen. `on_step(k, u)` is called after every step.
pub fn ssds_attack_traced<P, F>(
    problem: &P,
    w_star: &[f64],
    samples: &[Sample],
    config: &SsdsConfig,
    steps: u64,
    mut on_step: F,
) -> Result<UncertaintyState>
where
    P: RobustProblem + ?Sized,
    F: FnMut(u64, &UncertaintyState) -> Result<()>,
{
    let schedule = config.schedule();
    let mut u = UncertaintyState::zeros(samples.len(), problem.input_dim());
    let mut v = vec![config.v0; samples.len()];
    for k in 1..=steps {
        let alpha = schedule.step_size(k, 1.0)?;
        for (i, sample) in samples.iter().enumerate() {
            let u_old = &u.0[i];
            let g = problem.grad_u(w_star, sample, u_old)?;
            let h = problem.constraint(u_old);
            let s = problem.constraint_subgrad(u_old);
            let v_old = v[i];
            let raw = v_old + alpha * h;
            v[i] = positive_project(raw).map_err(|_| diverged(k, format!("v[{i}]"), raw))?;
            let next: Vec<f64> = u_old
                .iter()
                .zip(&g)
                .zip(&s)
                .map(|((u, g), s)| u + alpha * config.eta * (g - config.c1 * v_old * s))
                .collect();
            if let Some(&bad) = next.iter().find(|x| !x.is_finite()) {
                return Err(diverged(k, format!("u[{i}]"), bad));
            }
            u.0[i] = next;
        }
        on_step(k, &u)?;
    }
    Ok(u)
}

/// Algorithm 5 (SSDS attack) starting from `u0 = 0`, `v0 = config.v0`.
pub fn ssds_attack<P: RobustProblem + ?Sized>(
    problem: &P,
    w_star: &[f64],
    samples: &[Sample],
    config: &SsdsConfig,
    steps: u64,
) -> Result<UncertaintyState> {
    ssds_attack_traced(problem, w_star, samples, config, steps, |_, _| Ok(()))
}

/// `K` steps of gradient ascent `u ← u + α ∂_u L` with decaying `α`.
pub fn sgda_attack_traced<P, F>(
    problem: &P,
    w_star: &[f64],
    samples: &[Sample],
    config: &SsdsConfig,
    steps: u64,
    mut on_step: F,
) -> Result<UncertaintyState>
where
    P: RobustProblem + ?Sized,
    F: FnMut(u64, &UncertaintyState) -> Result<()>,
{
    let schedule = config.schedule();
    let mut u = UncertaintyState::zeros(samples.len(), problem.input_dim());
    for k in 1..=steps {
        let alpha = schedule.step_size(k, 1.0)?;
        for (i, sample) in samples.iter().enumerate() {
            let g = problem.grad_u(w_star, sample, &u.0[i])?;
            for (x, g) in u.0[i].iter_mut().zip(&g) {
                *x += alpha * config.eta * g;
            }
            if let Some(&bad) = u.0[i].iter().find(|x| !x.is_finite()) {
                return Err(diverged(k, format!("u[{i}]"), bad));
            }
        }
        on_step(k, &u)?;
    }
    Ok(u)
}

/// Algorithm 4 (SGDA attack) starting from `u0 = 0`.
pub fn sgda_attack<P: RobustProblem + ?Sized>(
    problem: &P,
    w_star: &[f64],
    samples: &[Sample],
    config: &SsdsConfig,
    steps: u64,
) -> Result<UncertaintyState> {
    sgda_attack_traced(problem, w_star, samples, config, steps, |_, _| Ok(()))
}
