use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{Dataset, RobustProblem};
use crate::types::{l2_norm, positive_project, SaddleIterate, StepSchedule};

/// Which samples enter the `x` and `λ` directions.
///
/// `Single(ξ)` uses the unbiased estimate `N·L_ξ − t` of `g`; `Full` uses
/// `Σ_i L_i − t`. The `u` and `v` directions always use every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSelection {
    Full,
    Single(usize),
}

/// The stacked update field `T(z)` split by block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDirections {
    /// Descent direction for `x = (w, t)`; the last entry is the `t` slot.
    pub dx: Vec<f64>,
    pub dlambda: f64,
    pub du: Vec<Vec<f64>>,
    pub dv: Vec<f64>,
}

impl UpdateDirections {
    /// Two-norm of the concatenation `(dx, dλ, du, dv)`.
    pub fn stacked_norm(&self) -> f64 {
        let mut sq = self.dx.iter().map(|x| x * x).sum::<f64>() + self.dlambda * self.dlambda;
        for d in &self.du {
            sq += d.iter().map(|x| x * x).sum::<f64>();
        }
        sq += self.dv.iter().map(|x| x * x).sum::<f64>();
        sq.sqrt()
    }
}

fn finite(what: impl FnOnce() -> String, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: what() });
    }
    Ok(())
}

/// Evaluates the four update directions at `z`.
pub fn compute_directions<P: RobustProblem + ?Sized>(
    problem: &P,
    dataset: &Dataset,
    z: &SaddleIterate,
    selection: SampleSelection,
    include_lambda_in_v_update: bool,
) -> Result<UpdateDirections> {
    let n = dataset.len();
    if z.num_samples() != n || z.duals.v.len() != n {
        return Err(Error::Shape {
            context: "iterate vs dataset",
            expected: n,
            got: z.num_samples(),
        });
    }
    if let SampleSelection::Single(xi) = selection {
        if xi >= n {
            return Err(Error::InvalidArgument(format!("sample {xi} out of range for {n} samples")));
        }
    }
    let (w, t, lambda) = (&z.x.w, z.x.t, z.duals.lambda);

    let mut grad_w_sum = vec![0.0; w.len()];
    let mut loss_sum = 0.0;
    let mut du = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let mut vh_sum = 0.0;
    for (i, sample) in dataset.samples().iter().enumerate() {
        let u = z.u.get(i);
        let g = problem.loss_and_grads(w, sample, u)?;
        finite(|| format!("grad_u of sample {i}"), &g.grad_u)?;
        let counts = match selection {
            SampleSelection::Full => true,
            SampleSelection::Single(xi) => xi == i,
        };
        if counts {
            finite(|| format!("grad_w of sample {i}"), &g.grad_w)?;
            loss_sum += g.loss;
            for (acc, gw) in grad_w_sum.iter_mut().zip(&g.grad_w) {
                *acc += gw;
            }
        }
        let h = problem.constraint(u);
        let s = problem.constraint_subgrad(u);
        let vi = z.duals.v[i];
        du.push(g.grad_u.iter().zip(&s).map(|(gu, si)| gu - vi * si).collect());
        dv.push(if include_lambda_in_v_update { lambda * h } else { h });
        vh_sum += vi * h;
    }
    let scale = match selection {
        SampleSelection::Full => 1.0,
        SampleSelection::Single(_) => n as f64,
    };
    let g_value = scale * loss_sum - t;
    // ∂_w f = 0, ∂_t f = 1, ∂_t g = −1
    let mut dx: Vec<f64> = grad_w_sum.iter().map(|gw| lambda * scale * gw).collect();
    dx.push(1.0 - lambda);
    Ok(UpdateDirections {
        dx,
        dlambda: g_value - vh_sum,
        du,
        dv,
    })
}

/// Stacked direction norms at or below this count as a fixed point. The
/// adaptive step `γ_k/‖T‖` has length `γ_k` however small `‖T‖` is, so
/// round-off residuals at an exact saddle would otherwise be amplified
/// into unit-scale moves.
pub const FIXED_POINT_TOL: f64 = 1e-12;

/// One step of the coupled dynamics with `k ← k + 1` and
/// `α = schedule.step_size(k, ‖T(z)‖₂)`.
///
/// Returns [`Error::FixedPoint`] when `‖T(z)‖₂ ≤ FIXED_POINT_TOL`.
pub fn ssds_step<P: RobustProblem + ?Sized>(
    problem: &P,
    dataset: &Dataset,
    z: &SaddleIterate,
    selection: SampleSelection,
    schedule: &StepSchedule,
    include_lambda_in_v_update: bool,
) -> Result<SaddleIterate> {
    let d = compute_directions(problem, dataset, z, selection, include_lambda_in_v_update)?;
    let k = z.k + 1;
    let norm = d.stacked_norm();
    if norm <= FIXED_POINT_TOL {
        return Err(Error::FixedPoint { k });
    }
    let alpha = schedule.step_size(k, norm)?;
    let (dw, dt) = d.dx.split_at(d.dx.len() - 1);

    let mut next = z.clone();
    next.k = k;
    for (w, g) in next.x.w.iter_mut().zip(dw) {
        *w -= alpha * g;
    }
    next.x.t -= alpha * dt[0];
    next.duals.lambda = positive_project(z.duals.lambda + alpha * d.dlambda)?;
    for (u, du) in next.u.0.iter_mut().zip(&d.du) {
        for (a, b) in u.iter_mut().zip(du) {
            *a += alpha * b;
        }
    }
    for (v, dv) in next.duals.v.iter_mut().zip(&d.dv) {
        *v = positive_project(*v + alpha * dv)?;
    }
    finite(|| "w".into(), &next.x.w)?;
    finite(|| "t".into(), &[next.x.t])?;
    if !next.u.is_finite() {
        return Err(Error::non_finite("u"));
    }
    Ok(next)
}

/// `‖z − z*‖` in the weighted norm
/// `‖x − x*‖² + (λ − λ*)² + λ*·Σ‖u^i − u^i*‖² + Σ(v^i − v^i*)²`.
pub fn weighted_distance(z: &SaddleIterate, star: &SaddleIterate) -> f64 {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let x = sq(&z.x.w, &star.x.w) + (z.x.t - star.x.t).powi(2);
    let lam = (z.duals.lambda - star.duals.lambda).powi(2);
    let u: f64 = z.u.0.iter().zip(&star.u.0).map(|(a, b)| sq(a, b)).sum();
    let v = sq(&z.duals.v, &star.duals.v);
    x + lam + star.duals.lambda * u + v
}

/// Plain two-norm distance between two stacked iterates' `u` blocks.
pub fn u_distance(a: &SaddleIterate, b: &SaddleIterate) -> f64 {
    let diff: Vec<f64> = a
        .u
        .0
        .iter()
        .zip(&b.u.0)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q))
        .collect();
    l2_norm(&diff)
}
