//! Lagrangian, KKT residuals, local saddle-inequality probes and budget
//! statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{Dataset, RobustProblem};
use crate::types::SaddleIterate;

/// Per-condition KKT violations; every field is zero at a KKT point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    /// `‖∂_x 𝓛‖₂` with `∂_w 𝓛 = λ Σ ∂_w L_i` and `∂_t 𝓛 = 1 − λ`.
    pub stationarity_x: f64,
    /// `max_i ‖∂_u L_i − v^i s(u^i)‖₂`.
    pub stationarity_u: f64,
    /// `|λ (g − Σ v^i h^i)|`.
    pub comp_slack_lambda: f64,
    /// `max_i |v^i h^i|`.
    pub comp_slack_v: f64,
    /// `max(0, g, max_i h^i)`.
    pub primal_feas: f64,
    /// `max(0, −λ, −min_i v^i)`.
    pub dual_feas: f64,
}

impl KktResidual {
    pub fn max_field(&self) -> f64 {
        [
            self.stationarity_x,
            self.stationarity_u,
            self.comp_slack_lambda,
            self.comp_slack_v,
            self.primal_feas,
            self.dual_feas,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_field() <= tol
    }
}

fn check_shapes(dataset: &Dataset, z: &SaddleIterate) -> Result<()> {
    if z.num_samples() != dataset.len() || z.duals.v.len() != dataset.len() {
        return Err(Error::Shape {
            context: "iterate vs dataset",
            expected: dataset.len(),
            got: z.num_samples(),
        });
    }
    Ok(())
}

/// `Σ_i (L_i − v^i h^i)`, the bracket of the Lagrangian without `−t`.
fn penalized_loss_sum<P: RobustProblem + ?Sized>(problem: &P, dataset: &Dataset, z: &SaddleIterate) -> Result<f64> {
    let mut acc = 0.0;
    for (i, s) in dataset.samples().iter().enumerate() {
        let u = z.u.get(i);
        acc += problem.loss(&z.x.w, s, u)? - z.duals.v[i] * problem.constraint(u);
    }
    Ok(acc)
}

/// `𝓛 = t + λ (Σ_i (L_i − v^i h^i) − t)`.
pub fn lagrangian_value<P: RobustProblem + ?Sized>(problem: &P, dataset: &Dataset, z: &SaddleIterate) -> Result<f64> {
    check_shapes(dataset, z)?;
    let bracket = penalized_loss_sum(problem, dataset, z)? - z.x.t;
    Ok(z.x.t + z.duals.lambda * bracket)
}

pub fn kkt_residual<P: RobustProblem + ?Sized>(problem: &P, dataset: &Dataset, z: &SaddleIterate) -> Result<KktResidual> {
    check_shapes(dataset, z)?;
    let lambda = z.duals.lambda;
    let mut grad_w = vec![0.0; z.x.w.len()];
    let mut loss_sum = 0.0;
    let mut vh_sum = 0.0;
    let mut stationarity_u: f64 = 0.0;
    let mut comp_slack_v: f64 = 0.0;
    let mut max_h = f64::NEG_INFINITY;
    for (i, s) in dataset.samples().iter().enumerate() {
        let u = z.u.get(i);
        let g = problem.loss_and_grads(&z.x.w, s, u)?;
        loss_sum += g.loss;
        for (a, b) in grad_w.iter_mut().zip(&g.grad_w) {
            *a += b;
        }
        let h = problem.constraint(u);
        let sub = problem.constraint_subgrad(u);
        let vi = z.duals.v[i];
        let du: f64 = g
            .grad_u
            .iter()
            .zip(&sub)
            .map(|(a, b)| (a - vi * b).powi(2))
            .sum::<f64>()
            .sqrt();
        stationarity_u = stationarity_u.max(du);
        comp_slack_v = comp_slack_v.max((vi * h).abs());
        vh_sum += vi * h;
        max_h = max_h.max(h);
    }
    let g_value = loss_sum - z.x.t;
    let sx = grad_w.iter().map(|g| (lambda * g).powi(2)).sum::<f64>() + (1.0 - lambda).powi(2);
    let min_v = z.duals.v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(KktResidual {
        stationarity_x: sx.sqrt(),
        stationarity_u,
        comp_slack_lambda: (lambda * (g_value - vh_sum)).abs(),
        comp_slack_v,
        primal_feas: 0.0f64.max(g_value).max(max_h),
        dual_feas: 0.0f64.max(-lambda).max(-min_v),
    })
}

/// Outcome of [`saddle_inequality_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleCheck {
    pub probes: usize,
    pub violations: usize,
    /// Largest amount by which either inequality failed (0 if none did).
    pub max_violation: f64,
}

pub const DEFAULT_PROBE_RADIUS: f64 = 0.1;
pub const DEFAULT_PROBES: usize = 1000;
pub const SADDLE_TOL: f64 = 1e-7;

/// Probes `𝓛(x*, λ, u, v*) ≤ 𝓛(z*) ≤ 𝓛(x, λ*, u*, v)` at random points within
/// `radius` (per coordinate) of the candidate, keeping `λ, v ≥ 0`.
///
/// Each probe perturbs both sides once; a probe counts as one violation if
/// either inequality fails by more than `tol`.
pub fn saddle_inequality_check<P, R>(
    problem: &P,
    dataset: &Dataset,
    z: &SaddleIterate,
    probes: usize,
    radius: f64,
    tol: f64,
    rng: &mut R,
) -> Result<SaddleCheck>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    check_shapes(dataset, z)?;
    if probes == 0 {
        return Ok(SaddleCheck {
            probes: 0,
            violations: 0,
            max_violation: 0.0,
        });
    }
    let center = lagrangian_value(problem, dataset, z)?;
    let mut jitter = |x: f64| x + rng.random_range(-radius..=radius);
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    for _ in 0..probes {
        // max side: (λ, u) vary
        let mut lo = z.clone();
        lo.duals.lambda = jitter(z.duals.lambda).max(0.0);
        for u in &mut lo.u.0 {
            u.iter_mut().for_each(|x| *x = jitter(*x));
        }
        // min side: (x, v) vary
        let mut hi = z.clone();
        hi.x.w.iter_mut().for_each(|x| *x = jitter(*x));
        hi.x.t = jitter(hi.x.t);
        hi.duals.v.iter_mut().for_each(|x| *x = jitter(*x).max(0.0));

        let left = lagrangian_value(problem, dataset, &lo)? - center;
        let right = center - lagrangian_value(problem, dataset, &hi)?;
        let worst = left.max(right).max(0.0);
        if worst > tol {
            violations += 1;
        }
        max_violation = max_violation.max(worst);
    }
    Ok(SaddleCheck {
        probes,
        violations,
        max_violation,
    })
}

/// Histogram of per-sample perturbation norms over `[0, max norm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetHistogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub max_norm: f64,
    /// Fraction of samples with `‖u^i‖ ≤ ε`.
    pub fraction_within: f64,
}

impl BudgetHistogram {
    /// Two-column CSV: bin lower edge, count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.17e},{c}\n", b as f64 * self.bin_width));
        }
        out
    }
}

/// Bins `‖u^i‖` (in the budget's norm) into `bins` equal-width bins.
pub fn budget_histogram(
    u: &crate::types::UncertaintyState,
    budget: &crate::types::BudgetConstraint,
    bins: usize,
) -> Result<BudgetHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let norms: Vec<f64> = u.0.iter().map(|x| budget.norm_order.norm(x)).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let bin_width = if max_norm > 0.0 { max_norm / bins as f64 } else { 0.0 };
    let mut counts = vec![0; bins];
    for &n in &norms {
        let b = if bin_width > 0.0 {
            ((n / bin_width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    let within = norms.iter().filter(|&&n| n <= budget.epsilon).count();
    Ok(BudgetHistogram {
        bin_width,
        counts,
        max_norm,
        fraction_within: if norms.is_empty() { 1.0 } else { within as f64 / norms.len() as f64 },
    })
}

/// Everything `diagnose` reports, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub run_id: String,
    pub lagrangian: f64,
    pub kkt: KktResidual,
    pub saddle: SaddleCheck,
    pub probe_radius: f64,
    /// `Some` for problems with pass/fail semantics (the convex–concave ones).
    pub passed: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{saddle_oracle, QuadraticSaddleProblem};
    use crate::types::{BudgetConstraint, NormOrder, UncertaintyState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance() -> (QuadraticSaddleProblem, Dataset) {
        let p = QuadraticSaddleProblem::new(1.0, 1.0, vec![0.05, -0.05], BudgetConstraint::new(NormOrder::L2, 0.03).unwrap())
            .unwrap();
        let d = Dataset::from_pairs(
            vec![(vec![0.5, -0.2], 0), (vec![-0.1, 0.4], 0), (vec![0.3, 0.3], 0)],
            1,
        )
        .unwrap();
        (p, d)
    }

    #[test]
    fn lagrangian_specializations() {
        let (p, d) = instance();
        let mut z = saddle_oracle(&p, &d).unwrap();
        assert!((lagrangian_value(&p, &d, &z).unwrap() - z.x.t).abs() < 1e-15);
        z.duals.lambda = 0.0;
        z.x.t = 3.25;
        assert_eq!(lagrangian_value(&p, &d, &z).unwrap(), 3.25);

        let d1 = Dataset::from_pairs(vec![(vec![0.5, -0.2], 0)], 1).unwrap();
        let z1 = SaddleIterate::initial(vec![0.1, 0.1], 1, 2, 0.7, 0.0, 0.4);
        let l = p.loss(&z1.x.w, d1.get(0), z1.u.get(0)).unwrap();
        let expected = 0.4 + 0.7 * (l - 0.4);
        assert!((lagrangian_value(&p, &d1, &z1).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn kkt_is_zero_at_oracle_and_not_elsewhere() {
        let (p, d) = instance();
        let z = saddle_oracle(&p, &d).unwrap();
        let r = kkt_residual(&p, &d, &z).unwrap();
        assert!(r.within(1e-9), "{r:?}");
        let mut off = z.clone();
        off.x.w[0] += 0.3;
        assert!(kkt_residual(&p, &d, &off).unwrap().stationarity_x > 0.0);
    }

    #[test]
    fn kkt_multiplier_free_specialization() {
        let (p, d) = instance();
        let z = SaddleIterate::initial(vec![0.0, 0.0], 3, 2, 0.0, 0.0, 100.0);
        let r = kkt_residual(&p, &d, &z).unwrap();
        assert_eq!(r.comp_slack_lambda, 0.0);
        assert_eq!(r.comp_slack_v, 0.0);
        let g: f64 = d.samples().iter().map(|s| p.loss(&z.x.w, s, &[0.0, 0.0]).unwrap()).sum::<f64>() - 100.0;
        assert_eq!(r.primal_feas, g.max(0.0).max(-0.03));
    }

    #[test]
    fn saddle_check_behaviour() {
        let (p, d) = instance();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = saddle_oracle(&p, &d).unwrap();
        let c = saddle_inequality_check(&p, &d, &z, 1000, 0.1, SADDLE_TOL, &mut rng).unwrap();
        assert_eq!(c.violations, 0, "{c:?}");
        let empty = saddle_inequality_check(&p, &d, &z, 0, 0.1, SADDLE_TOL, &mut rng).unwrap();
        assert_eq!((empty.violations, empty.max_violation), (0, 0.0));
        let random = SaddleIterate::initial(vec![0.9, -0.7], 3, 2, 2.0, 0.5, -1.0);
        let c = saddle_inequality_check(&p, &d, &random, 100, 0.1, SADDLE_TOL, &mut rng).unwrap();
        assert!(c.violations > 0);
    }

    #[test]
    fn histogram_cases() {
        let b = BudgetConstraint::linf(0.03);
        let h = budget_histogram(&UncertaintyState::zeros(5, 3), &b, 4).unwrap();
        assert_eq!(h.counts, vec![5, 0, 0, 0]);
        assert_eq!(h.fraction_within, 1.0);
        let u = UncertaintyState(vec![vec![0.01], vec![0.02], vec![0.05], vec![0.08]]);
        let h = budget_histogram(&u, &b, 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.fraction_within, 0.5);
        assert!(h.to_csv().starts_with("bin_lo,count\n"));
        assert!(budget_histogram(&u, &b, 0).is_err());
    }
}
