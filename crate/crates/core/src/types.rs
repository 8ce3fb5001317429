//! State, budget and step-size types shared by every solver.
//!
//! The full iterate of the saddle dynamics is `z = (x, λ, u, v)` with
//! `x = (w, t)`: model parameters `w`, the epigraph variable `t`, the outer
//! multiplier `λ`, and one perturbation `u^i` plus one inner multiplier `v^i`
//! per training sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `max(x, 0)`, rejecting non-finite input.
pub fn positive_project(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::non_finite("positive projection input"));
    }
    Ok(x.max(0.0))
}

/// Componentwise [`positive_project`].
pub fn positive_project_slice(xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| positive_project(x)).collect()
}

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn linf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn l1_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.abs()).sum()
}

/// Supported budget norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    L1,
    L2,
    Linf,
}

impl NormOrder {
    pub fn norm(self, xs: &[f64]) -> f64 {
        match self {
            NormOrder::L1 => l1_norm(xs),
            NormOrder::L2 => l2_norm(xs),
            NormOrder::Linf => linf_norm(xs),
        }
    }

    /// The dual norm order (`1 <-> ∞`, `2 <-> 2`).
    pub fn dual(self) -> NormOrder {
        match self {
            NormOrder::L1 => NormOrder::Linf,
            NormOrder::L2 => NormOrder::L2,
            NormOrder::Linf => NormOrder::L1,
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "l1" => Ok(NormOrder::L1),
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "linf" => Ok(NormOrder::Linf),
            other => Err(Error::InvalidArgument(format!("unknown norm order `{other}`"))),
        }
    }
}

impl std::fmt::Display for NormOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormOrder::L1 => "l1",
            NormOrder::L2 => "l2",
            NormOrder::Linf => "linf",
        })
    }
}

/// Which element of `∂‖u‖∞` the u-dynamics use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SubgradientRule {
    /// `sgn(u)` componentwise, as the training algorithms are written.
    /// Not an element of the ℓ∞ subdifferential once two or more
    /// coordinates are nonzero.
    #[default]
    Sign,
    /// Mass `1/|J|` on each coordinate `j ∈ J` attaining the maximum
    /// magnitude; a genuine subgradient.
    Exact,
}

/// The perturbation budget `h(u) = ‖u‖_p − ε ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstraint {
    pub norm_order: NormOrder,
    pub epsilon: f64,
}

impl BudgetConstraint {
    pub fn new(norm_order: NormOrder, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "budget epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            norm_order,
            epsilon,
        })
    }

    pub fn linf(epsilon: f64) -> Self {
        Self {
            norm_order: NormOrder::Linf,
            epsilon,
        }
    }

    /// `h(u) = ‖u‖_p − ε`.
    pub fn value(&self, u: &[f64]) -> f64 {
        self.norm_order.norm(u) - self.epsilon
    }

    /// A subgradient of `h` at `u`; zero at `u = 0`.
    pub fn subgradient(&self, u: &[f64], rule: SubgradientRule) -> Vec<f64> {
        match self.norm_order {
            NormOrder::L1 => u.iter().map(|&x| sgn(x)).collect(),
            NormOrder::L2 => {
                let n = l2_norm(u);
                if n == 0.0 {
                    vec![0.0; u.len()]
                } else {
                    u.iter().map(|x| x / n).collect()
                }
            }
            NormOrder::Linf => match rule {
                SubgradientRule::Sign => u.iter().map(|&x| sgn(x)).collect(),
                SubgradientRule::Exact => {
                    let m = linf_norm(u);
                    if m == 0.0 {
                        return vec![0.0; u.len()];
                    }
                    let count = u.iter().filter(|x| x.abs() == m).count() as f64;
                    u.iter()
                        .map(|&x| if x.abs() == m { sgn(x) / count } else { 0.0 })
                        .collect()
                }
            },
        }
    }

    /// Euclidean projection onto `{u : ‖u‖_p ≤ ε}`.
    ///
    /// The result always satisfies `‖result‖_p ≤ ε` in floating point, which
    /// makes the projection exactly idempotent.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("ball projection input"));
        }
        let eps = self.epsilon;
        Ok(match self.norm_order {
            NormOrder::Linf => u.iter().map(|x| x.clamp(-eps, eps)).collect(),
            NormOrder::L2 => {
                let n = l2_norm(u);
                if n <= eps {
                    u.to_vec()
                } else {
                    shrink_into_ball(u, eps / n, |r| l2_norm(r) <= eps)
                }
            }
            NormOrder::L1 => {
                if l1_norm(u) <= eps {
                    u.to_vec()
                } else {
                    let theta = l1_threshold(u, eps);
                    let soft: Vec<f64> = u
                        .iter()
                        .map(|&x| sgn(x) * (x.abs() - theta).max(0.0))
                        .collect();
                    shrink_into_ball(&soft, 1.0, |r| l1_norm(r) <= eps)
                }
            }
        })
    }
}

/// Scales `u` by `scale`, nudging the factor down until `inside` holds.
fn shrink_into_ball(u: &[f64], mut scale: f64, inside: impl Fn(&[f64]) -> bool) -> Vec<f64> {
    loop {
        let r: Vec<f64> = u.iter().map(|x| x * scale).collect();
        if inside(&r) {
            return r;
        }
        scale *= 1.0 - f64::EPSILON;
    }
}

/// Soft-threshold level for projecting onto the ℓ1 ball (sort-based).
fn l1_threshold(u: &[f64], eps: f64) -> f64 {
    let mut mags: Vec<f64> = u.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - eps) / (j as f64 + 1.0);
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Step-size sequences for the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `α_k = (γ0 / k) / ‖T(z_k)‖₂`.
    AdaptiveNorm { gamma0: f64 },
    /// `α_{k+1} = α_k · exp(−k·p)`, `α_1 = α0`.
    ExponentialDecay { alpha0: f64, decay_p: f64 },
}

impl StepSchedule {
    /// Step size for step (or epoch) `k ≥ 1`.
    ///
    /// `dynamics_norm` is the two-norm of the stacked update directions and
    /// is ignored by [`StepSchedule::ExponentialDecay`].
    pub fn step_size(&self, k: u64, dynamics_norm: f64) -> Result<f64> {
        match *self {
            StepSchedule::AdaptiveNorm { .. } => {
                if k == 0 {
                    return Err(Error::InvalidArgument(
                        "adaptive step size needs k >= 1".into(),
                    ));
                }
                if !dynamics_norm.is_finite() {
                    return Err(Error::non_finite("dynamics norm"));
                }
                if dynamics_norm <= 0.0 {
                    return Err(Error::FixedPoint { k });
                }
                Ok(self.gamma(k) / dynamics_norm)
            }
            StepSchedule::ExponentialDecay { alpha0, decay_p } => {
                let k = k.max(1) as f64;
                // Σ_{j=1}^{k-1} j
                let exponent = 0.5 * k * (k - 1.0) * decay_p;
                Ok(alpha0 * (-exponent).exp())
            }
        }
    }

    /// `γ_k` for the adaptive schedule; `α_k` for the decaying one.
    pub fn gamma(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::AdaptiveNorm { gamma0 } => gamma0 / k.max(1) as f64,
            StepSchedule::ExponentialDecay { .. } => self
                .step_size(k, 1.0)
                .expect("exponential decay step is infallible"),
        }
    }
}

/// `x = (w, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionState {
    pub w: Vec<f64>,
    pub t: f64,
}

/// One perturbation vector per training sample, indexed by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyState(pub Vec<Vec<f64>>);

impl UncertaintyState {
    pub fn zeros(num_samples: usize, dim: usize) -> Self {
        Self(vec![vec![0.0; dim]; num_samples])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub fn linf_norms(&self) -> Vec<f64> {
        self.0.iter().map(|u| linf_norm(u)).collect()
    }

    pub fn max_linf(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, u| m.max(linf_norm(u)))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|u| u.iter().all(|x| x.is_finite()))
    }
}

/// `(λ, v)`; both kept nonnegative by positive projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub v: Vec<f64>,
}

/// The full iterate `z_k = (x, λ, u, v)` at step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleIterate {
    pub x: DecisionState,
    pub duals: DualState,
    pub u: UncertaintyState,
    pub k: u64,
}

impl SaddleIterate {
    /// Standard initialization: `u0 = 0`, `λ0`, `v0` and `t0` from the config.
    pub fn initial(w0: Vec<f64>, num_samples: usize, input_dim: usize, lambda0: f64, v0: f64, t0: f64) -> Self {
        Self {
            x: DecisionState { w: w0, t: t0 },
            duals: DualState {
                lambda: lambda0,
                v: vec![v0; num_samples],
            },
            u: UncertaintyState::zeros(num_samples, input_dim),
            k: 0,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.u.len()
    }

    /// Checks the joint invariants: finite state, `λ ≥ 0`, `v ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        if self.x.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("w"));
        }
        if !self.x.t.is_finite() {
            return Err(Error::non_finite("t"));
        }
        if !self.duals.lambda.is_finite() || self.duals.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {}",
                self.duals.lambda
            )));
        }
        if self.duals.v.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "v must be finite and nonnegative".into(),
            ));
        }
        if !self.u.is_finite() {
            return Err(Error::non_finite("u"));
        }
        if self.duals.v.len() != self.u.len() {
            return Err(Error::Shape {
                context: "v vs u sample count",
                expected: self.u.len(),
                got: self.duals.v.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn positive_projection_examples() {
        assert_eq!(positive_project(0.7).unwrap(), 0.7);
        assert_eq!(positive_project(-0.4).unwrap(), 0.0);
        assert_eq!(
            positive_project_slice(&[-1.0, 2.0, 0.0]).unwrap(),
            vec![0.0, 2.0, 0.0]
        );
        assert!(matches!(
            positive_project(f64::NAN),
            Err(Error::NonFinite { .. })
        ));
        assert!(positive_project(f64::INFINITY).is_err());
    }

    #[test]
    fn adaptive_step() {
        let s = StepSchedule::AdaptiveNorm { gamma0: 1.0 };
        assert_eq!(s.step_size(1, 2.0).unwrap(), 0.5);
        assert!(matches!(s.step_size(3, 0.0), Err(Error::FixedPoint { k: 3 })));
        assert!(s.step_size(0, 1.0).is_err());
    }

    #[test]
    fn exponential_decay_step() {
        let s = StepSchedule::ExponentialDecay {
            alpha0: 2.0,
            decay_p: 0.001,
        };
        assert_eq!(s.step_size(1, 0.0).unwrap(), 2.0);
        // one recursion step: 2 * e^{-1 * 0.001}
        let expected = 2.0 * (-0.001f64).exp();
        assert!((s.step_size(2, 0.0).unwrap() - expected).abs() < 1e-15);
        assert!((s.step_size(2, 0.0).unwrap() - 1.998001).abs() < 1e-6);
        // unrolled recursion for a few more steps
        let mut alpha = 2.0;
        for k in 1..50u64 {
            assert!((s.step_size(k, 0.0).unwrap() - alpha).abs() < 1e-12 * alpha.max(1e-300));
            alpha *= (-(k as f64) * 0.001).exp();
        }
    }

    #[test]
    fn exponential_decay_strictly_decreasing() {
        let s = StepSchedule::ExponentialDecay {
            alpha0: 2.0,
            decay_p: 0.001,
        };
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let a = s.step_size(k, 0.0).unwrap();
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn harmonic_gamma_is_square_summable() {
        let s = StepSchedule::AdaptiveNorm { gamma0: 1.0 };
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for k in 1..=1_000_000u64 {
            let g = s.gamma(k);
            sum += g;
            sum_sq += g * g;
        }
        let basel = std::f64::consts::PI.powi(2) / 6.0;
        assert!((sum_sq - basel).abs() < 1e-3);
        // Σγ grows like ln K: no finite limit.
        assert!(sum > 14.0);
    }

    #[test]
    fn ball_projection_examples() {
        let b = BudgetConstraint::linf(0.03);
        assert_eq!(b.project(&[0.05, -0.01]).unwrap(), vec![0.03, -0.01]);
        assert_eq!(b.project(&[0.01, 0.01]).unwrap(), vec![0.01, 0.01]);
        let b2 = BudgetConstraint::new(NormOrder::L2, 1.0).unwrap();
        let r = b2.project(&[3.0, 4.0]).unwrap();
        assert!((r[0] - 0.6).abs() < 1e-15 && (r[1] - 0.8).abs() < 1e-15);
        assert!(b.project(&[f64::NAN]).is_err());
    }

    #[test]
    fn l1_projection_matches_soft_threshold() {
        let b = BudgetConstraint::new(NormOrder::L1, 1.0).unwrap();
        // (2, 1, 0) -> threshold 1 -> (1, 0, 0)
        let r = b.project(&[2.0, -1.0, 0.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        assert_eq!(r[1], 0.0);
        assert_eq!(r[2], 0.0);
        // (1, 1) -> (0.5, 0.5)
        let r = b.project(&[1.0, 1.0]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(BudgetConstraint::new(NormOrder::Linf, 0.0).is_err());
        assert!(BudgetConstraint::new(NormOrder::Linf, f64::NAN).is_err());
    }

    #[test]
    fn subgradients() {
        let b = BudgetConstraint::linf(0.03);
        assert_eq!(
            b.subgradient(&[0.5, -0.2, 0.0], SubgradientRule::Sign),
            vec![1.0, -1.0, 0.0]
        );
        assert_eq!(
            b.subgradient(&[0.5, -0.2, 0.0], SubgradientRule::Exact),
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(
            b.subgradient(&[0.03, -0.03], SubgradientRule::Exact),
            vec![0.5, -0.5]
        );
        let b2 = BudgetConstraint::new(NormOrder::L2, 1.0).unwrap();
        assert_eq!(b2.subgradient(&[3.0, 4.0], SubgradientRule::Sign), vec![0.6, 0.8]);
        assert_eq!(b2.subgradient(&[0.0, 0.0], SubgradientRule::Sign), vec![0.0, 0.0]);
    }

    fn order() -> impl Strategy<Value = NormOrder> {
        prop_oneof![Just(NormOrder::L1), Just(NormOrder::L2), Just(NormOrder::Linf)]
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(
            u in prop::collection::vec(-10.0f64..10.0, 1..20),
            eps in 1e-3f64..5.0,
            p in order(),
        ) {
            let b = BudgetConstraint::new(p, eps).unwrap();
            let once = b.project(&u).unwrap();
            let twice = b.project(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(p.norm(&once) <= eps);
        }

        #[test]
        fn projection_is_nearest_feasible_point(
            u in prop::collection::vec(-2.0f64..2.0, 1..6),
            eps in 0.05f64..1.5,
            p in order(),
            probe in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let b = BudgetConstraint::new(p, eps).unwrap();
            let proj = b.project(&u).unwrap();
            // Any other feasible point is no closer in the Euclidean sense.
            let cand = b.project(&probe[..u.len()]).unwrap();
            let d_proj: f64 = u.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum();
            let d_cand: f64 = u.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(d_proj <= d_cand + 1e-12);
        }
    }
}
