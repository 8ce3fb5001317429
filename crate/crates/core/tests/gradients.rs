//! Analytic and tape gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssds_core::autodiff::MlpArchitecture;
use ssds_core::problems::{MlpProblem, QuadraticSaddleProblem, RobustLogisticProblem, RobustProblem, Sample};
use ssds_core::BudgetConstraint;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..=r)).collect()
}

fn central<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|j| {
            x[j] = at[j] + H;
            let up = f(&x);
            x[j] = at[j] - H;
            let dn = f(&x);
            x[j] = at[j];
            (up - dn) / (2.0 * H)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&d) / n(a).max(n(b)).max(1e-8)
}

fn check<P: RobustProblem>(p: &P, w: &[f64], s: &Sample, u: &[f64]) {
    let g = p.loss_and_grads(w, s, u).unwrap();
    assert_eq!(g.loss, p.loss(w, s, u).unwrap());
    let fw = central(|w| p.loss(w, s, u).unwrap(), w);
    let fu = central(|u| p.loss(w, s, u).unwrap(), u);
    let (ew, eu) = (rel_err(&g.grad_w, &fw), rel_err(&g.grad_u, &fu));
    assert!(ew <= TOL, "parameter gradient rel err {ew}");
    assert!(eu <= TOL, "input gradient rel err {eu}");
}

#[test]
fn quadratic_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..32 {
        let m = rng.random_range(1..6);
        let c = uniform(&mut rng, m, 1.0);
        let p = QuadraticSaddleProblem::new(rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), c, BudgetConstraint::linf(0.1))
            .unwrap();
        let s = Sample {
            id: 0,
            input: uniform(&mut rng, m, 1.0),
            label: 0,
        };
        check(&p, &uniform(&mut rng, m, 1.0), &s, &uniform(&mut rng, m, 0.5));
    }
}

#[test]
fn logistic_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..32 {
        let m = rng.random_range(1..8);
        let k = rng.random_range(2..5);
        let p = RobustLogisticProblem::new(m, k, BudgetConstraint::linf(0.1));
        let s = Sample {
            id: 0,
            input: uniform(&mut rng, m, 2.0),
            label: rng.random_range(0..k),
        };
        check(&p, &uniform(&mut rng, p.param_dim(), 1.0), &s, &uniform(&mut rng, m, 0.3));
    }
}

#[test]
fn small_mlp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..32 {
        let m = rng.random_range(2..8);
        let arch = MlpArchitecture::new(vec![m, rng.random_range(2..9), rng.random_range(2..6), 3]).unwrap();
        // random biases too: zero biases behind a dead layer sit exactly on the ReLU kink
        let w = uniform(&mut rng, arch.param_count(), 0.8);
        let p = MlpProblem::new(arch, BudgetConstraint::linf(0.1));
        let s = Sample {
            id: 0,
            input: uniform(&mut rng, m, 1.0),
            label: rng.random_range(0..3),
        };
        check(&p, &w, &s, &uniform(&mut rng, m, 0.1));
    }
}
