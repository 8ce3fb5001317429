//! FGSM and PGD sign-gradient attacks, attacked-accuracy evaluation and
//! PGD adversarial training.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{ClassifierProblem, Dataset, RobustProblem, Sample};
use crate::types::{sgn, BudgetConstraint, UncertaintyState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::InvalidArgument(format!("unknown attack kind '{other}'"))),
        }
    }
}

/// Pixel range used for MNIST-style inputs.
pub const UNIT_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// PGD step length; FGSM always steps by `epsilon`.
    pub step_eta: f64,
    /// Ignored for FGSM.
    pub steps: usize,
    pub random_start: bool,
    /// Adversarial inputs are clamped into this box after every step.
    /// `None` leaves them unclamped (synthetic data with unbounded features).
    pub input_range: Option<(f64, f64)>,
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Fgsm,
            epsilon,
            step_eta: epsilon,
            steps: 1,
            random_start: false,
            input_range: Some(UNIT_RANGE),
        }
    }

    pub fn pgd(epsilon: f64, step_eta: f64, steps: usize) -> Self {
        AttackSpec {
            kind: AttackKind::Pgd,
            epsilon,
            step_eta,
            steps,
            random_start: true,
            input_range: Some(UNIT_RANGE),
        }
    }

    pub fn with_input_range(mut self, range: Option<(f64, f64)>) -> Self {
        self.input_range = range;
        self
    }

    pub fn with_random_start(mut self, on: bool) -> Self {
        self.random_start = on;
        self
    }

    /// Rejects non-finite or negative radii; returns a warning when the PGD
    /// step overshoots the ball by more than a factor two.
    pub fn validate(&self) -> Result<Option<String>> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.kind == AttackKind::Pgd {
            if !(self.step_eta.is_finite() && self.step_eta > 0.0) {
                return Err(Error::InvalidArgument(format!("PGD step must be > 0, got {}", self.step_eta)));
            }
            if self.steps == 0 {
                return Err(Error::InvalidArgument("PGD needs at least one step".into()));
            }
        }
        if let Some((lo, hi)) = self.input_range {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!("empty input range [{lo}, {hi}]")));
            }
        }
        if self.kind == AttackKind::Pgd && self.step_eta > 2.0 * self.epsilon {
            return Ok(Some(format!(
                "PGD step {} exceeds twice the radius {}",
                self.step_eta, self.epsilon
            )));
        }
        Ok(None)
    }

    /// Short parameter summary for evaluation tables.
    pub fn summary(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("eps={}", self.epsilon),
            AttackKind::Pgd => format!(
                "eps={} eta={} steps={} rs={}",
                self.epsilon, self.step_eta, self.steps, self.random_start
            ),
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        match self.input_range {
            Some((lo, hi)) => x.clamp(lo, hi),
            None => x,
        }
    }
}

fn sign_step(grad: &[f64], eta: f64) -> Vec<f64> {
    grad.iter().map(|&g| eta * sgn(g)).collect()
}

/// `clamp(I + ε·sgn(∂_u L(I, y, w)))`.
pub fn fgsm<P: RobustProblem + ?Sized>(problem: &P, w: &[f64], sample: &Sample, spec: &AttackSpec) -> Result<Vec<f64>> {
    let zero = vec![0.0; sample.input.len()];
    let g = problem.grad_u(w, sample, &zero)?;
    Ok(sample
        .input
        .iter()
        .zip(sign_step(&g, spec.epsilon))
        .map(|(i, d)| spec.clamp(i + d))
        .collect())
}

/// Optional uniform start in the ε-box, then `steps` rounds of
/// `u ← Π_ε(u + η·sgn(∂_u L(I + u)))` with the input clamped after each.
pub fn pgd<P, R>(problem: &P, w: &[f64], sample: &Sample, spec: &AttackSpec, rng: &mut R) -> Result<Vec<f64>>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    let ball = BudgetConstraint::linf(spec.epsilon);
    let m = sample.input.len();
    let mut u = vec![0.0; m];
    let mut x = sample.input.clone();
    if spec.random_start && spec.epsilon > 0.0 {
        for ((u, x), i) in u.iter_mut().zip(x.iter_mut()).zip(&sample.input) {
            *x = spec.clamp(i + rng.random_range(-spec.epsilon..=spec.epsilon));
            *u = *x - i;
        }
    }
    for _ in 0..spec.steps {
        let g = problem.grad_u(w, sample, &u)?;
        let stepped: Vec<f64> = u.iter().zip(sign_step(&g, spec.step_eta)).map(|(u, d)| u + d).collect();
        let projected = ball.project(&stepped)?;
        for ((x, u), (i, p)) in x.iter_mut().zip(u.iter_mut()).zip(sample.input.iter().zip(&projected)) {
            *x = spec.clamp(i + p);
            *u = *x - i;
        }
    }
    Ok(x)
}

/// Dispatches on `spec.kind`.
pub fn attack_sample<P, R>(problem: &P, w: &[f64], sample: &Sample, spec: &AttackSpec, rng: &mut R) -> Result<Vec<f64>>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    match spec.kind {
        AttackKind::Fgsm => fgsm(problem, w, sample, spec),
        AttackKind::Pgd => pgd(problem, w, sample, spec, rng),
    }
}

/// Per-sample generator: stream `id` of the ChaCha8 generator seeded by `seed`.
pub fn sample_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

fn workers(n: usize) -> usize {
    std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1).min(n).max(1)
}

/// Applies `f` to every sample on scoped threads, collecting in sample order.
fn par_map<T, F>(dataset: &Dataset, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Sample) -> Result<T> + Sync,
{
    let samples = dataset.samples();
    let chunk = samples.len().div_ceil(workers(samples.len()));
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk.max(1))
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Adversarial inputs for every sample; sample `i` draws from `sample_rng(seed, i)`.
pub fn attack_dataset<P: RobustProblem + ?Sized>(
    problem: &P,
    w: &[f64],
    dataset: &Dataset,
    spec: &AttackSpec,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    par_map(dataset, |s| attack_sample(problem, w, s, spec, &mut sample_rng(seed, s.id)))
}

/// Accuracy on clean inputs (`spec = None`) or under the given attack.
pub fn evaluate_under_attack<P: ClassifierProblem + ?Sized>(
    problem: &P,
    w: &[f64],
    dataset: &Dataset,
    spec: Option<&AttackSpec>,
    seed: u64,
) -> Result<f64> {
    if let Some(spec) = spec {
        spec.validate()?;
    }
    let correct = par_map(dataset, |s| {
        let input = match spec {
            None => s.input.clone(),
            Some(spec) => attack_sample(problem, w, s, spec, &mut sample_rng(seed, s.id))?,
        };
        Ok(problem.predict(w, &input)? == s.label)
    })?;
    Ok(fraction(&correct))
}

/// Accuracy on `I^i + u^i`, optionally clamped into `input_range`.
pub fn accuracy_with_perturbation<P: ClassifierProblem + ?Sized>(
    problem: &P,
    w: &[f64],
    dataset: &Dataset,
    u: &UncertaintyState,
    input_range: Option<(f64, f64)>,
) -> Result<f64> {
    if u.len() != dataset.len() {
        return Err(Error::Shape {
            context: "perturbations vs dataset",
            expected: dataset.len(),
            got: u.len(),
        });
    }
    let correct = par_map(dataset, |s| {
        let input: Vec<f64> = s
            .input
            .iter()
            .zip(u.get(s.id))
            .map(|(i, d)| match input_range {
                Some((lo, hi)) => (i + d).clamp(lo, hi),
                None => i + d,
            })
            .collect();
        Ok(problem.predict(w, &input)? == s.label)
    })?;
    Ok(fraction(&correct))
}

fn fraction(correct: &[bool]) -> f64 {
    if correct.is_empty() {
        return 0.0;
    }
    correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64
}

/// One epoch of PGD adversarial training: every batch is attacked at the
/// current `w` and `w` takes a gradient step on the attacked inputs.
/// Returns the mean adversarial loss.
pub fn pgd_training_epoch<P, R>(
    problem: &P,
    w: &mut [f64],
    dataset: &Dataset,
    spec: &AttackSpec,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64>
where
    P: RobustProblem + ?Sized,
    R: Rng + ?Sized,
{
    spec.validate()?;
    let zero = vec![0.0; dataset.input_dim()];
    let mut total = 0.0;
    for batch in dataset.shuffled_batches(batch_size, rng)? {
        let mut grad = vec![0.0; w.len()];
        for &j in &batch {
            let s = dataset.get(j);
            let adv = Sample {
                id: s.id,
                input: attack_sample(problem, w, s, spec, rng)?,
                label: s.label,
            };
            let g = problem.loss_and_grads(w, &adv, &zero)?;
            total += g.loss;
            for (a, b) in grad.iter_mut().zip(&g.grad_w) {
                *a += b;
            }
        }
        for (w, g) in w.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        if let Some(&bad) = w.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("parameters after PGD training step ({bad})"),
            });
        }
    }
    Ok(total / dataset.len() as f64)
}

/// One row of the evaluation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model_id: String,
    pub attack: String,
    pub params: String,
    pub accuracy: f64,
}

pub const EVAL_CSV_HEADER: &str = "model_id,attack,params,accuracy";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = format!("{EVAL_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.model_id,
            r.attack,
            r.params,
            crate::harness::fmt_real(r.accuracy)
        ));
    }
    out
}
