use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::DataSpec;
use super::fmt_real;
use crate::autodiff::{checkpoint, MlpArchitecture, MlpModel};
use crate::config::SsdsConfig;
use crate::dynamics::{run_epoch, DivergenceReport, EpochReport, TrainingAlgorithm};
use crate::error::{Error, Result};
use crate::problems::{
    ClassifierProblem, Dataset, LossGrads, MlpProblem, QuadraticSaddleProblem, RobustLogisticProblem, RobustProblem,
    Sample,
};
use crate::types::{BudgetConstraint, SaddleIterate, SubgradientRule};

pub const VERSION: &str = concat!("ssds ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Logistic => "logistic",
            ProblemKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ProblemKind::Quadratic),
            "logistic" => Ok(ProblemKind::Logistic),
            "mlp" => Ok(ProblemKind::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown problem '{other}'"))),
        }
    }
}

/// Target `c` of the built-in quadratic instance; `‖c‖_∞ > ε` for the default budget.
pub const QUADRATIC_TARGET: [f64; 2] = [0.05, -0.05];

/// The built-in four-sample quadratic instance (`a = b = 1`).
pub fn quadratic_instance(budget: BudgetConstraint, rule: SubgradientRule) -> Result<(QuadraticSaddleProblem, Dataset)> {
    let p = QuadraticSaddleProblem::new(1.0, 1.0, QUADRATIC_TARGET.to_vec(), budget)?.with_subgradient_rule(rule);
    let d = Dataset::from_pairs(
        vec![
            (vec![0.5, -0.2], 0),
            (vec![-0.1, 0.4], 0),
            (vec![0.3, 0.3], 0),
            (vec![-0.6, 0.1], 0),
        ],
        1,
    )?;
    Ok((p, d))
}

/// One of the three problem families behind a single type.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Quadratic(QuadraticSaddleProblem),
    Logistic(RobustLogisticProblem),
    Mlp(MlpProblem),
}

impl AnyProblem {
    pub fn classifier(&self) -> Option<&dyn ClassifierProblem> {
        match self {
            AnyProblem::Quadratic(_) => None,
            AnyProblem::Logistic(p) => Some(p),
            AnyProblem::Mlp(p) => Some(p),
        }
    }

    /// The parameters as a network, for checkpointing. A logistic model is a
    /// single affine layer.
    pub fn to_model(&self, w: &[f64]) -> Result<Option<MlpModel>> {
        let arch = match self {
            AnyProblem::Quadratic(_) => return Ok(None),
            AnyProblem::Logistic(p) => MlpArchitecture::new(vec![p.input_dim(), p.num_classes()])?,
            AnyProblem::Mlp(p) => p.architecture().clone(),
        };
        Ok(Some(MlpModel::from_params(arch, w.to_vec())?))
    }
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $e:expr) => {
        match $self {
            AnyProblem::Quadratic($p) => $e,
            AnyProblem::Logistic($p) => $e,
            AnyProblem::Mlp($p) => $e,
        }
    };
}

impl RobustProblem for AnyProblem {
    fn param_dim(&self) -> usize {
        dispatch!(self, p => p.param_dim())
    }
    fn input_dim(&self) -> usize {
        dispatch!(self, p => p.input_dim())
    }
    fn budget(&self) -> &BudgetConstraint {
        dispatch!(self, p => p.budget())
    }
    fn subgradient_rule(&self) -> SubgradientRule {
        dispatch!(self, p => p.subgradient_rule())
    }
    fn loss(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<f64> {
        dispatch!(self, p => p.loss(w, sample, u))
    }
    fn loss_and_grads(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<LossGrads> {
        dispatch!(self, p => p.loss_and_grads(w, sample, u))
    }
    fn grad_u(&self, w: &[f64], sample: &Sample, u: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, p => p.grad_u(w, sample, u))
    }
    fn init_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        dispatch!(self, p => p.init_params(rng))
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub algo: TrainingAlgorithm,
    pub problem: ProblemKind,
    /// `None` selects the problem's built-in data (quadratic only).
    pub data: Option<DataSpec>,
    pub epochs: u64,
    /// Hidden layer widths for `mlp`.
    pub hidden: Vec<usize>,
    pub config: SsdsConfig,
}

impl RunRequest {
    /// Hex SHA-256 of the canonical JSON encoding, truncated to 16 digits.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_vec(self).expect("run request serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    pub fn build(&self) -> Result<(AnyProblem, Dataset)> {
        self.config.validate()?;
        let budget = self.config.budget();
        let rule = self.config.subgradient;
        if self.problem == ProblemKind::Quadratic {
            let (p, builtin) = quadratic_instance(budget, rule)?;
            let d = match &self.data {
                None => builtin,
                Some(spec) => spec.load()?,
            };
            if d.input_dim() != p.input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "quadratic problem needs {}-dimensional inputs, data has {}",
                    p.input_dim(),
                    d.input_dim()
                )));
            }
            return Ok((AnyProblem::Quadratic(p), d));
        }
        let spec = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("problem '{}' needs a data spec", self.problem)))?;
        let d = spec.load()?;
        let p = match self.problem {
            ProblemKind::Logistic => AnyProblem::Logistic(
                RobustLogisticProblem::new(d.input_dim(), d.num_classes(), budget).with_subgradient_rule(rule),
            ),
            _ => {
                let mut sizes = vec![d.input_dim()];
                sizes.extend(&self.hidden);
                sizes.push(d.num_classes());
                AnyProblem::Mlp(MlpProblem::new(MlpArchitecture::new(sizes)?, budget).with_subgradient_rule(rule))
            }
        };
        Ok((p, d))
    }
}

/// In-memory training: the problem, its data and the evolving iterate.
pub struct Session {
    pub problem: AnyProblem,
    pub dataset: Dataset,
    pub state: SaddleIterate,
    pub algo: TrainingAlgorithm,
    pub config: SsdsConfig,
    rng: ChaCha8Rng,
}

impl Session {
    /// Parameters are initialized from the first draws of the seeded
    /// generator; the same generator then shuffles every epoch.
    pub fn new(request: &RunRequest) -> Result<Self> {
        let (problem, dataset) = request.build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.config.seed);
        let w0 = problem.init_params(&mut rng);
        let c = &request.config;
        let state = SaddleIterate::initial(w0, dataset.len(), dataset.input_dim(), c.lambda0, c.v0, c.t0);
        Ok(Session {
            problem,
            dataset,
            state,
            algo: request.algo,
            config: request.config.clone(),
            rng,
        })
    }

    pub fn epoch(&mut self) -> Result<EpochReport> {
        let (next, report) = run_epoch(&self.problem, &self.state, &self.dataset, &self.config, self.algo, &mut self.rng)?;
        self.state = next;
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: String,
    pub samples: usize,
    pub input_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub request: RunRequest,
    /// The config in its file format.
    pub config_file: String,
    pub dataset: DatasetInfo,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub status: RunStatus,
    pub final_report: Option<EpochReport>,
    pub divergence: Option<DivergenceReport>,
    /// Artifact file names relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.json";
pub const TRAJECTORY_HEADER: &str = "epoch,alpha,lambda,t,mean_loss,frac_u_within_budget,mean_u_delta_l2";

pub fn trajectory_row(r: &EpochReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch,
        fmt_real(r.alpha),
        fmt_real(r.lambda),
        fmt_real(r.t),
        fmt_real(r.mean_loss),
        fmt_real(r.frac_u_within_budget),
        fmt_real(r.mean_u_delta_l2)
    )
}

/// `sample_id,linf_norm` for every sample.
pub fn u_hist_csv(state: &SaddleIterate) -> String {
    let mut out = String::from("sample_id,linf_norm\n");
    for (i, n) in state.u.linf_norms().into_iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_real(n)));
    }
    out
}

pub fn u_hist_name(epoch: u64) -> String {
    format!("u_hist_epoch{epoch:05}.csv")
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Creates `dir` and fails if it already exists.
pub fn create_fresh_dir(dir: &Path) -> Result<()> {
    if let Some(parent) = dir.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match fs::create_dir(dir) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunExists(dir.to_path_buf())),
        Err(e) => Err(Error::io(dir, e)),
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub state: SaddleIterate,
}

struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut c = Csv {
            path,
            out: BufWriter::new(f),
        };
        c.line(header)?;
        Ok(c)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains per `request` into the new directory `out_root/<run_id>`.
///
/// On divergence the partial logs and a manifest with status `diverged` are
/// still written before the error is returned.
pub fn execute(request: &RunRequest, out_root: &Path) -> Result<RunOutcome> {
    execute_in(request, &out_root.join(request.run_id()))
}

/// As [`execute`], into an explicit fresh directory.
pub fn execute_in(request: &RunRequest, dir: &Path) -> Result<RunOutcome> {
    let mut session = Session::new(request)?;
    create_fresh_dir(dir)?;
    let started = now_ms();
    let mut artifacts = vec![TRAJECTORY_FILE.to_string(), TIMING_FILE.to_string()];
    let mut traj = Csv::create(dir.join(TRAJECTORY_FILE), TRAJECTORY_HEADER)?;
    let mut timing = Csv::create(dir.join(TIMING_FILE), "epoch,wall_ms")?;

    let mut last = None;
    let mut divergence = None;
    let mut failure = None;
    for _ in 0..request.epochs {
        let clock = Instant::now();
        match session.epoch() {
            Ok(report) => {
                traj.line(&trajectory_row(&report))?;
                timing.line(&format!("{},{}", report.epoch, clock.elapsed().as_millis()))?;
                if report.epoch % session.config.histogram_every == 0 {
                    let name = u_hist_name(report.epoch);
                    let path = dir.join(&name);
                    fs::write(&path, u_hist_csv(&session.state)).map_err(|e| Error::io(&path, e))?;
                    artifacts.push(name);
                }
                last = Some(report);
            }
            Err(Error::Divergence(d)) => {
                divergence = Some((*d).clone());
                failure = Some(Error::Divergence(d));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    traj.finish()?;
    timing.finish()?;

    if failure.is_none() {
        if let Some(model) = session.problem.to_model(&session.state.x.w)? {
            checkpoint::save(&model, &dir.join(CHECKPOINT_FILE))?;
            artifacts.push(CHECKPOINT_FILE.into());
        } else {
            let path = dir.join(STATE_FILE);
            fs::write(&path, serde_json::to_vec_pretty(&session.state)?).map_err(|e| Error::io(&path, e))?;
            artifacts.push(STATE_FILE.into());
        }
    }
    artifacts.push(MANIFEST_FILE.into());

    let d = &session.dataset;
    let manifest = RunManifest {
        run_id: request.run_id(),
        version: VERSION.into(),
        request: request.clone(),
        config_file: request.config.to_kv(),
        dataset: DatasetInfo {
            spec: request.data.as_ref().map_or("builtin".into(), |s| s.to_string()),
            samples: d.len(),
            input_dim: d.input_dim(),
            num_classes: d.num_classes(),
        },
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        status: if failure.is_some() { RunStatus::Diverged } else { RunStatus::Completed },
        final_report: last,
        divergence,
        artifacts,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(RunOutcome {
            dir: dir.to_path_buf(),
            manifest,
            state: session.state,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub dir: PathBuf,
    /// CSV artifacts whose bytes differ from the original run.
    pub mismatched: Vec<String>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-runs the request recorded in `run_dir/manifest.json` into `out_dir`
/// (which must not exist) and compares every CSV artifact byte for byte.
/// Timing is excluded since wall-clock time is not reproducible.
pub fn replay(run_dir: &Path, out_dir: &Path) -> Result<ReplayOutcome> {
    let original = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let outcome = execute_in(&original.request, out_dir);
    match outcome {
        Ok(_) | Err(Error::Divergence(_)) => {}
        Err(e) => return Err(e),
    }
    let mut mismatched = Vec::new();
    for name in original.artifacts.iter().filter(|n| n.ends_with(".csv") && *n != TIMING_FILE) {
        let a = fs::read(run_dir.join(name)).map_err(|e| Error::io(run_dir.join(name), e))?;
        let b = fs::read(out_dir.join(name)).ok();
        if b.as_deref() != Some(&a[..]) {
            mismatched.push(name.clone());
        }
    }
    Ok(ReplayOutcome {
        dir: out_dir.to_path_buf(),
        mismatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_request(algo: TrainingAlgorithm, epochs: u64) -> RunRequest {
        RunRequest {
            algo,
            problem: ProblemKind::Quadratic,
            data: None,
            epochs,
            hidden: vec![],
            config: SsdsConfig {
                batch_size: 2,
                histogram_every: 2,
                ..SsdsConfig::default()
            },
        }
    }

    #[test]
    fn run_id_tracks_every_input() {
        let a = quad_request(TrainingAlgorithm::Ssds, 3);
        let mut b = a.clone();
        assert_eq!(a.run_id(), b.run_id());
        b.config.seed = 1;
        assert_ne!(a.run_id(), b.run_id());
        let mut c = a.clone();
        c.algo = TrainingAlgorithm::Sgda;
        assert_ne!(a.run_id(), c.run_id());
        assert_eq!(a.run_id().len(), 16);
    }

    #[test]
    fn run_writes_named_artifacts_and_refuses_reuse() {
        let tmp = tempfile::tempdir().unwrap();
        let req = quad_request(TrainingAlgorithm::Ssds, 4);
        let out = execute(&req, tmp.path()).unwrap();
        let m = &out.manifest;
        assert_eq!(m.status, RunStatus::Completed);
        for name in &m.artifacts {
            assert!(out.dir.join(name).is_file(), "{name}");
        }
        assert!(m.artifacts.contains(&u_hist_name(2)) && m.artifacts.contains(&u_hist_name(4)));
        let traj = fs::read_to_string(out.dir.join(TRAJECTORY_FILE)).unwrap();
        assert_eq!(traj.lines().count(), 5);
        assert_eq!(traj.lines().next().unwrap(), TRAJECTORY_HEADER);
        assert!(matches!(execute(&req, tmp.path()), Err(Error::RunExists(_))));
        assert_eq!(RunManifest::load(&out.dir.join(MANIFEST_FILE)).unwrap(), *m);
    }

    #[test]
    fn replay_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let req = quad_request(TrainingAlgorithm::Ssds, 3);
        let out = execute(&req, tmp.path()).unwrap();
        let r = replay(&out.dir, &tmp.path().join("again")).unwrap();
        assert!(r.identical(), "{:?}", r.mismatched);
    }

    #[test]
    fn replay_detects_tampering() {
        let tmp = tempfile::tempdir().unwrap();
        let out = execute(&quad_request(TrainingAlgorithm::Sgda, 2), tmp.path()).unwrap();
        let path = out.dir.join(TRAJECTORY_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("junk\n");
        fs::write(&path, text).unwrap();
        let r = replay(&out.dir, &tmp.path().join("again")).unwrap();
        assert_eq!(r.mismatched, vec![TRAJECTORY_FILE.to_string()]);
    }

    #[test]
    fn divergence_still_writes_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let mut req = quad_request(TrainingAlgorithm::Sgda, 3);
        req.config.lr = f64::MAX / 2.0;
        req.config.alpha0 = 1e300;
        let dir = tmp.path().join(req.run_id());
        assert!(matches!(execute(&req, tmp.path()), Err(Error::Divergence(_))));
        let m = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.status, RunStatus::Diverged);
        assert!(m.divergence.is_some());
    }

    #[test]
    fn logistic_run_checkpoints_a_single_layer_model() {
        let tmp = tempfile::tempdir().unwrap();
        let req = RunRequest {
            algo: TrainingAlgorithm::Natural,
            problem: ProblemKind::Logistic,
            data: Some("synthetic:30,3,2,2.0,0".parse().unwrap()),
            epochs: 2,
            hidden: vec![],
            config: SsdsConfig {
                batch_size: 10,
                ..SsdsConfig::default()
            },
        };
        let out = execute(&req, tmp.path()).unwrap();
        let model = checkpoint::load(&out.dir.join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(model.architecture().sizes(), &[3, 2]);
        assert_eq!(model.params(), &out.state.x.w[..]);
    }

    #[test]
    fn mlp_needs_data() {
        let req = RunRequest {
            algo: TrainingAlgorithm::Ssds,
            problem: ProblemKind::Mlp,
            data: None,
            epochs: 1,
            hidden: vec![4],
            config: SsdsConfig::default(),
        };
        assert!(req.build().is_err());
    }
}
