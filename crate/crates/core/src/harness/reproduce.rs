//! Scripted desk-scale experiments behind each figure, emitting CSV panels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::data::DataSpec;
use super::fmt_real;
use super::run::{create_fresh_dir, execute, ProblemKind, RunRequest, Session};
use crate::baselines::{accuracy_with_perturbation, eval_csv, evaluate_under_attack, AttackSpec, EvalRow};
use crate::config::SsdsConfig;
use crate::diagnostics::budget_histogram;
use crate::dynamics::{sgda_attack_traced, ssds_attack_traced, EpochReport, TrainingAlgorithm};
use crate::error::{Error, Result};
use crate::problems::{ClassifierProblem, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    UHist,
    UEvolution,
    SgdaVsSsds,
    RobustTable,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::UHist, Figure::UEvolution, Figure::SgdaVsSsds, Figure::RobustTable];

    pub fn as_str(self) -> &'static str {
        match self {
            Figure::UHist => "u-hist",
            Figure::UEvolution => "u-evolution",
            Figure::SgdaVsSsds => "sgda-vs-ssds",
            Figure::RobustTable => "robust-table",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown figure '{s}'")))
    }
}

/// Default data for the scripted experiments: two well-separated blobs.
pub const DEFAULT_DATA: &str = "synthetic:500,2,2,2.0,0";
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];

#[derive(Debug, Clone, Serialize)]
pub struct ReproduceOptions {
    /// `None` uses [`DEFAULT_DATA`]; IDX-backed data switches to the MLP.
    pub data: Option<DataSpec>,
    /// Held-out data for the table; defaults to the training data.
    pub test_data: Option<DataSpec>,
    pub epochs: u64,
    /// Attack iterations for the SGDA/SSDS attacks and PGD.
    pub attack_steps: u64,
    pub hidden: Vec<usize>,
    pub config: SsdsConfig,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        ReproduceOptions {
            data: None,
            test_data: None,
            epochs: 300,
            attack_steps: 100,
            hidden: DEFAULT_HIDDEN.to_vec(),
            config: SsdsConfig::default(),
        }
    }
}

impl ReproduceOptions {
    fn data(&self) -> DataSpec {
        self.data.clone().unwrap_or_else(|| DEFAULT_DATA.parse().expect("default data spec parses"))
    }

    fn problem(&self) -> ProblemKind {
        match self.data() {
            DataSpec::Synthetic { .. } => ProblemKind::Logistic,
            _ => ProblemKind::Mlp,
        }
    }

    fn request(&self, algo: TrainingAlgorithm) -> RunRequest {
        RunRequest {
            algo,
            problem: self.problem(),
            data: Some(self.data()),
            epochs: self.epochs,
            hidden: self.hidden.clone(),
            config: self.config.clone(),
        }
    }

    fn id(&self, figure: Figure) -> String {
        let json = serde_json::to_vec(&(figure, self)).expect("options serialize");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

pub struct ReproduceOutcome {
    pub dir: PathBuf,
    /// Panel files relative to `dir`.
    pub files: Vec<String>,
}

/// Trains `request` in memory, returning the session and per-epoch reports.
pub fn train(request: &RunRequest) -> Result<(Session, Vec<EpochReport>)> {
    let mut s = Session::new(request)?;
    let mut reports = Vec::with_capacity(request.epochs as usize);
    for _ in 0..request.epochs {
        reports.push(s.epoch()?);
    }
    Ok((s, reports))
}

fn classifier(s: &Session) -> Result<&dyn ClassifierProblem> {
    s.problem
        .classifier()
        .ok_or_else(|| Error::InvalidArgument("figure needs a classification problem".into()))
}

fn write(dir: &Path, files: &mut Vec<String>, name: &str, body: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    files.push(name.to_string());
    Ok(())
}

/// Runs `figure` into the fresh directory `out_root/<figure>-<id>`.
pub fn reproduce(figure: Figure, opts: &ReproduceOptions, out_root: &Path) -> Result<ReproduceOutcome> {
    let dir = out_root.join(format!("{figure}-{}", opts.id(figure)));
    create_fresh_dir(&dir)?;
    let mut files = Vec::new();
    match figure {
        Figure::UHist => u_hist(opts, &dir, &mut files)?,
        Figure::UEvolution => u_evolution(opts, &dir, &mut files)?,
        Figure::SgdaVsSsds => sgda_vs_ssds(opts, &dir, &mut files)?,
        Figure::RobustTable => robust_table(opts, &dir, &mut files)?,
    }
    Ok(ReproduceOutcome { dir, files })
}

/// A full SSDS run (per-sample norm snapshots every `histogram_every`
/// epochs) plus binned histograms of each snapshot.
fn u_hist(opts: &ReproduceOptions, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let req = opts.request(TrainingAlgorithm::Ssds);
    let run = execute(&req, dir)?;
    for name in &run.manifest.artifacts {
        files.push(format!("{}/{name}", run.manifest.run_id));
    }
    // Rebuild the snapshots in memory to bin them.
    let mut s = Session::new(&req)?;
    let budget = s.problem_budget();
    let mut summary = String::from("epoch,frac_within,max_linf\n");
    for _ in 0..req.epochs {
        let r = s.epoch()?;
        if r.epoch % req.config.histogram_every == 0 {
            let h = budget_histogram(&s.state.u, &budget, 30)?;
            write(dir, files, &format!("u_hist_binned_epoch{:05}.csv", r.epoch), h.to_csv())?;
            summary.push_str(&format!("{},{},{}\n", r.epoch, fmt_real(h.fraction_within), fmt_real(h.max_norm)));
        }
    }
    write(dir, files, "u_hist_summary.csv", summary)
}

/// Per-epoch perturbation statistics for SSDS and SSDS-p side by side.
fn u_evolution(opts: &ReproduceOptions, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let mut out = String::from("epoch,algo,max_linf,mean_linf,frac_u_within_budget,mean_u_delta_l2\n");
    for algo in [TrainingAlgorithm::Ssds, TrainingAlgorithm::SsdsP] {
        let mut s = Session::new(&opts.request(algo))?;
        for _ in 0..opts.epochs {
            let r = s.epoch()?;
            let norms = s.state.u.linf_norms();
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            out.push_str(&format!(
                "{},{algo},{},{},{},{}\n",
                r.epoch,
                fmt_real(s.state.u.max_linf()),
                fmt_real(mean),
                fmt_real(r.frac_u_within_budget),
                fmt_real(r.mean_u_delta_l2)
            ));
        }
    }
    write(dir, files, "u_evolution.csv", out)
}

/// Training loss and clean accuracy per epoch for SGDA and SSDS.
fn sgda_vs_ssds(opts: &ReproduceOptions, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let mut sgda = Session::new(&opts.request(TrainingAlgorithm::Sgda))?;
    let mut ssds = Session::new(&opts.request(TrainingAlgorithm::Ssds))?;
    let mut out = String::from("epoch,sgda_loss,sgda_acc,ssds_loss,ssds_acc\n");
    for _ in 0..opts.epochs {
        let a = sgda.epoch()?;
        let b = ssds.epoch()?;
        let acc_a = evaluate_under_attack(classifier(&sgda)?, &sgda.state.x.w, &sgda.dataset, None, 0)?;
        let acc_b = evaluate_under_attack(classifier(&ssds)?, &ssds.state.x.w, &ssds.dataset, None, 0)?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            a.epoch,
            fmt_real(a.mean_loss),
            fmt_real(acc_a),
            fmt_real(b.mean_loss),
            fmt_real(acc_b)
        ));
    }
    write(dir, files, "sgda_vs_ssds.csv", out)
}

/// Final accuracy of a model under the SSDS or SGDA perturbation attack.
pub fn dynamics_attack_accuracy(
    problem: &dyn ClassifierProblem,
    w: &[f64],
    dataset: &Dataset,
    config: &SsdsConfig,
    steps: u64,
    ssds: bool,
    input_range: Option<(f64, f64)>,
) -> Result<f64> {
    Ok(*attack_accuracy_curve(problem, w, dataset, config, steps, ssds, input_range)?
        .last()
        .unwrap_or(&evaluate_under_attack(problem, w, dataset, None, 0)?))
}

/// Accuracy after each attack step `1..=steps`.
pub fn attack_accuracy_curve(
    problem: &dyn ClassifierProblem,
    w: &[f64],
    dataset: &Dataset,
    config: &SsdsConfig,
    steps: u64,
    ssds: bool,
    input_range: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    let mut curve = Vec::with_capacity(steps as usize);
    let record = |_: u64, u: &crate::types::UncertaintyState| {
        curve.push(accuracy_with_perturbation(problem, w, dataset, u, input_range)?);
        Ok(())
    };
    if ssds {
        ssds_attack_traced(problem, w, dataset.samples(), config, steps, record)?;
    } else {
        sgda_attack_traced(problem, w, dataset.samples(), config, steps, record)?;
    }
    Ok(curve)
}

/// Clean, FGSM, PGD, SGDA-attack and SSDS-attack accuracy of a naturally
/// trained and an SSDS-p trained model.
fn robust_table(opts: &ReproduceOptions, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let data = opts.data();
    let range = data.input_range();
    let test = match &opts.test_data {
        Some(t) => t.load()?,
        None => data.load()?,
    };
    let eps = opts.config.epsilon;
    let fgsm = AttackSpec::fgsm(eps).with_input_range(range);
    let pgd = AttackSpec::pgd(eps, eps / 4.0, opts.attack_steps as usize).with_input_range(range);
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    for algo in [TrainingAlgorithm::Natural, TrainingAlgorithm::SsdsP] {
        let (s, _) = train(&opts.request(algo))?;
        let p = classifier(&s)?;
        let w = &s.state.x.w;
        let seed = opts.config.seed;
        let attack_cfg = &opts.config;
        let col = [
            ("clean", String::new(), evaluate_under_attack(p, w, &test, None, seed)?),
            ("fgsm", fgsm.summary(), evaluate_under_attack(p, w, &test, Some(&fgsm), seed)?),
            ("pgd", pgd.summary(), evaluate_under_attack(p, w, &test, Some(&pgd), seed)?),
            (
                "sgda-attack",
                format!("steps={}", opts.attack_steps),
                dynamics_attack_accuracy(p, w, &test, attack_cfg, opts.attack_steps, false, range)?,
            ),
            (
                "ssds-attack",
                format!("steps={}", opts.attack_steps),
                dynamics_attack_accuracy(p, w, &test, attack_cfg, opts.attack_steps, true, range)?,
            ),
        ];
        for (attack, params, acc) in &col {
            rows.push(EvalRow {
                model_id: algo.to_string(),
                attack: attack.to_string(),
                params: params.clone(),
                accuracy: *acc,
            });
        }
        cols.push(col.map(|(_, _, a)| a));
    }
    let mut table = String::from("attack,natural,ssds-p\n");
    for (i, name) in ["clean", "fgsm", "pgd", "sgda-attack", "ssds-attack"].iter().enumerate() {
        table.push_str(&format!("{name},{},{}\n", fmt_real(cols[0][i]), fmt_real(cols[1][i])));
    }
    write(dir, files, "robust_table.csv", table)?;
    write(dir, files, "evaluation.csv", eval_csv(&rows))
}

impl Session {
    fn problem_budget(&self) -> crate::types::BudgetConstraint {
        use crate::problems::RobustProblem;
        *self.problem.budget()
    }
}
