//! `ssds`: train, attack, diagnose, reproduce and replay runs.
//!
//! Exit codes: 0 success, 1 diagnostic or replay failure, 2 usage,
//! 3 I/O or format, 4 divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use ssds_core::autodiff::checkpoint;
use ssds_core::baselines::{attack_dataset, eval_csv, evaluate_under_attack, AttackSpec, EvalRow};
use ssds_core::diagnostics::{
    kkt_residual, lagrangian_value, saddle_inequality_check, DiagnosticsReport, DEFAULT_PROBE_RADIUS, SADDLE_TOL,
};
use ssds_core::dynamics::{sgda_attack, ssds_attack, TrainingAlgorithm};
use ssds_core::harness::{
    execute, fmt_real, quadratic_instance, replay, reproduce, DataSpec, Figure, ProblemKind, ReproduceOptions,
    RunRequest, DEFAULT_HIDDEN,
};
use ssds_core::problems::{encode_idx, saddle_oracle, MlpProblem, RobustProblem};
use ssds_core::{Error, SaddleIterate, SsdsConfig, UncertaintyState};

#[derive(Parser)]
#[command(name = "ssds", version, about = "Stochastic saddle-point dynamics for robust learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint under an attack.
    Attack(AttackArgs),
    /// KKT residuals and saddle-inequality probes.
    Diagnose(DiagnoseArgs),
    /// Run a scripted figure experiment.
    Reproduce(ReproduceArgs),
    /// Re-run a recorded run and compare its CSV logs byte for byte.
    Replay(ReplayArgs),
    /// Write a synthetic dataset as an IDX image/label pair.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<SsdsConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => SsdsConfig::load(p)?,
            None => SsdsConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Ssds,
    #[value(name = "ssds-p")]
    SsdsP,
    Sgda,
    Natural,
}

impl From<Algo> for TrainingAlgorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Ssds => TrainingAlgorithm::Ssds,
            Algo::SsdsP => TrainingAlgorithm::SsdsP,
            Algo::Sgda => TrainingAlgorithm::Sgda,
            Algo::Natural => TrainingAlgorithm::Natural,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Quadratic,
    Logistic,
    Mlp,
}

impl From<Problem> for ProblemKind {
    fn from(p: Problem) -> Self {
        match p {
            Problem::Quadratic => ProblemKind::Quadratic,
            Problem::Logistic => ProblemKind::Logistic,
            Problem::Mlp => ProblemKind::Mlp,
        }
    }
}

fn parse_data(s: &str) -> Result<DataSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long, value_enum)]
    problem: Problem,
    /// `synthetic:N,DIM,K,SEP,SEED`, `idx:IMG,LBL[,LIMIT]`, `mnist-train:DIR[,LIMIT]`, `mnist-test:DIR[,LIMIT]`.
    #[arg(long, value_parser = parse_data)]
    data: Option<DataSpec>,
    #[arg(long, default_value_t = 50)]
    epochs: u64,
    /// Hidden widths for `mlp`, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN)]
    hidden: Vec<usize>,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Kind {
    Ssds,
    Sgda,
    Fgsm,
    Pgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Range {
    /// `[0, 1]` for IDX data, unbounded for synthetic data.
    Auto,
    Unit,
    None,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_parser = parse_data)]
    data: DataSpec,
    /// Attack iterations (PGD, SGDA and SSDS attacks).
    #[arg(long, default_value_t = 20)]
    steps: u64,
    /// Attack radius; defaults to the config's `epsilon`.
    #[arg(long)]
    epsilon: Option<f64>,
    /// PGD step; defaults to a quarter of the radius.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    no_random_start: bool,
    #[arg(long, value_enum, default_value_t = Range::Auto)]
    input_range: Range,
    /// Accuracy CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the perturbations, one `sample_id,u_1,…,u_m` row per sample.
    #[arg(long)]
    perturbations: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analytic {
    Quadratic,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Built-in problem with a known saddle point.
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    analytic: Option<Analytic>,
    /// Iterate to diagnose (a run's `state.json`); defaults to the exact saddle point.
    #[arg(long, requires = "analytic")]
    state: Option<PathBuf>,
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_data)]
    data: Option<DataSpec>,
    /// Probe count; 1000 for analytic problems, 20 for checkpoints.
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_PROBE_RADIUS)]
    radius: f64,
    /// Largest KKT residual accepted on analytic problems.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// JSON report; printed to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureArg {
    #[value(name = "u-hist")]
    UHist,
    #[value(name = "u-evolution")]
    UEvolution,
    #[value(name = "sgda-vs-ssds")]
    SgdaVsSsds,
    #[value(name = "robust-table")]
    RobustTable,
}

impl From<FigureArg> for Figure {
    fn from(f: FigureArg) -> Self {
        match f {
            FigureArg::UHist => Figure::UHist,
            FigureArg::UEvolution => Figure::UEvolution,
            FigureArg::SgdaVsSsds => Figure::SgdaVsSsds,
            FigureArg::RobustTable => Figure::RobustTable,
        }
    }
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, value_enum)]
    figure: FigureArg,
    #[arg(long, value_parser = parse_data)]
    data: Option<DataSpec>,
    #[arg(long, value_parser = parse_data)]
    test_data: Option<DataSpec>,
    #[arg(long, default_value_t = 300)]
    epochs: u64,
    #[arg(long, default_value_t = 100)]
    steps: u64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN)]
    hidden: Vec<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run directory holding `manifest.json`.
    #[arg(long)]
    run: PathBuf,
    /// Fresh directory for the re-run; defaults to `<run>/replay-N`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_data)]
    data: DataSpec,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Directory receiving `PREFIX-images-idx3-ubyte` and `PREFIX-labels-idx1-ubyte`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    prefix: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) | Error::NonFinite { .. } => 4,
        Error::InvalidArgument(_) => 2,
        Error::FixedPoint { .. } => 1,
        _ => 3,
    }
}

struct Failed(u8);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Reproduce(a) => reproduce_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed(code))) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type CmdResult = Result<Result<(), Failed>, Error>;

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn train(a: TrainArgs) -> CmdResult {
    let mut config = a.common.load()?;
    if matches!(a.problem, Problem::Quadratic) && a.data.is_none() {
        let n = quadratic_instance(config.budget(), config.subgradient)?.1.len();
        if config.batch_size > n {
            eprintln!("note: batch_size {} clamped to the {n}-sample quadratic instance", config.batch_size);
            config.batch_size = n;
        }
    }
    let req = RunRequest {
        algo: a.algo.into(),
        problem: a.problem.into(),
        data: a.data,
        epochs: a.epochs,
        hidden: if matches!(a.problem, Problem::Mlp) { a.hidden } else { vec![] },
        config,
    };
    match execute(&req, &a.out) {
        Ok(run) => {
            println!("run {}", run.dir.display());
            if let Some(r) = &run.manifest.final_report {
                println!(
                    "epoch {} lambda {} t {} mean_loss {} frac_u_within_budget {}",
                    r.epoch,
                    fmt_real(r.lambda),
                    fmt_real(r.t),
                    fmt_real(r.mean_loss),
                    fmt_real(r.frac_u_within_budget)
                );
            }
            Ok(Ok(()))
        }
        Err(Error::Divergence(d)) => {
            eprintln!("error: training diverged: {d}");
            eprintln!("partial logs in {}", a.out.join(req.run_id()).display());
            Ok(Err(Failed(4)))
        }
        Err(e) => Err(e),
    }
}

fn perturbation_csv(u: &UncertaintyState) -> String {
    let mut out = String::new();
    for (i, row) in u.0.iter().enumerate() {
        out.push_str(&i.to_string());
        for x in row {
            out.push(',');
            out.push_str(&fmt_real(*x));
        }
        out.push('\n');
    }
    out
}

fn attack(a: AttackArgs) -> CmdResult {
    let mut cfg = a.common.load()?;
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    let model = checkpoint::load(&a.checkpoint)?;
    let data = a.data.load()?;
    if data.input_dim() != model.architecture().input_dim() {
        return Err(Error::Shape {
            context: "checkpoint input vs data",
            expected: model.architecture().input_dim(),
            got: data.input_dim(),
        });
    }
    let range = match a.input_range {
        Range::Auto => a.data.input_range(),
        Range::Unit => Some((0.0, 1.0)),
        Range::None => None,
    };
    let problem = MlpProblem::new(model.architecture().clone(), cfg.budget()).with_subgradient_rule(cfg.subgradient);
    let w = model.params();
    let clean = evaluate_under_attack(&problem, w, &data, None, cfg.seed)?;
    let eps = cfg.epsilon;
    let (name, params, acc, u) = match a.kind {
        Kind::Fgsm | Kind::Pgd => {
            let spec = if a.kind == Kind::Fgsm {
                AttackSpec::fgsm(eps)
            } else {
                AttackSpec::pgd(eps, a.eta.unwrap_or(eps / 4.0), a.steps as usize).with_random_start(!a.no_random_start)
            }
            .with_input_range(range);
            if let Some(w) = spec.validate()? {
                eprintln!("warning: {w}");
            }
            let acc = evaluate_under_attack(&problem, w, &data, Some(&spec), cfg.seed)?;
            let u = if a.perturbations.is_some() {
                let adv = attack_dataset(&problem, w, &data, &spec, cfg.seed)?;
                Some(UncertaintyState(
                    adv.iter()
                        .zip(data.samples())
                        .map(|(x, s)| x.iter().zip(&s.input).map(|(a, b)| a - b).collect())
                        .collect(),
                ))
            } else {
                None
            };
            (spec.kind.to_string(), spec.summary(), acc, u)
        }
        Kind::Ssds | Kind::Sgda => {
            let u = if a.kind == Kind::Ssds {
                ssds_attack(&problem, w, data.samples(), &cfg, a.steps)?
            } else {
                sgda_attack(&problem, w, data.samples(), &cfg, a.steps)?
            };
            let acc = ssds_core::baselines::accuracy_with_perturbation(&problem, w, &data, &u, range)?;
            let name = if a.kind == Kind::Ssds { "ssds-attack" } else { "sgda-attack" };
            (name.to_string(), format!("eps={eps} steps={}", a.steps), acc, Some(u))
        }
    };
    let model_id = a.checkpoint.display().to_string();
    let rows = [
        EvalRow {
            model_id: model_id.clone(),
            attack: "clean".into(),
            params: String::new(),
            accuracy: clean,
        },
        EvalRow {
            model_id,
            attack: name,
            params,
            accuracy: acc,
        },
    ];
    let csv = eval_csv(&rows);
    match &a.out {
        Some(p) => {
            write_file(p, &csv)?;
            println!("clean accuracy {clean}");
            println!("attacked accuracy {acc}");
        }
        None => print!("{csv}"),
    }
    if let (Some(path), Some(u)) = (&a.perturbations, &u) {
        write_file(path, perturbation_csv(u))?;
    }
    Ok(Ok(()))
}

fn diagnose(a: DiagnoseArgs) -> CmdResult {
    let cfg = a.common.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = if a.analytic.is_some() {
        let (p, d) = quadratic_instance(cfg.budget(), cfg.subgradient)?;
        let z: SaddleIterate = match &a.state {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text)?
            }
            None => saddle_oracle(&p, &d)?,
        };
        let kkt = kkt_residual(&p, &d, &z)?;
        let saddle = saddle_inequality_check(&p, &d, &z, a.probes.unwrap_or(1000), a.radius, SADDLE_TOL, &mut rng)?;
        DiagnosticsReport {
            run_id: "analytic-quadratic".into(),
            lagrangian: lagrangian_value(&p, &d, &z)?,
            kkt,
            saddle,
            probe_radius: a.radius,
            passed: Some(kkt.within(a.tol) && saddle.violations == 0),
        }
    } else {
        let (Some(ckpt), Some(spec)) = (&a.checkpoint, &a.data) else {
            return Err(Error::InvalidArgument(
                "diagnose needs --analytic quadratic or --checkpoint with --data".into(),
            ));
        };
        let bytes = fs::read(ckpt).map_err(|e| Error::Io {
            path: ckpt.clone(),
            source: e,
        })?;
        let model = checkpoint::decode(&bytes)?;
        let d = spec.load()?;
        let p = MlpProblem::new(model.architecture().clone(), cfg.budget()).with_subgradient_rule(cfg.subgradient);
        // Default iterate for a trained model: λ = 1, u = 0, v = 0, t = ΣL.
        let mut z = SaddleIterate::initial(model.params().to_vec(), d.len(), d.input_dim(), 1.0, 0.0, 0.0);
        z.x.t = d
            .samples()
            .iter()
            .map(|s| p.loss(&z.x.w, s, &z.u.0[s.id]))
            .sum::<Result<f64, Error>>()?;
        let kkt = kkt_residual(&p, &d, &z)?;
        let saddle = saddle_inequality_check(&p, &d, &z, a.probes.unwrap_or(20), a.radius, SADDLE_TOL, &mut rng)?;
        DiagnosticsReport {
            run_id: hex_prefix(&bytes),
            lagrangian: lagrangian_value(&p, &d, &z)?,
            kkt,
            saddle,
            probe_radius: a.radius,
            passed: None,
        }
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(p) = &a.out {
        write_file(p, &json)?;
    }
    Ok(match report.passed {
        Some(false) => Err(Failed(1)),
        _ => Ok(()),
    })
}

fn hex_prefix(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn reproduce_cmd(a: ReproduceArgs) -> CmdResult {
    let opts = ReproduceOptions {
        data: a.data,
        test_data: a.test_data,
        epochs: a.epochs,
        attack_steps: a.steps,
        hidden: a.hidden,
        config: a.common.load()?,
    };
    let out = reproduce(a.figure.into(), &opts, &a.out)?;
    println!("{}", out.dir.display());
    for f in &out.files {
        println!("  {f}");
    }
    Ok(Ok(()))
}

fn replay_cmd(a: ReplayArgs) -> CmdResult {
    let out = match a.out {
        Some(o) => o,
        None => (1..)
            .map(|i| a.run.join(format!("replay-{i}")))
            .find(|p| !p.exists())
            .expect("unbounded search"),
    };
    let r = replay(&a.run, &out)?;
    if r.identical() {
        println!("identical: {}", r.dir.display());
        Ok(Ok(()))
    } else {
        for m in &r.mismatched {
            eprintln!("differs: {m}");
        }
        Ok(Err(Failed(1)))
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let d = a.data.load()?;
    if a.rows * a.cols != d.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "{}x{} images do not match input dimension {}",
            a.rows,
            a.cols,
            d.input_dim()
        )));
    }
    let (img, lbl) = encode_idx(&d, a.rows, a.cols);
    write_file(&a.out.join(format!("{}-images-idx3-ubyte", a.prefix)), img)?;
    write_file(&a.out.join(format!("{}-labels-idx1-ubyte", a.prefix)), lbl)?;
    println!("{} samples written to {}", d.len(), a.out.display());
    Ok(Ok(()))
}
