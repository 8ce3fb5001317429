//! End-to-end checks of the `ssds` binary: exit codes and file outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SYNTH: &str = "synthetic:60,4,2,1.5,3";

fn ssds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssds")).args(args).output().expect("spawn ssds")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let out = stdout(o);
    let line = out.lines().find_map(|l| l.strip_prefix("run ")).expect("run line");
    PathBuf::from(line)
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.txt");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

/// Trains a natural logistic model and returns its checkpoint path.
fn checkpoint(dir: &Path) -> String {
    let cfg = write_config(dir, "lr = 0.05\nbatch_size = 10\n");
    let out = dir.join("runs").display().to_string();
    let o = ssds(&[
        "train", "--algo", "natural", "--problem", "logistic", "--data", SYNTH, "--epochs", "20", "--out", &out, "--config", &cfg,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    run_dir(&o).join("model.ckpt").display().to_string()
}

fn accuracies(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn one_epoch_quadratic_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    let o = ssds(&["train", "--algo", "sgda", "--problem", "quadratic", "--epochs", "1", "--out", &out]);
    assert_eq!(code(&o), 0);
    let dir = run_dir(&o);
    let traj = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2, "{traj}");
    assert!(traj.starts_with("epoch,"));
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("state.json").is_file());

    // same request, same run id: the directory is never reused
    let again = ssds(&["train", "--algo", "sgda", "--problem", "quadratic", "--epochs", "1", "--out", &out]);
    assert_eq!(code(&again), 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&ssds(&["train", "--algo", "adam", "--problem", "quadratic"])), 2);
    assert_eq!(code(&ssds(&["train", "--algo", "sgda", "--problem", "quadratic", "--data", "bogus"])), 2);
    assert_eq!(code(&ssds(&[])), 2);
}

#[test]
fn bad_config_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "learning_rate = 0.1\n");
    let out = tmp.path().display().to_string();
    let o = ssds(&["train", "--algo", "sgda", "--problem", "quadratic", "--config", &cfg, "--out", &out]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn missing_checkpoint_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.ckpt").display().to_string();
    assert_eq!(code(&ssds(&["attack", "--kind", "fgsm", "--checkpoint", &missing, "--data", SYNTH])), 3);
    assert_eq!(code(&ssds(&["diagnose", "--checkpoint", &missing, "--data", SYNTH])), 3);
}

#[test]
fn divergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lr = 8.9e307\nalpha0 = 1e300\n");
    let out = tmp.path().join("runs").display().to_string();
    let o = ssds(&["train", "--algo", "sgda", "--problem", "quadratic", "--epochs", "3", "--config", &cfg, "--out", &out]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn analytic_diagnose_passes_at_oracle_and_fails_early() {
    let o = ssds(&["diagnose", "--analytic", "quadratic", "--probes", "200"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["saddle"]["violations"], 0);

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    let t = ssds(&["train", "--algo", "sgda", "--problem", "quadratic", "--epochs", "2", "--out", &out]);
    assert_eq!(code(&t), 0);
    let state = run_dir(&t).join("state.json").display().to_string();
    let o = ssds(&["diagnose", "--analytic", "quadratic", "--state", &state, "--probes", "50"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_budget_fgsm_keeps_clean_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(tmp.path());
    let o = ssds(&["attack", "--kind", "fgsm", "--checkpoint", &ckpt, "--data", SYNTH, "--epsilon", "1e-300"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    assert!(csv.starts_with("model_id,attack,params,accuracy"));
    let acc = accuracies(&csv);
    assert_eq!(acc[0], acc[1]);
}

#[test]
fn single_step_pgd_matches_fgsm() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(tmp.path());
    let f = tmp.path().join("fgsm.csv");
    let p = tmp.path().join("pgd.csv");
    let fo = ssds(&[
        "attack", "--kind", "fgsm", "--checkpoint", &ckpt, "--data", SYNTH, "--epsilon", "0.2", "--perturbations", f.to_str().unwrap(),
    ]);
    let po = ssds(&[
        "attack", "--kind", "pgd", "--checkpoint", &ckpt, "--data", SYNTH, "--epsilon", "0.2", "--eta", "0.2", "--steps", "1",
        "--no-random-start", "--perturbations", p.to_str().unwrap(),
    ]);
    assert_eq!(code(&fo), 0);
    assert_eq!(code(&po), 0);
    assert_eq!(fs::read(&f).unwrap(), fs::read(&p).unwrap());
    assert_eq!(accuracies(&stdout(&fo))[1], accuracies(&stdout(&po))[1]);
}

#[test]
fn ssds_attack_lowers_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(tmp.path());
    let cfg = write_config(tmp.path(), "epsilon = 0.5\nalpha0 = 0.05\ndecay_p = 0\nc1 = 1\n");
    let o = ssds(&["attack", "--kind", "ssds", "--checkpoint", &ckpt, "--data", SYNTH, "--steps", "50", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let acc = accuracies(&stdout(&o));
    assert!(acc[1] < acc[0], "{acc:?}");
}

#[test]
fn replay_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    let t = ssds(&["train", "--algo", "ssds", "--problem", "quadratic", "--epochs", "12", "--out", &out]);
    assert_eq!(code(&t), 0);
    let dir = run_dir(&t);
    let o = ssds(&["replay", "--run", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("identical"));
    assert!(dir.join("replay-1").join("trajectory.csv").is_file());

    let traj = dir.join("trajectory.csv");
    let text = fs::read_to_string(&traj).unwrap().replacen("1,", "1,9", 1);
    fs::write(&traj, text).unwrap();
    assert_eq!(code(&ssds(&["replay", "--run", dir.to_str().unwrap()])), 1);
}

#[test]
fn synth_output_trains_an_mlp() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("idx");
    let o = ssds(&["synth", "--data", "synthetic:40,4,3,1.0,5", "--rows", "2", "--cols", "2", "--out", data_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data_dir.join("train-images-idx3-ubyte").is_file());

    let bad = ssds(&["synth", "--data", "synthetic:40,4,3,1.0,5", "--rows", "3", "--cols", "2", "--out", data_dir.to_str().unwrap()]);
    assert_eq!(code(&bad), 2);

    let cfg = write_config(tmp.path(), "batch_size = 8\n");
    let spec = format!("mnist-train:{}", data_dir.display());
    let out = tmp.path().join("runs").display().to_string();
    let t = ssds(&[
        "train", "--algo", "ssds-p", "--problem", "mlp", "--data", &spec, "--hidden", "6", "--epochs", "2", "--config", &cfg, "--out", &out,
    ]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    assert!(run_dir(&t).join("model.ckpt").is_file());
}

#[test]
fn checkpoint_diagnose_reports_without_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(tmp.path());
    let o = ssds(&["diagnose", "--checkpoint", &ckpt, "--data", SYNTH, "--probes", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["passed"].is_null());
    assert!(report["kkt"]["primal_feas"].as_f64().unwrap() >= 0.0);
}
