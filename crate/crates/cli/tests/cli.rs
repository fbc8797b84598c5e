use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pomp-kit")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn result(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("result.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_good_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "ok.json",
        r#"{"schema": 1, "model": "ricker", "algorithm": "pfilter", "seed": 3, "pfilter": {"np": 100}}"#,
    );
    let o = pk(&["validate", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));
}

#[test]
fn unknown_field_is_a_validation_error_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.json",
        "{\n  \"schema\": 1,\n  \"model\": \"gompertz\",\n  \"algorithm\": \"pfilter\",\n  \"seed\": 1,\n  \"particles\": 5\n}",
    );
    let o = pk(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 6") && msg.contains("particles"), "{msg}");
}

#[test]
fn unknown_model_lists_choices() {
    let o = pk(&["pfilter", "--model", "lotka", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("gompertz") && msg.contains("ricker"), "{msg}");
}

#[test]
fn block_must_match_algorithm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "mm.json",
        r#"{"schema": 1, "model": "gompertz", "algorithm": "pfilter", "seed": 1, "mif": {"rw_sd": {"r": 0.02}}}"#,
    );
    let o = pk(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mif"));
}

#[test]
fn missing_seed_without_config() {
    let o = pk(&["pfilter", "--model", "gompertz"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn subcommand_must_match_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "k.json",
        r#"{"schema": 1, "model": "gompertz", "algorithm": "kalman", "seed": 1}"#,
    );
    let o = pk(&["pfilter", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn kalman_rejects_other_models() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = pk(&["kalman", "--model", "ricker", "--seed", "1", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_file() {
    let o = pk(&["pfilter", "--seed", "1", "--data", "/nonexistent/data.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn simulated_csv_feeds_back_as_data() {
    let tmp = tempfile::tempdir().unwrap();
    let sim_dir = tmp.path().join("sim");
    let o = pk(&["simulate", "--model", "gompertz", "--seed", "5", "-o", sim_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = sim_dir.join("simulations.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().next().unwrap().contains("Y"));
    assert_eq!(text.lines().count(), 1 + 100);

    let kal_dir = tmp.path().join("kal");
    let o = pk(&["kalman", "--seed", "5", "--data", csv.to_str().unwrap(), "-o", kal_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let exact = result(&kal_dir)["loglik"].as_f64().unwrap();

    let pf_dir = tmp.path().join("pf");
    let o = pk(&["pfilter", "--seed", "6", "--np", "2000", "--data", csv.to_str().unwrap(), "-o", pf_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = result(&pf_dir);
    assert_eq!(r["algorithm"], "pfilter");
    assert_eq!(r["np"], 2000);
    assert_eq!(r["cond_logliks"].as_array().unwrap().len(), 100);
    let ll = r["loglik"].as_f64().unwrap();
    assert!((ll - exact).abs() < 1.5, "{ll} vs {exact}");
}

#[test]
fn mif_writes_trace_and_best_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "mif.json",
        r#"{"schema": 1, "model": "gompertz", "algorithm": "mif", "seed": 21,
            "mif": {"starts": 2, "iterations": 5, "np": 100, "rw_sd": {"r": 0.02, "sigma": 0.02, "tau": 0.02}, "eval_reps": 2, "eval_np": 100}}"#,
    );
    let out = tmp.path().join("out");
    let o = pk(&["mif", "--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let header = trace.lines().next().unwrap();
    assert!(header.starts_with("run,iteration,loglik"), "{header}");
    assert!(trace.lines().count() > 2 * 5);
    assert!(result(&out)["loglik"].as_f64().unwrap().is_finite());
}

#[test]
fn pmcmc_chain_has_requested_length() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "pm.json",
        r#"{"schema": 1, "model": "gompertz", "algorithm": "pmcmc", "seed": 4,
            "pmcmc": {"iterations": 50, "np": 50, "proposal": {"r": 0.01, "sigma": 0.01}}}"#,
    );
    let out = tmp.path().join("out");
    let o = pk(&["run", "--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let chain = std::fs::read_to_string(out.join("chain.csv")).unwrap();
    assert!(chain.lines().next().unwrap().starts_with("iteration,"));
    assert_eq!(chain.lines().count(), 1 + 50);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.json",
        r#"{"schema": 1, "model": "sir", "algorithm": "simulate", "seed": 1}"#,
    );
    let run = |seed: &str, tag: &str| {
        let out = tmp.path().join(tag);
        let o = pk(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("simulations.csv")).unwrap()
    };
    assert_eq!(run("9", "a"), run("9", "b"));
    assert_ne!(run("9", "c"), run("10", "d"));
}
