use std::fs;
use std::path::Path;
use std::process::Command;

use varlab::bench::{evaluate_policy, summarize_scores};
use varlab::cli::io::{jsonl_path, policy_path, read_csv, read_jsonl, read_policy, read_summary, summary_path};
use varlab::cli::*;
use varlab::envworld::EnvSpec;

fn tiny_config(env: &str, out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "env": "{env}",
            "total_steps": 300,
            "eval_every": 100,
            "eval_episodes": 2,
            "seeds": 3,
            "output": {out:?},
            "agent": {{"batch": 8, "seed_frames": 100, "feature_dim": 8, "hidden_dim": 16, "ssl_hidden": 16, "replay_capacity": 1000}}
        }}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn varlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_varlab")).args(args).env_remove(THREADS_ENV).output().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn train_writes_files_and_reruns_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("one"), tmp.path().join("two"));
    let rep = cmd_train(&tiny_config("pendulum_swingup", &d1), Some(7), 1).unwrap();
    assert_eq!(rep.seeds, vec![7]);
    assert!(rep.aborted.is_empty());
    cmd_train(&tiny_config("pendulum_swingup", &d2), Some(7), 1).unwrap();
    for f in [jsonl_path(&d1, 7), summary_path(&d1, 7), policy_path(&d1, 7)] {
        assert!(f.exists(), "{}", f.display());
    }
    let (a, b) = (read_dir_bytes(&d1), read_dir_bytes(&d2));
    // config.json differs only in the output path
    let strip = |v: &[(String, Vec<u8>)]| v.iter().filter(|(n, _)| n != "config.json").cloned().collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));

    let text = fs::read_to_string(jsonl_path(&d1, 7)).unwrap();
    let run = read_jsonl(&jsonl_path(&d1, 7)).unwrap();
    let summary = read_summary(&summary_path(&d1, 7)).unwrap();
    assert_eq!(run.curve.len(), 3);
    assert_eq!(text.lines().count(), run.curve.len() + run.windows.len());
    assert_eq!(run.windows.len(), 2);
    assert_eq!(summary.final_score, run.final_score());
    assert_eq!(summary.eval_points, 3);
    assert_eq!(summary.updates, 100);
    assert!(text.lines().all(|l| l.contains("\"version\":1")));
}

#[test]
fn saved_policy_reproduces_the_final_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("reacher", tmp.path());
    cmd_train(&cfg, Some(1), 1).unwrap();
    let p = read_policy(&policy_path(tmp.path(), 1)).unwrap();
    let spec = EnvSpec::by_name("reacher").unwrap();
    let a = evaluate_policy(&p, &spec, 5, 3).unwrap();
    let reloaded = varlab::cli::io::policy_from_bytes(&varlab::cli::io::policy_to_bytes(&p)).unwrap();
    assert_eq!(a, evaluate_policy(&reloaded, &spec, 5, 3).unwrap());

    let out = tmp.path().join("probe.csv");
    let rows = cmd_probe(&policy_path(tmp.path(), 1), "reacher", &[0.0], 5, 3, &out).unwrap();
    let mean = a.iter().sum::<f64>() / 5.0;
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), mean);
    assert!(cmd_probe(&policy_path(tmp.path(), 1), "pendulum_swingup", &[0.0], 2, 3, &out).is_err());
}

#[test]
fn bench_rows_match_jsonl_recomputation_and_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("pendulum_swingup", tmp.path());
    let mut opts = BenchOptions {
        presets: vec![MethodPreset::Baseline, MethodPreset::BothPnorm],
        envs: vec!["pendulum_swingup".into(), "point_mass".into()],
        output: Some(tmp.path().join("w1")),
        ..Default::default()
    };
    let rep = cmd_bench(&cfg, &opts, 1).unwrap();
    assert_eq!(rep.rows.len(), 12);
    let keys: Vec<(String, String, String)> = rep.rows.iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    opts.output = Some(tmp.path().join("w8"));
    let rep8 = cmd_bench(&cfg, &opts, 8).unwrap();
    assert_eq!(fs::read(&rep.csv).unwrap(), fs::read(&rep8.csv).unwrap());

    let (header, rows) = read_csv(&rep.csv).unwrap();
    assert_eq!(header, vec!["preset", "env", "metric", "value", "n_seeds"]);
    for preset in ["baseline", "both_pnorm"] {
        for env in ["pendulum_swingup", "point_mass"] {
            let records = load_records(&tmp.path().join("w1").join(preset).join(env)).unwrap();
            let finals: Vec<f64> = records.iter().map(|r| r.final_score()).collect();
            let s = summarize_scores(&finals).unwrap();
            let get = |m: &str| rows.iter().find(|r| r[0] == preset && r[1] == env && r[2] == m).unwrap()[3].parse::<f64>().unwrap();
            assert_eq!(get("mu"), s.mu);
            assert_eq!(get("sigma"), s.sigma);
        }
    }
}

#[test]
fn analyze_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("pendulum_swingup", tmp.path());
    cmd_train(&cfg, None, 2).unwrap();

    let decomp = cmd_analyze(tmp.path(), Analysis::Decomp, &AnalyzeOptions::default()).unwrap();
    let (_, rows) = read_csv(&decomp.csv).unwrap();
    assert_eq!(rows.len(), 3);

    let profile = cmd_analyze(tmp.path(), Analysis::Profile, &AnalyzeOptions::default()).unwrap();
    let (_, rows) = read_csv(&profile.csv).unwrap();
    let fr: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(fr.windows(2).all(|w| w[1] <= w[0]));

    let sat = cmd_analyze(tmp.path(), Analysis::Saturation, &AnalyzeOptions::default()).unwrap();
    assert_eq!(read_csv(&sat.csv).unwrap().1.len(), 3);
    let sq = cmd_analyze(tmp.path(), Analysis::SparseQ, &AnalyzeOptions::default()).unwrap();
    assert_eq!(read_csv(&sq.csv).unwrap().1.len(), 3 * 2);

    let opts = AnalyzeOptions { alg_var: Some(35231.7), sample_var: Some(176211.9), s_from: Some(10), s_to: Some(100), ..Default::default() };
    let gr = cmd_analyze(tmp.path(), Analysis::GainRatio, &opts).unwrap();
    assert!(gr.lines.iter().any(|l| l.ends_with("= 1.1953")), "{:?}", gr.lines);
}

#[test]
fn decomposition_of_constant_runs_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let line = format!("{{\"kind\":\"eval\",\"version\":1,\"step\":100,\"eval_mean\":5.0,\"scores\":[5.0,5.0,5.0]}}\n");
        fs::write(jsonl_path(tmp.path(), seed), line).unwrap();
    }
    let rep = cmd_analyze(tmp.path(), Analysis::Decomp, &AnalyzeOptions::default()).unwrap();
    let (_, rows) = read_csv(&rep.csv).unwrap();
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn readers_reject_unknown_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("run_0.jsonl");
    fs::write(&p, "{\"kind\":\"eval\",\"version\":9,\"step\":1,\"eval_mean\":0.0,\"scores\":[]}\n").unwrap();
    assert!(read_jsonl(&p).is_err());
    let c = tmp.path().join("x.csv");
    fs::write(&c, "#version=2\na,b\n1,2\n").unwrap();
    assert!(read_csv(&c).is_err());
    fs::write(&c, "a,b\n1,2\n").unwrap();
    assert!(read_csv(&c).is_err());
}

#[test]
fn threads_env_overrides_the_flag() {
    // the only test touching the variable
    std::env::set_var(THREADS_ENV, "3");
    assert_eq!(resolve_threads(Some(8)).unwrap(), 3);
    std::env::set_var(THREADS_ENV, "zero");
    assert!(resolve_threads(Some(8)).is_err());
    std::env::remove_var(THREADS_ENV);
    assert_eq!(resolve_threads(Some(8)).unwrap(), 8);
    assert_eq!(resolve_threads(None).unwrap(), 1);
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &tiny_config("point_mass", &tmp.path().join("runs")));
    let cfg = cfg_path.to_str().unwrap();

    let ok = varlab(&["train", "--config", cfg, "--seed", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(tmp.path().join("runs/run_2.jsonl").exists());

    let no_env = tmp.path().join("no_env.json");
    fs::write(&no_env, r#"{"total_steps": 300}"#).unwrap();
    let out = varlab(&["train", "--config", no_env.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("env"));

    let out = varlab(&["bench", "--config", cfg, "--presets", "baseline,turbo"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("combined_pp"));

    let out = varlab(&["analyze", "--dir", tmp.path().join("runs").to_str().unwrap(), "--what", "decomp"]);
    assert_eq!(out.status.code(), Some(1), "one run is not enough");

    let bad = tmp.path().join("bad.policy.bin");
    let mut bytes = fs::read(tmp.path().join("runs/run_2.policy.bin")).unwrap();
    bytes[8] = 99;
    fs::write(&bad, bytes).unwrap();
    let out = varlab(&["probe", "--policy", bad.to_str().unwrap(), "--env", "point_mass"]);
    assert_eq!(out.status.code(), Some(1));

    let out = varlab(&["analyze", "--dir", ".", "--what", "gain-ratio", "--alg-var", "35231.7", "--sample-var", "176211.9", "--s-from", "10", "--s-to", "100", "--output", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("1.195"));
}

#[test]
fn diverging_run_exits_with_two_and_keeps_partial_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config("pendulum_swingup", &tmp.path().join("runs"));
    cfg.agent.lr = 1e300;
    let path = write_config(tmp.path(), &cfg);
    let out = varlab(&["train", "--config", path.to_str().unwrap(), "--seed", "0"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_summary(&summary_path(&tmp.path().join("runs"), 0)).unwrap();
    assert!(s.failed.is_some());
}

#[test]
fn bench_parallel_flag_and_env_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &tiny_config("point_mass", &tmp.path().join("runs")));
    let cfg = cfg_path.to_str().unwrap();
    let mut csvs = Vec::new();
    for (name, par) in [("p1", "1"), ("p8", "8")] {
        let dir = tmp.path().join(name);
        let out = varlab(&["bench", "--config", cfg, "--presets", "baseline,combined", "--seeds", "3", "--parallel", par, "--output", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read(dir.join("summary.csv")).unwrap());
    }
    let dir = tmp.path().join("env4");
    let out = Command::new(env!("CARGO_BIN_EXE_varlab"))
        .args(["bench", "--config", cfg, "--presets", "baseline,combined", "--seeds", "3", "--output", dir.to_str().unwrap()])
        .env(THREADS_ENV, "4")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    csvs.push(fs::read(dir.join("summary.csv")).unwrap());
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}
