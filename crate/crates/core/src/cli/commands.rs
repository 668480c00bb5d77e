//! The four commands behind the `varlab` binary, callable as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, MethodPreset};
use super::io::{
    fmt_f64, jsonl_path, policy_path, read_jsonl, read_policy, read_summary, summary_path, write_csv, write_jsonl,
    write_policy, write_summary, RunSummary, FORMAT_VERSION,
};
use crate::agent::AgentConfig;
use crate::bench::{
    eval_gain_ratio, pair_correlation, paired_jobs, performance_profile, random_action_probe, run_jobs,
    saturation_report, summarize_scores, variance_decomposition, Job, RunOutput, RunRecord,
};
use crate::envworld::EnvSpec;
use crate::{Error, Result};

/// Environment variable that overrides `--parallel`.
pub const THREADS_ENV: &str = "VARLAB_THREADS";

/// Worker count: `VARLAB_THREADS` if set, else the flag, else 1.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag.unwrap_or(1).max(1)),
    }
}

/// Writes the JSONL, summary and policy files of one run into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput, eval_every: u64, stuck_floor: f64) -> Result<()> {
    let r = &out.record;
    write_jsonl(&jsonl_path(dir, r.seed), r, eval_every)?;
    write_summary(
        &summary_path(dir, r.seed),
        &RunSummary {
            version: FORMAT_VERSION,
            seed: r.seed,
            label: r.label.clone(),
            env: r.env.clone(),
            config_hash: r.config_hash.clone(),
            final_score: r.final_score(),
            eval_points: r.curve.len(),
            updates: r.diag.len(),
            failed: r.failed.clone(),
            saturation: saturation_report(r, stuck_floor),
        },
    )?;
    write_policy(&policy_path(dir, r.seed), &out.actor)
}

/// Outcome of `train`; any aborted run makes the command exit with 2.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    pub aborted: Vec<u64>,
}

/// Trains `seed` (or every configured seed) and writes the run files to
/// the configured output directory.
pub fn cmd_train(cfg: &ExperimentConfig, seed: Option<u64>, threads: usize) -> Result<TrainReport> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let seeds = seed.map_or_else(|| cfg.seeds.to_vec(), |s| vec![s]);
    let jobs: Vec<Job> = seeds.iter().map(|&s| Job::new("train", cfg.agent.clone(), spec.clone(), s)).collect();
    let outputs = run_jobs(&jobs, &cfg.run_options(), threads)?;
    super::io::write_atomic(&cfg.output.join("config.json"), cfg.to_json()?.as_bytes())?;
    for out in &outputs {
        write_run(&cfg.output, out, cfg.eval_every, cfg.stuck_floor)?;
    }
    let aborted = outputs.iter().filter(|o| o.record.failed.is_some()).map(|o| o.record.seed).collect();
    Ok(TrainReport { dir: cfg.output.clone(), seeds, aborted })
}

/// Options of `bench` beyond the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchOptions {
    pub presets: Vec<MethodPreset>,
    /// Environments; empty means the config's env.
    pub envs: Vec<String>,
    /// Seed count overriding the config's seeds.
    pub seeds: Option<u64>,
    /// Learning rates to sweep; empty means the config's lr.
    pub lrs: Vec<f64>,
    /// Run this many paired runs (shared init and seed phase) per cell instead of independent seeds.
    pub paired: Option<usize>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub csv: PathBuf,
    pub rows: Vec<Vec<String>>,
    pub aborted: usize,
}

struct Cell {
    name: String,
    env: String,
    dir: PathBuf,
    jobs: Vec<Job>,
}

/// Runs every preset × env (× lr) cell and writes per-run files plus a
/// `summary.csv` of final-score statistics.
pub fn cmd_bench(cfg: &ExperimentConfig, opts: &BenchOptions, threads: usize) -> Result<BenchReport> {
    cfg.validate()?;
    if opts.presets.is_empty() {
        return Err(Error::InvalidArgument("no presets given".into()));
    }
    let out_dir = opts.output.clone().unwrap_or_else(|| cfg.output.clone());
    let envs = if opts.envs.is_empty() { vec![cfg.env.clone()] } else { opts.envs.clone() };
    let seeds: Vec<u64> = opts.seeds.map_or_else(|| cfg.seeds.to_vec(), |n| (0..n).collect());
    let lrs: Vec<Option<f64>> = if opts.lrs.is_empty() { vec![None] } else { opts.lrs.iter().map(|&l| Some(l)).collect() };

    let mut cells = Vec::new();
    for &preset in &opts.presets {
        for lr in &lrs {
            let mut agent: AgentConfig = preset.apply(&cfg.agent, cfg.total_steps);
            let mut name = preset.name().to_string();
            if let Some(lr) = lr {
                agent.lr = *lr;
                name = format!("{name}@lr={lr:e}");
            }
            agent.validate()?;
            for env in &envs {
                let spec = EnvSpec::by_name(env)?;
                let dir = out_dir.join(&name).join(env);
                let jobs = match opts.paired {
                    Some(n) => paired_jobs(&agent, &spec, n, seeds.first().copied().unwrap_or(0)),
                    None => seeds.iter().map(|&s| Job::new(name.clone(), agent.clone(), spec.clone(), s)).collect(),
                };
                cells.push(Cell { name: name.clone(), env: env.clone(), dir, jobs });
            }
        }
    }
    let all: Vec<Job> = cells.iter().flat_map(|c| c.jobs.iter().cloned()).collect();
    let mut outputs = run_jobs(&all, &cfg.run_options(), threads)?.into_iter();

    let mut table: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut aborted = 0;
    for cell in &cells {
        let outs: Vec<RunOutput> = outputs.by_ref().take(cell.jobs.len()).collect();
        for out in &outs {
            let dir = if opts.paired.is_some() { cell.dir.join(&out.record.label) } else { cell.dir.clone() };
            write_run(&dir, out, cfg.eval_every, cfg.stuck_floor)?;
            aborted += usize::from(out.record.failed.is_some());
        }
        table.insert((cell.name.clone(), cell.env.clone()), outs.iter().map(|o| o.record.final_score()).collect());
    }

    let mut rows = Vec::new();
    for ((name, env), scores) in &table {
        let s = summarize_scores(scores)?;
        let n = scores.len().to_string();
        for (metric, value) in [("mu", Some(s.mu)), ("rel", s.rel), ("sigma", Some(s.sigma))] {
            rows.push(vec![name.clone(), env.clone(), metric.into(), value.map(fmt_f64).unwrap_or_default(), n.clone()]);
        }
    }
    let csv = out_dir.join("summary.csv");
    write_csv(&csv, &["preset", "env", "metric", "value", "n_seeds"], &rows)?;
    Ok(BenchReport { csv, rows, aborted })
}

/// Reads every `run_<seed>.jsonl` in `dir`, sorted by seed, filling run
/// metadata from the summary file when present. Diagnostics are the windowed
/// averages stored on disk.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(seed) = name.strip_prefix("run_").and_then(|n| n.strip_suffix(".jsonl")).and_then(|n| n.parse::<u64>().ok()) {
            seeds.push(seed);
        }
    }
    seeds.sort_unstable();
    seeds
        .into_iter()
        .map(|seed| {
            let run = read_jsonl(&jsonl_path(dir, seed))?;
            let mut record = RunRecord {
                seed,
                label: String::new(),
                env: String::new(),
                config_hash: String::new(),
                curve: run.curve,
                eval_scores: run.eval_scores,
                diag: run.windows,
                failed: None,
            };
            let sp = summary_path(dir, seed);
            if sp.exists() {
                let summary = read_summary(&sp)?;
                (record.label, record.env, record.config_hash, record.failed) = (summary.label, summary.env, summary.config_hash, summary.failed);
            }
            Ok(record)
        })
        .collect()
}

/// Directories under `root` (inclusive) that hold run files, as
/// `(relative name, records)` sorted by name.
fn run_groups(root: &Path) -> Result<Vec<(String, Vec<RunRecord>)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let records = load_records(&dir)?;
        if !records.is_empty() {
            let rel = dir.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            let name = if rel.is_empty() { root.file_name().map_or(".".into(), |n| n.to_string_lossy().into_owned()) } else { rel };
            out.push((name, records));
        }
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Analysis {
    Decomp,
    Corr,
    Profile,
    Saturation,
    SparseQ,
    GainRatio,
}

impl std::str::FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "decomp" => Self::Decomp,
            "corr" => Self::Corr,
            "profile" => Self::Profile,
            "saturation" => Self::Saturation,
            "sparse-q" => Self::SparseQ,
            "gain-ratio" => Self::GainRatio,
            _ => return Err(Error::InvalidArgument(format!("unknown analysis {s:?}; valid: decomp, corr, profile, saturation, sparse-q, gain-ratio"))),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalyzeOptions {
    /// Episode count the gain ratio starts from; defaults to the runs' count.
    pub s_from: Option<usize>,
    pub s_to: Option<usize>,
    /// Use these variances for the gain ratio instead of decomposing runs.
    pub alg_var: Option<f64>,
    pub sample_var: Option<f64>,
    /// Floor for the stuck flag; defaults to the value stored at training time.
    pub floor: Option<f64>,
    /// Report directory; defaults to the run directory.
    pub output: Option<PathBuf>,
}

/// Result of `analyze`: the CSV written plus any human-readable lines.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeReport {
    pub csv: PathBuf,
    pub lines: Vec<String>,
}

fn need_runs(records: &[RunRecord], dir: &Path) -> Result<()> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!("{} holds {} runs, need at least 2", dir.display(), records.len())));
    }
    Ok(())
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn cmd_analyze(dir: &Path, what: Analysis, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    let out_dir = opts.output.clone().unwrap_or_else(|| dir.to_path_buf());
    let mut lines = Vec::new();
    let (file, header, rows): (&str, Vec<&str>, Vec<Vec<String>>) = match what {
        Analysis::Decomp => {
            let records = load_records(dir)?;
            need_runs(&records, dir)?;
            let points = records.iter().map(|r| r.eval_scores.len()).min().unwrap_or(0);
            let mut rows = Vec::with_capacity(points);
            for k in 0..points {
                let matrix: Vec<Vec<f64>> = records.iter().map(|r| r.eval_scores[k].clone()).collect();
                let d = variance_decomposition(&matrix)?;
                rows.push(vec![
                    records[0].curve[k].step.to_string(),
                    fmt_f64(d.alg_var),
                    fmt_f64(d.alg_var_raw),
                    fmt_f64(d.sample_var),
                    d.runs.to_string(),
                    d.samples.to_string(),
                ]);
            }
            ("decomp.csv", vec!["step", "alg_var", "alg_var_raw", "sample_var", "runs", "samples"], rows)
        }
        Analysis::Corr => {
            let a = load_records(&dir.join("a"))?;
            let b = load_records(&dir.join("b"))?;
            need_runs(&a, dir)?;
            let pairs: BTreeMap<u64, &RunRecord> = b.iter().map(|r| (r.seed, r)).collect();
            let (a, b): (Vec<RunRecord>, Vec<RunRecord>) = a
                .iter()
                .filter_map(|r| pairs.get(&r.seed).map(|p| (r.clone(), (*p).clone())))
                .unzip();
            let c = pair_correlation(&a, &b)?;
            lines.push(format!(
                "mean_rho={} points={} skipped={} pairs_with_aborted_runs={}",
                opt_f64(c.mean_rho),
                c.per_point.len(),
                c.skipped,
                c.failed_pairs
            ));
            let rows = c.per_point.iter().map(|(s, r)| vec![s.to_string(), opt_f64(*r)]).collect();
            ("corr.csv", vec!["step", "rho"], rows)
        }
        Analysis::Profile => {
            let groups = run_groups(dir)?;
            if groups.is_empty() {
                return Err(Error::InvalidArgument(format!("no runs under {}", dir.display())));
            }
            let methods: Vec<(String, Vec<f64>)> =
                groups.iter().map(|(n, rs)| (n.clone(), rs.iter().map(RunRecord::final_score).collect())).collect();
            let top = methods.iter().flat_map(|m| m.1.iter().copied()).fold(0.0f64, f64::max);
            let taus: Vec<f64> = (0..=50).map(|i| top * i as f64 / 50.0).collect();
            let rows = performance_profile(&methods, &taus)?
                .into_iter()
                .map(|p| vec![p.method, fmt_f64(p.tau), fmt_f64(p.fraction)])
                .collect();
            ("profile.csv", vec!["method", "tau", "fraction"], rows)
        }
        Analysis::Saturation => {
            let records = load_records(dir)?;
            need_runs(&records, dir)?;
            let mut rows = Vec::new();
            for r in &records {
                let stored = read_summary(&summary_path(dir, r.seed))?.saturation;
                let rep = match opts.floor {
                    // the stored report uses every update; only the floor changes here
                    Some(f) => crate::bench::SaturationReport {
                        first_learning_step: r.curve.iter().find(|p| p.eval_mean > f).map(|p| p.step),
                        stuck: stored.frac_saturated >= crate::bench::STUCK_FRACTION && r.final_score() <= f,
                        ..stored
                    },
                    None => stored,
                };
                rows.push(vec![
                    r.seed.to_string(),
                    fmt_f64(rep.frac_saturated),
                    rep.first_learning_step.map(|s| s.to_string()).unwrap_or_default(),
                    rep.stuck.to_string(),
                ]);
            }
            let stuck = rows.iter().filter(|r| r[3] == "true").count();
            lines.push(format!("stuck={stuck} runs={}", rows.len()));
            ("saturation.csv", vec!["seed", "frac_saturated", "first_learning_step", "stuck"], rows)
        }
        Analysis::SparseQ => {
            let records = load_records(dir)?;
            need_runs(&records, dir)?;
            let rows = records
                .iter()
                .flat_map(|r| r.diag.iter().map(move |m| vec![r.seed.to_string(), m.step.to_string(), fmt_f64(m.fnz_qtarget), fmt_f64(m.fnz_reward)]))
                .collect();
            ("sparse_q.csv", vec!["seed", "step", "fnz_qtarget", "fnz_reward"], rows)
        }
        Analysis::GainRatio => {
            let (alg, sample, samples) = match (opts.alg_var, opts.sample_var) {
                (Some(a), Some(s)) => (a, s, None),
                (None, None) => {
                    let records = load_records(dir)?;
                    need_runs(&records, dir)?;
                    let matrix: Vec<Vec<f64>> = records.iter().map(|r| r.eval_scores.last().cloned().unwrap_or_default()).collect();
                    let d = variance_decomposition(&matrix)?;
                    (d.alg_var, d.sample_var, Some(d.samples))
                }
                _ => return Err(Error::InvalidArgument("give both --alg-var and --sample-var, or neither".into())),
            };
            let s_from = opts.s_from.or(samples).unwrap_or(10);
            let s_to = opts.s_to.unwrap_or(10 * s_from);
            let ratio = eval_gain_ratio(alg, sample, s_from, s_to)?;
            lines.push(format!("alg_var={alg} sample_var={sample} s_from={s_from} s_to={s_to}"));
            lines.push(format!("sqrt(({alg} + {sample}/{s_from}) / ({alg} + {sample}/{s_to})) = {ratio:.4}"));
            let row = vec![fmt_f64(alg), fmt_f64(sample), s_from.to_string(), s_to.to_string(), fmt_f64(ratio)];
            ("gain_ratio.csv", vec!["alg_var", "sample_var", "s_from", "s_to", "ratio"], vec![row])
        }
    };
    let csv = out_dir.join(file);
    write_csv(&csv, &header, &rows)?;
    Ok(AnalyzeReport { csv, lines })
}

/// Evaluates a saved policy under random action swaps and writes `probe.csv`.
pub fn cmd_probe(policy: &Path, env: &str, p_grid: &[f64], episodes: usize, seed: u64, output: &Path) -> Result<Vec<Vec<String>>> {
    let params = read_policy(policy)?;
    let spec = EnvSpec::by_name(env)?;
    if params.in_dim() != spec.state_dim || params.out_dim() != spec.action_dim {
        return Err(Error::Shape(format!(
            "policy maps {} -> {} but {env} needs {} -> {}",
            params.in_dim(),
            params.out_dim(),
            spec.state_dim,
            spec.action_dim
        )));
    }
    let rows: Vec<Vec<String>> = random_action_probe(&params, &spec, p_grid, episodes, seed)?
        .into_iter()
        .map(|r| vec![fmt_f64(r.p), fmt_f64(r.mean_return), fmt_f64(r.std_return)])
        .collect();
    write_csv(output, &["p", "mean_return", "std_return"], &rows)?;
    Ok(rows)
}
