//! Training runs, multi-seed jobs and run-level diagnostics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{pearson, summarize_scores, SummaryStats};
use crate::agent::{ActorPolicy, Agent, AgentConfig, UpdateMetrics};
use crate::diffmath::MlpParams;
use crate::envworld::{evaluate_lockstep, EnvSpec};
use crate::rng::{mix, stream, RunSeeds};
use crate::{Error, Result};

/// Actions with `avg|a|` above this count as saturated.
pub const SATURATION_LEVEL: f64 = 0.95;
/// Fraction of saturated updates above which a run counts as saturated.
pub const STUCK_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl RunOptions {
    pub fn validate(&self, cfg: &AgentConfig) -> Result<()> {
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("eval_every and eval_episodes must be positive".into()));
        }
        if self.total_steps < cfg.seed_frames {
            return Err(Error::Config(format!("total_steps {} is below seed_frames {}", self.total_steps, cfg.seed_frames)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub eval_mean: f64,
}

/// Everything recorded about one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub label: String,
    pub env: String,
    pub config_hash: String,
    pub curve: Vec<CurvePoint>,
    /// One row per evaluation point, one column per episode.
    pub eval_scores: Vec<Vec<f64>>,
    pub diag: Vec<UpdateMetrics>,
    /// Reason the run was aborted early.
    pub failed: Option<String>,
}

impl RunRecord {
    /// Mean return of the last evaluation point (0 for a run that never
    /// reached one).
    pub fn final_score(&self) -> f64 {
        self.curve.last().map_or(0.0, |p| p.eval_mean)
    }

    /// Score at the last evaluation point with `step <= at`.
    pub fn score_at(&self, at: u64) -> f64 {
        self.curve.iter().rev().find(|p| p.step <= at).map_or(0.0, |p| p.eval_mean)
    }
}

/// A run record plus the final actor weights.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub actor: MlpParams,
}

/// Trains one agent whose streams all derive from `seed`.
pub fn run_seed(cfg: &AgentConfig, spec: &EnvSpec, seed: u64, opts: &RunOptions) -> Result<RunRecord> {
    Ok(run_with_seeds(cfg, spec, seed, &RunSeeds::from_master(seed), opts)?.record)
}

/// Trains one agent with explicit stream seeds. `seed` only labels the record.
pub fn run_with_seeds(cfg: &AgentConfig, spec: &EnvSpec, seed: u64, seeds: &RunSeeds, opts: &RunOptions) -> Result<RunOutput> {
    opts.validate(cfg)?;
    let mut agent = Agent::new(cfg.clone(), spec.state_dim, spec.action_dim, seeds)?;
    let mut eval_rng = stream(seeds.eval, 6);
    let mut session = agent.open_session(spec.clone());
    let mut record = RunRecord {
        seed,
        label: String::new(),
        env: spec.name.clone(),
        config_hash: cfg.hash(),
        curve: Vec::new(),
        eval_scores: Vec::new(),
        diag: Vec::new(),
        failed: None,
    };
    for step in 0..opts.total_steps {
        match agent.agent_step(&mut session, step) {
            Ok(Some(m)) => record.diag.push(m),
            Ok(None) => {}
            Err(Error::NonFinite(msg)) => {
                record.failed = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        let completed = step + 1;
        if completed % opts.eval_every == 0 {
            let episode_seeds: Vec<u64> = (0..opts.eval_episodes).map(|_| eval_rng.random()).collect();
            let scores = match evaluate_lockstep(spec, &mut ActorPolicy(&agent.actor), &episode_seeds) {
                Ok(s) => s,
                Err(Error::NonFinite(msg)) => {
                    record.failed = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            };
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            record.curve.push(CurvePoint { step: completed, eval_mean: mean });
            record.eval_scores.push(scores);
        }
    }
    Ok(RunOutput { record, actor: agent.actor })
}

/// One unit of work for [`run_jobs`].
#[derive(Clone, Debug)]
pub struct Job {
    pub label: String,
    pub cfg: AgentConfig,
    pub spec: EnvSpec,
    pub seed: u64,
    pub seeds: RunSeeds,
}

impl Job {
    pub fn new(label: impl Into<String>, cfg: AgentConfig, spec: EnvSpec, seed: u64) -> Self {
        Self { label: label.into(), cfg, spec, seed, seeds: RunSeeds::from_master(seed) }
    }
}

/// Runs all jobs on `threads` workers. Results come back in job order
/// whatever the completion order, so output is independent of parallelism.
pub fn run_jobs(jobs: &[Job], opts: &RunOptions, threads: usize) -> Result<Vec<RunOutput>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut out = run_with_seeds(&job.cfg, &job.spec, job.seed, &job.seeds, opts)?;
                out.record.label = job.label.clone();
                Ok(out)
            })
            .collect()
    })
}

/// Summary of final scores (or scores at `at_step`).
pub fn summarize(records: &[RunRecord], at_step: Option<u64>) -> Result<SummaryStats> {
    let scores: Vec<f64> = records.iter().map(|r| at_step.map_or_else(|| r.final_score(), |s| r.score_at(s))).collect();
    summarize_scores(&scores)
}

/// Cross-pair correlation of evaluation curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedCorrelation {
    /// `(step, ρ)`, with `None` where either side had zero variance.
    pub per_point: Vec<(u64, Option<f64>)>,
    /// Mean of the defined points, `None` if there are none.
    pub mean_rho: Option<f64>,
    pub skipped: usize,
    /// Number of pairs containing an aborted run (they are still included).
    pub failed_pairs: usize,
}

/// Pearson ρ across pairs at every evaluation point shared by all runs.
pub fn pair_correlation(a: &[RunRecord], b: &[RunRecord]) -> Result<PairedCorrelation> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 pairs, got {} and {}", a.len(), b.len())));
    }
    let points = a.iter().chain(b).map(|r| r.curve.len()).min().unwrap_or(0);
    let mut per_point = Vec::with_capacity(points);
    for k in 0..points {
        let xa: Vec<f64> = a.iter().map(|r| r.curve[k].eval_mean).collect();
        let xb: Vec<f64> = b.iter().map(|r| r.curve[k].eval_mean).collect();
        per_point.push((a[0].curve[k].step, pearson(&xa, &xb)));
    }
    let defined: Vec<f64> = per_point.iter().filter_map(|p| p.1).collect();
    let failed_pairs = a.iter().zip(b).filter(|(x, y)| x.failed.is_some() || y.failed.is_some()).count();
    Ok(PairedCorrelation {
        mean_rho: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        skipped: per_point.len() - defined.len(),
        per_point,
        failed_pairs,
    })
}

/// Jobs for `n_pairs` pairs that share initialization and seed-phase
/// experience but nothing afterwards.
pub fn paired_jobs(cfg: &AgentConfig, spec: &EnvSpec, n_pairs: usize, master: u64) -> Vec<Job> {
    let mut jobs = Vec::with_capacity(2 * n_pairs);
    for k in 0..n_pairs as u64 {
        let shared = mix(master, 3 * k);
        for (side, own) in [("a", mix(master, 3 * k + 1)), ("b", mix(master, 3 * k + 2))] {
            jobs.push(Job { label: side.into(), cfg: cfg.clone(), spec: spec.clone(), seed: k, seeds: RunSeeds::paired(shared, own) });
        }
    }
    jobs
}

pub fn paired_seed_correlation(
    cfg: &AgentConfig,
    spec: &EnvSpec,
    n_pairs: usize,
    opts: &RunOptions,
    master: u64,
    threads: usize,
) -> Result<(PairedCorrelation, Vec<RunRecord>)> {
    if n_pairs < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 pairs, got {n_pairs}")));
    }
    let records: Vec<RunRecord> = run_jobs(&paired_jobs(cfg, spec, n_pairs, master), opts, threads)?.into_iter().map(|o| o.record).collect();
    let a: Vec<RunRecord> = records.iter().step_by(2).cloned().collect();
    let b: Vec<RunRecord> = records.iter().skip(1).step_by(2).cloned().collect();
    Ok((pair_correlation(&a, &b)?, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRow {
    pub lr: f64,
    pub stats: SummaryStats,
    pub records: Vec<RunRecord>,
}

/// `run_seed × summarize` over a grid of learning rates.
pub fn lr_sweep(cfg: &AgentConfig, spec: &EnvSpec, lrs: &[f64], seeds: &[u64], opts: &RunOptions, threads: usize) -> Result<Vec<LrRow>> {
    let mut jobs = Vec::with_capacity(lrs.len() * seeds.len());
    for &lr in lrs {
        for &seed in seeds {
            jobs.push(Job::new(format!("lr={lr}"), AgentConfig { lr, ..cfg.clone() }, spec.clone(), seed));
        }
    }
    let mut outputs = run_jobs(&jobs, opts, threads)?.into_iter();
    lrs.iter()
        .map(|&lr| {
            let records: Vec<RunRecord> = outputs.by_ref().take(seeds.len()).map(|o| o.record).collect();
            let stats = if records.len() == 1 {
                let s = records[0].final_score();
                SummaryStats { mu: s, sigma: 0.0, rel: (s > 0.0).then_some(0.0), n: 1 }
            } else {
                summarize(&records, None)?
            };
            Ok(LrRow { lr, stats, records })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    /// Fraction of updates whose batch `avg|a|` exceeded [`SATURATION_LEVEL`].
    pub frac_saturated: f64,
    /// First evaluation step whose mean exceeded the floor.
    pub first_learning_step: Option<u64>,
    pub stuck: bool,
}

/// Saturation summary; a run is stuck when it was saturated for at least
/// [`STUCK_FRACTION`] of its updates and finished at or below `floor`.
pub fn saturation_report(record: &RunRecord, floor: f64) -> SaturationReport {
    let saturated = record.diag.iter().filter(|m| m.avg_abs_action > SATURATION_LEVEL).count();
    let frac_saturated = if record.diag.is_empty() { 0.0 } else { saturated as f64 / record.diag.len() as f64 };
    SaturationReport {
        frac_saturated,
        first_learning_step: record.curve.iter().find(|p| p.eval_mean > floor).map(|p| p.step),
        stuck: frac_saturated >= STUCK_FRACTION && record.final_score() <= floor,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseQPoint {
    pub step: u64,
    pub fnz_qtarget: f64,
    pub fnz_reward: f64,
}

pub fn sparse_q_report(record: &RunRecord) -> Vec<SparseQPoint> {
    record.diag.iter().map(|m| SparseQPoint { step: m.step, fnz_qtarget: m.fnz_qtarget, fnz_reward: m.fnz_reward }).collect()
}

/// Averages the update diagnostics over consecutive windows of `every`
/// environment steps. Empty windows are skipped; `step` is the window end.
pub fn diag_windows(diag: &[UpdateMetrics], every: u64) -> Vec<UpdateMetrics> {
    let mut out: Vec<UpdateMetrics> = Vec::new();
    let mut start = 0;
    while start < diag.len() {
        let window = diag[start].step / every;
        let end = start + diag[start..].iter().take_while(|m| m.step / every == window).count();
        let chunk = &diag[start..end];
        let n = chunk.len() as f64;
        let mean = |f: fn(&UpdateMetrics) -> f64| chunk.iter().map(f).sum::<f64>() / n;
        out.push(UpdateMetrics {
            step: (window + 1) * every,
            actor_grad_norm: mean(|m| m.actor_grad_norm),
            critic_grad_norm: mean(|m| m.critic_grad_norm),
            critic_loss: mean(|m| m.critic_loss),
            avg_abs_action: mean(|m| m.avg_abs_action),
            avg_q: mean(|m| m.avg_q),
            delta_q: mean(|m| m.delta_q),
            fnz_qtarget: mean(|m| m.fnz_qtarget),
            fnz_reward: mean(|m| m.fnz_reward),
            ssl_loss: mean(|m| m.ssl_loss),
            clamped_rows: chunk.iter().map(|m| m.clamped_rows).sum(),
        });
        start = end;
    }
    out
}
