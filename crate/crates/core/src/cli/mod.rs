//! Command-line front end: experiment configs, file formats and the
//! `train` / `bench` / `analyze` / `probe` commands.
//!
//! Exit codes: 0 on success, 1 on bad input or I/O failure, 2 when a
//! training run aborted on a non-finite value (its partial files are kept).

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_analyze, cmd_bench, cmd_probe, cmd_train, load_records, resolve_threads, write_run, Analysis, AnalyzeOptions,
    AnalyzeReport, BenchOptions, BenchReport, TrainReport, THREADS_ENV,
};
pub use config::{desk_agent, ExperimentConfig, MethodPreset, Seeds};

use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "varlab", version, about = "Seed-variance experiments for actor-critic agents on toy control tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one seed (or all configured seeds) and write run files.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Run presets × environments × seeds and write summary.csv.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        presets: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        envs: Vec<String>,
        /// Seed count (seeds 0..N); overrides the config.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        lrs: Vec<f64>,
        /// Run N pairs sharing initialization and seed-phase experience.
        #[arg(long)]
        paired: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Analyze a directory of runs.
    Analyze {
        #[arg(long)]
        dir: PathBuf,
        /// decomp, corr, profile, saturation, sparse-q or gain-ratio.
        #[arg(long)]
        what: String,
        #[arg(long)]
        s_from: Option<usize>,
        #[arg(long)]
        s_to: Option<usize>,
        #[arg(long)]
        alg_var: Option<f64>,
        #[arg(long)]
        sample_var: Option<f64>,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Random-action probe of a saved policy.
    Probe {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        p_grid: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "probe.csv")]
        output: PathBuf,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { config, seed, output, parallel } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let report = cmd_train(&cfg, seed, resolve_threads(parallel)?)?;
            for s in &report.aborted {
                eprintln!("run {s} aborted on a non-finite value; partial results written");
            }
            println!("wrote {} run(s) to {}", report.seeds.len(), report.dir.display());
            Ok(if report.aborted.is_empty() { 0 } else { 2 })
        }
        Command::Bench { config, presets, envs, seeds, lrs, paired, output, parallel } => {
            let cfg = ExperimentConfig::load(&config)?;
            let presets = presets.iter().map(|p| p.parse()).collect::<Result<Vec<MethodPreset>>>()?;
            let opts = BenchOptions { presets, envs, seeds, lrs, paired, output };
            let report = cmd_bench(&cfg, &opts, resolve_threads(parallel)?)?;
            println!("wrote {} ({} rows, {} aborted runs)", report.csv.display(), report.rows.len(), report.aborted);
            Ok(0)
        }
        Command::Analyze { dir, what, s_from, s_to, alg_var, sample_var, floor, output } => {
            let what: Analysis = what.parse()?;
            let report = cmd_analyze(&dir, what, &AnalyzeOptions { s_from, s_to, alg_var, sample_var, floor, output })?;
            for line in &report.lines {
                println!("{line}");
            }
            println!("wrote {}", report.csv.display());
            Ok(0)
        }
        Command::Probe { policy, env, p_grid, episodes, seed, output } => {
            let rows = cmd_probe(&policy, &env, &p_grid, episodes, seed, &output)?;
            println!("wrote {} ({} rows)", output.display(), rows.len());
            Ok(0)
        }
    }
}
