//! Runs baseline and combined presets over a few seeds and writes the bench
//! table to a temporary directory.

use varlab::cli::*;

fn main() -> varlab::Result<()> {
    let mut cfg = ExperimentConfig::new("point_mass");
    cfg.total_steps = 10_000;
    cfg.eval_every = 5_000;
    cfg.seeds = Seeds::Count(3);
    let out = std::env::temp_dir().join("varlab-bench-example");
    let opts = BenchOptions { presets: vec![MethodPreset::Baseline, MethodPreset::Combined], output: Some(out), ..Default::default() };
    let report = cmd_bench(&cfg, &opts, resolve_threads(None)?)?;
    for row in &report.rows {
        println!("{}", row.join(","));
    }
    println!("written to {}", report.csv.display());
    Ok(())
}
