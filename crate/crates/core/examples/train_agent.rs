//! Trains the combined-fix agent on the dense pendulum and prints its
//! learning curve and last update diagnostics.

use varlab::bench::run_seed;
use varlab::cli::{ExperimentConfig, MethodPreset};

fn main() -> varlab::Result<()> {
    let mut cfg = ExperimentConfig::new("pendulum_swingup");
    cfg.total_steps = 20_000;
    cfg.eval_every = 5_000;
    let agent = MethodPreset::Combined.apply(&cfg.agent, cfg.total_steps);
    let record = run_seed(&agent, &cfg.spec()?, 0, &cfg.run_options())?;
    for p in &record.curve {
        println!("step {:>6}  return {:.1}", p.step, p.eval_mean);
    }
    if let Some(m) = record.diag.last() {
        println!("last update: {m:?}");
    }
    Ok(())
}
