//! Trains pairs of agents that share their initialization and checks how
//! much their learning curves still agree.

use varlab::bench::paired_seed_correlation;
use varlab::cli::{resolve_threads, ExperimentConfig, MethodPreset};

fn main() -> varlab::Result<()> {
    let mut cfg = ExperimentConfig::new("pendulum_swingup");
    cfg.total_steps = 10_000;
    cfg.eval_every = 2_500;
    let agent = MethodPreset::Baseline.apply(&cfg.agent, cfg.total_steps);
    let (corr, _) = paired_seed_correlation(&agent, &cfg.spec()?, 4, &cfg.run_options(), 0, resolve_threads(None)?)?;
    for (step, rho) in &corr.per_point {
        println!("step {step:>6}  rho {rho:?}");
    }
    println!("mean rho {:?}", corr.mean_rho);
    Ok(())
}
