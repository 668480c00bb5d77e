//! Replaces a growing fraction of a trained policy's actions with uniform
//! noise and reports the return at each mixing level.

use varlab::bench::{random_action_probe, run_jobs, Job};
use varlab::cli::ExperimentConfig;

fn main() -> varlab::Result<()> {
    let mut cfg = ExperimentConfig::new("pendulum_swingup");
    cfg.total_steps = 20_000;
    cfg.eval_every = 5_000;
    let spec = cfg.spec()?;
    let out = run_jobs(&[Job::new("probe", cfg.agent.clone(), spec.clone(), 0)], &cfg.run_options(), 1)?.remove(0);
    for row in random_action_probe(&out.actor, &spec, &[0.0, 0.25, 0.5, 0.75, 1.0], 10, 0)? {
        println!("p {:.2}  return {:.2} ± {:.2}", row.p, row.mean_return, row.std_return);
    }
    Ok(())
}
