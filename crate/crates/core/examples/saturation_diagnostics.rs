//! Trains the baseline on the sparse pendulum and reports action saturation
//! and how often Q-targets and rewards are nonzero.

use varlab::bench::{run_seed, saturation_report, sparse_q_report};
use varlab::cli::{ExperimentConfig, MethodPreset};

fn main() -> varlab::Result<()> {
    let mut cfg = ExperimentConfig::new("pendulum_swingup_sparse");
    cfg.total_steps = 15_000;
    cfg.eval_every = 5_000;
    let agent = MethodPreset::Baseline.apply(&cfg.agent, cfg.total_steps);
    let record = run_seed(&agent, &cfg.spec()?, 0, &cfg.run_options())?;
    let sat = saturation_report(&record, cfg.stuck_floor);
    println!("saturated fraction {:.3}, first learning step {:?}, stuck {}", sat.frac_saturated, sat.first_learning_step, sat.stuck);
    for p in sparse_q_report(&record).iter().step_by(1000) {
        println!("step {:>6}  nonzero Q-target {:.3}  nonzero reward {:.3}", p.step, p.fnz_qtarget, p.fnz_reward);
    }
    Ok(())
}
