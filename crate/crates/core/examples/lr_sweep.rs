//! Compares how baseline and combined presets hold up when the learning rate
//! grows tenfold.

use varlab::bench::lr_sweep;
use varlab::cli::{resolve_threads, ExperimentConfig, MethodPreset};

fn main() -> varlab::Result<()> {
    let mut cfg = ExperimentConfig::new("point_mass");
    cfg.total_steps = 10_000;
    cfg.eval_every = 5_000;
    let threads = resolve_threads(None)?;
    for preset in [MethodPreset::Baseline, MethodPreset::Combined] {
        let agent = preset.apply(&cfg.agent, cfg.total_steps);
        for row in lr_sweep(&agent, &cfg.spec()?, &[1e-4, 1e-3], &[0, 1], &cfg.run_options(), threads)? {
            println!("{preset} lr {:.0e}: mean {:.2} std {:.2}", row.lr, row.stats.mu, row.stats.sigma);
        }
    }
    Ok(())
}
