//! Rolls out a hand-written energy-pumping controller on each pendulum task
//! and a zero policy on every task.

use varlab::diffmath::RealVec;
use varlab::envworld::*;

fn main() -> varlab::Result<()> {
    let mut pump = |o: &RealVec| {
        let (c, s, w) = (o[0], o[1], o[2] * 8.0);
        let u = if c > 0.9 {
            -(10.0 * s.atan2(c) + 2.0 * w) / 2.0
        } else if 0.5 * w * w + 10.0 * c < 10.0 {
            w.signum()
        } else {
            -0.2 * w
        };
        RealVec::from(vec![u.clamp(-1.0, 1.0)])
    };
    for name in ["pendulum_swingup", "pendulum_swingup_sparse"] {
        let spec = EnvSpec::by_name(name)?;
        let r = rollout(&spec, &mut pump, 0, 1000)?;
        println!("{name}: energy pump returns {:.1} over {} steps", r.total_reward, r.steps.len());
    }
    for name in ENV_NAMES {
        let spec = EnvSpec::by_name(name)?;
        let dim = spec.action_dim;
        let r = rollout(&spec, &mut |_: &RealVec| RealVec::zeros(dim), 0, 1000)?;
        println!("{name}: zero policy returns {:.1}", r.total_reward);
    }
    Ok(())
}
