use std::f64::consts::PI;

use proptest::prelude::*;
use varlab::diffmath::RealVec;
use varlab::envworld::*;

#[test]
fn pendulum_reset_angles_fill_the_documented_band() {
    let spec = EnvSpec::by_name("pendulum_swingup").unwrap();
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for seed in 0..1000 {
        let s = env_reset(&spec, seed);
        let theta = s.physical[0];
        assert!((-PI..PI).contains(&theta));
        assert_eq!(s.physical[1], 0.0);
        // distance past the bottom, in (−spread, spread)
        let off = if theta > 0.0 { theta - PI } else { theta + PI };
        assert!(off.abs() <= PENDULUM_RESET_SPREAD, "{off}");
        let b = ((off + PENDULUM_RESET_SPREAD) / (2.0 * PENDULUM_RESET_SPREAD) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    // uniform: each bin expects 100; chi-square with 9 dof, 27.88 is the 0.001 critical value
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 100.0).powi(2) / 100.0).sum();
    assert!(chi2 < 27.88, "counts {counts:?}, chi2 {chi2}");
}

#[test]
fn undriven_pendulum_conserves_modified_energy() {
    let spec = EnvSpec::by_name("pendulum_swingup").unwrap();
    let c = spec.physics;
    for (theta0, omega0) in [(PI - 0.2, 0.0), (1.0, 0.0), (0.3, 2.0)] {
        let mut state = EnvState { physical: vec![theta0, omega0], t: 0 };
        let e0 = pendulum_shadow_energy(&c, theta0, omega0);
        let mut worst: f64 = 0.0;
        loop {
            let res = env_step(&spec, &state, &[0.0]).unwrap();
            state = res.next;
            let (th, om) = (state.physical[0], state.physical[1]);
            assert!(om.abs() < c.max_speed, "speed clamp would break conservation");
            worst = worst.max((pendulum_shadow_energy(&c, th, om) - e0).abs());
            if res.done {
                break;
            }
        }
        let scale = c.mass * c.gravity * c.length;
        assert!(worst / scale < 1e-3, "start ({theta0}, {omega0}): drift {worst}");
    }
}

#[test]
fn sparse_pendulum_rewards_upright_rest() {
    let spec = EnvSpec::by_name("pendulum_swingup_sparse").unwrap();
    let up = EnvState { physical: vec![0.0, 0.0], t: 0 };
    assert_eq!(env_step(&spec, &up, &[0.0]).unwrap().reward, spec.action_repeat as f64);
    let down = EnvState { physical: vec![-PI, 0.0], t: 0 };
    assert_eq!(env_step(&spec, &down, &[0.0]).unwrap().reward, 0.0);
}

#[test]
fn rollout_return_is_sum_of_step_rewards() {
    for name in ENV_NAMES {
        let spec = EnvSpec::by_name(name).unwrap();
        let mut k = 0u64;
        let mut pol = |o: &RealVec| {
            k += 1;
            o.mapv(|v| ((v * 7.0 + k as f64).sin()).clamp(-1.0, 1.0)).slice(ndarray::s![..spec.action_dim]).to_owned()
        };
        let r = rollout(&spec, &mut pol, 11, 10_000).unwrap();
        assert_eq!(r.steps.len(), spec.control_steps());
        assert!(r.steps.last().unwrap().done);
        assert!(r.steps[..r.steps.len() - 1].iter().all(|s| !s.done));
        let mut total = 0.0;
        for s in &r.steps {
            total += s.reward;
        }
        assert_eq!(total, r.total_reward);
    }
}

#[test]
fn zero_policy_never_scores_on_sparse_pendulum() {
    let spec = EnvSpec::by_name("pendulum_swingup_sparse").unwrap();
    for seed in 0..5 {
        let r = rollout(&spec, &mut |o: &RealVec| RealVec::zeros(o.len().min(1)), seed, 1000).unwrap();
        assert_eq!(r.total_reward, 0.0);
    }
}

#[test]
fn sparse_reward_is_reachable_by_energy_pumping() {
    let spec = EnvSpec::by_name("pendulum_swingup_sparse").unwrap();
    let mut pol = |o: &RealVec| {
        let (c, s, w) = (o[0], o[1], o[2] * 8.0);
        let th = s.atan2(c);
        let energy = 0.5 * w * w + 10.0 * c;
        let u = if c > 0.9 {
            -(10.0 * th + 2.0 * w) / 2.0
        } else if energy < 10.0 {
            w.signum()
        } else {
            -0.2 * w
        };
        RealVec::from(vec![u.clamp(-1.0, 1.0)])
    };
    let r = rollout(&spec, &mut pol, 0, 1000).unwrap();
    assert!(r.total_reward > 50.0, "{}", r.total_reward);
}

proptest! {
    #[test]
    fn rewards_bounded_and_sparse_rewards_integral(
        env in 0usize..5,
        seed in 0u64..1000,
        actions in prop::collection::vec(-3.0f64..3.0, 400),
    ) {
        let spec = EnvSpec::by_name(ENV_NAMES[env]).unwrap();
        let mut state = env_reset(&spec, seed);
        for chunk in actions.chunks(spec.action_dim) {
            if chunk.len() < spec.action_dim {
                break;
            }
            let res = env_step(&spec, &state, chunk).unwrap();
            prop_assert!((0.0..=spec.action_repeat as f64).contains(&res.reward));
            if spec.reward_kind == RewardKind::Sparse {
                prop_assert_eq!(res.reward.fract(), 0.0);
            }
            if spec.kind == EnvKind::Pendulum {
                prop_assert!((-PI..PI).contains(&res.next.physical[0]));
            }
            state = res.next;
            if res.done {
                break;
            }
        }
    }

    #[test]
    fn trajectories_are_deterministic(env in 0usize..5, seed in 0u64..1000, a in -1.0f64..1.0) {
        let spec = EnvSpec::by_name(ENV_NAMES[env]).unwrap();
        let run = || {
            let mut s = env_reset(&spec, seed);
            let mut out = Vec::new();
            for k in 0..50 {
                let act = vec![a * (k as f64 * 0.3).cos(); spec.action_dim];
                let r = env_step(&spec, &s, &act).unwrap();
                out.push((r.reward.to_bits(), r.next.physical.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
                s = r.next;
            }
            out
        };
        prop_assert_eq!(run(), run());
    }
}
