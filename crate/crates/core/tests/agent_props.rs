use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use varlab::agent::*;
use varlab::diffmath::{finite_diff_grad, max_rel_error, soft_update, AdamState, MlpParams, RealMat, RealVec};
use varlab::envworld::{EnvSpec, Policy};
use varlab::rng::{stream, RunSeeds};

fn small_cfg() -> AgentConfig {
    AgentConfig {
        batch: 8,
        seed_frames: 100,
        feature_dim: 8,
        hidden_dim: 16,
        ssl_hidden: 16,
        replay_capacity: 1000,
        ..AgentConfig::default()
    }
}

fn gaussian_mat(rows: usize, cols: usize, scale: f64, seed: u64) -> RealMat {
    let mut rng = stream(seed, 99);
    Array2::from_shape_fn((rows, cols), |_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z })
}

fn random_batch(n: usize, obs: usize, act: usize, seed: u64) -> Batch {
    let mut rng = stream(seed, 98);
    Batch {
        s: gaussian_mat(n, obs, 1.0, seed),
        a: gaussian_mat(n, act, 0.5, seed + 1).mapv(|v| v.clamp(-1.0, 1.0)),
        r_sum: Array1::from_shape_fn(n, |_| rng.random_range(0.0..2.0)),
        disc: Array1::from_elem(n, 0.99f64.powi(3)),
        s_n: gaussian_mat(n, obs, 1.0, seed + 2),
        s_next: gaussian_mat(n, obs, 1.0, seed + 3),
    }
}

/// Critic heads whose output ignores the input: `Q₁ ≡ c1`, `Q₂ ≡ c2`.
fn constant_critic(cfg: &AgentConfig, obs: usize, act: usize, c1: f64, c2: f64) -> Critic {
    let mut critic = Critic::init(cfg, obs, act, &mut stream(0, 1)).unwrap();
    for (head, c) in [(&mut critic.q1, c1), (&mut critic.q2, c2)] {
        let last = head.layers_mut().last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(c);
    }
    critic
}

fn sq_norm_rows(m: &RealMat) -> f64 {
    m.mapv(|v| v * v).sum()
}

#[test]
fn td_target_matches_hand_unrolled_three_step_sum() {
    let cfg = small_cfg();
    let mut asm = NStepAssembler::new(3, 0.99);
    let st = |x: f64| RealVec::from(vec![x, 0.0, 0.0]);
    let a = RealVec::from(vec![0.0]);
    let mut ts = Vec::new();
    for k in 0..3 {
        ts.extend(asm.push(st(k as f64), a.clone(), 1.0, st(k as f64 + 1.0), false));
    }
    assert_eq!(ts.len(), 1);
    let batch = Batch::from_transitions(&[&ts[0]]);
    let critic = constant_critic(&cfg, 3, 1, 10.0, 10.0);
    let actor = init_actor(&cfg, 3, 1, &mut stream(0, 2)).unwrap();
    let y = td_target(&critic, &actor, &batch, &cfg, 0.2, &mut stream(0, 3)).unwrap().y;
    assert!((y[0] - 12.67309).abs() < 1e-12, "{}", y[0]);
}

#[test]
fn pessimistic_and_averaged_bootstrap() {
    let mut cfg = small_cfg();
    let critic = constant_critic(&cfg, 3, 1, 0.0, 4.0);
    let actor = init_actor(&cfg, 3, 1, &mut stream(0, 2)).unwrap();
    let mut batch = random_batch(5, 3, 1, 1);
    batch.r_sum.fill(0.0);
    batch.disc.fill(1.0);
    let y = td_target(&critic, &actor, &batch, &cfg, 0.2, &mut stream(0, 3)).unwrap().y;
    assert!(y.iter().all(|&v| v == 0.0));
    cfg.asym_clip = true;
    let y = td_target(&critic, &actor, &batch, &cfg, 0.2, &mut stream(0, 3)).unwrap().y;
    assert!(y.iter().all(|&v| v == 2.0));
}

#[test]
fn terminal_window_target_is_reward_sum() {
    let cfg = small_cfg();
    let critic = Critic::init(&cfg, 3, 1, &mut stream(5, 1)).unwrap();
    let actor = init_actor(&cfg, 3, 1, &mut stream(5, 2)).unwrap();
    let mut batch = random_batch(7, 3, 1, 2);
    batch.disc.fill(0.0);
    let y = td_target(&critic, &actor, &batch, &cfg, 0.2, &mut stream(0, 3)).unwrap().y;
    assert_eq!(y, batch.r_sum);
}

#[test]
fn asym_clip_changes_targets_but_not_the_actor_step() {
    let spec = EnvSpec::by_name("reacher").unwrap();
    let seeds = RunSeeds::from_master(4);
    let base = small_cfg();
    let mut plain = Agent::new(base.clone(), spec.state_dim, spec.action_dim, &seeds).unwrap();
    let mut asym = Agent::new(AgentConfig { asym_clip: true, ..base.clone() }, spec.state_dim, spec.action_dim, &seeds).unwrap();
    let batch = random_batch(8, spec.state_dim, spec.action_dim, 3);

    let ma = plain.actor_update(&batch, 500).unwrap();
    let mb = asym.actor_update(&batch, 500).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(plain.actor, asym.actor);
    let la = actor_loss(&plain.actor, &plain.critic, &batch.s, base.penalty).unwrap();
    let lb = actor_loss(&asym.actor, &asym.critic, &batch.s, base.penalty).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());

    let yp = td_target(&plain.critic_target, &plain.actor, &batch, &plain.cfg, 0.2, &mut stream(1, 1)).unwrap();
    let ya = td_target(&asym.critic_target, &asym.actor, &batch, &asym.cfg, 0.2, &mut stream(1, 1)).unwrap();
    assert_ne!(yp.y, ya.y);
    for i in 0..8 {
        assert!(yp.y[i] <= ya.y[i]);
    }
}

#[test]
fn penalty_step_shrinks_pre_activations() {
    let spec = EnvSpec::by_name("reacher").unwrap();
    let cfg = small_cfg();
    let mut actor = init_actor(&cfg, spec.state_dim, spec.action_dim, &mut stream(2, 1)).unwrap();
    let critic = Critic::init(&cfg, spec.state_dim, spec.action_dim, &mut stream(2, 2)).unwrap();
    let s = gaussian_mat(32, spec.state_dim, 1.0, 7);
    let before = sq_norm_rows(&actor.predict(s.view()).unwrap());
    let terms = actor_terms(&actor, &critic, &s, PENALTY_LAMBDA).unwrap();
    let mut opt = AdamState::new(&actor);
    opt.step(&mut actor, &terms.penalty_path, 1e-4).unwrap();
    let after = sq_norm_rows(&actor.predict(s.view()).unwrap());
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let cfg = small_cfg();
    let actor = init_actor(&cfg, 3, 2, &mut stream(3, 1)).unwrap();
    let critic = constant_critic(&cfg, 3, 2, 0.0, 0.0);
    let s = gaussian_mat(4, 3, 1.0, 8);
    let lam = 0.37;
    let terms = actor_terms(&actor, &critic, &s, lam).unwrap();
    let fd = finite_diff_grad(|p: &MlpParams| actor_loss(p, &critic, &s, lam).unwrap(), &actor, 1e-6);
    let err = max_rel_error(&terms.penalty_path.to_flat(), &fd.to_flat(), 1e-6);
    assert!(err < 1e-4, "{err}");
    assert!(terms.q_path.norm() == 0.0);
}

#[test]
fn saturated_actor_escapes_only_through_the_penalty() {
    let spec = EnvSpec::by_name("reacher").unwrap();
    let cfg = small_cfg();
    let mut actor = init_actor(&cfg, spec.state_dim, spec.action_dim, &mut stream(6, 1)).unwrap();
    let last = actor.layers_mut().last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(10.0);
    let critic = Critic::init(&cfg, spec.state_dim, spec.action_dim, &mut stream(6, 2)).unwrap();
    let s = gaussian_mat(64, spec.state_dim, 1.0, 9);
    let a = actor.predict(s.view()).unwrap().mapv(f64::tanh);
    assert!(a.iter().all(|&v| v > 0.9999 && v < 1.0));
    let terms = actor_terms(&actor, &critic, &s, PENALTY_LAMBDA).unwrap();
    assert!(terms.q_path.norm() < 1e-6, "{}", terms.q_path.norm());
    assert!(terms.penalty_path.norm() > 0.0);
    assert!(terms.avg_abs_action > 0.9999);
}

/// Largest singular value of a 2 × n matrix from its 2 × 2 Gram matrix.
fn sigma_max_two_rows(w: &RealMat) -> f64 {
    let g = w.dot(&w.t());
    let (a, b, d) = (g[[0, 0]], g[[0, 1]], g[[1, 1]]);
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    (0.5 * (tr + disc)).sqrt()
}

#[test]
fn normalized_actor_pre_activations_are_bounded() {
    let cfg = AgentConfig { actor_pnorm: true, ..small_cfg() };
    let mut actor = init_actor(&cfg, 6, 2, &mut stream(8, 1)).unwrap();
    // exaggerate the weights so the bound is not met by accident
    for l in actor.layers_mut() {
        l.weight.mapv_inplace(|v| 40.0 * v);
        l.bias.mapv_inplace(|v| v + 3.0);
    }
    let last = actor.final_layer().clone();
    let bound = sigma_max_two_rows(&last.weight) + last.bias.mapv(|v| v * v).sum().sqrt();
    let s = gaussian_mat(10_000, 6, 1000.0, 10);
    let out = actor.predict(s.view()).unwrap();
    let worst = out.rows().into_iter().map(|r| r.mapv(|v| v * v).sum().sqrt()).fold(0.0, f64::max);
    assert!(worst <= bound * (1.0 + 1e-12), "{worst} > {bound}");
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(100, 1, 0.99);
    for k in 0..100 {
        let v = RealVec::from(vec![k as f64]);
        buf.insert(Transition { s: v.clone(), a: v.clone(), r_sum: 0.0, disc: 0.0, s_n: v.clone(), s_next: v });
    }
    let mut rng = stream(11, 1);
    let mut counts = [0usize; 100];
    for _ in 0..10_000 {
        let idx = buf.sample_indices(10, &mut rng).unwrap();
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10, "with replacement within a batch");
        for i in idx {
            counts[i] += 1;
        }
    }
    // 99 degrees of freedom, 0.001 critical value
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi2 < 148.23, "chi2 {chi2}");
}

#[test]
fn same_rng_state_gives_same_batch() {
    let mut buf = ReplayBuffer::new(50, 3, 0.99);
    for k in 0..60 {
        let v = RealVec::from(vec![k as f64, 1.0]);
        buf.push_step(v.clone(), RealVec::from(vec![0.1]), 1.0, v, k % 17 == 16);
    }
    let a = buf.sample(8, &mut stream(3, 3)).unwrap();
    let b = buf.sample(8, &mut stream(3, 3)).unwrap();
    assert_eq!(a.s, b.s);
    assert_eq!(a.r_sum, b.r_sum);
}

fn train(cfg: AgentConfig, env: &str, master: u64, steps: u64) -> (Agent, Vec<(u64, UpdateMetrics)>) {
    let spec = EnvSpec::by_name(env).unwrap();
    let mut agent = Agent::new(cfg, spec.state_dim, spec.action_dim, &RunSeeds::from_master(master)).unwrap();
    let mut session = agent.open_session(spec);
    let mut log = Vec::new();
    for step in 0..steps {
        if let Some(m) = agent.agent_step(&mut session, step).unwrap() {
            log.push((step, m));
        }
    }
    (agent, log)
}

#[test]
fn update_count_follows_the_gate() {
    let cfg = small_cfg();
    let (agent, log) = train(cfg.clone(), "pendulum_swingup", 1, 301);
    assert_eq!(agent.updates(), (301 - cfg.seed_frames) / cfg.update_every);
    assert_eq!(log.len() as u64, agent.updates());
    assert!(log.iter().all(|(s, _)| *s >= cfg.seed_frames));
}

#[test]
fn seed_phase_actions_ignore_the_actor() {
    let spec = EnvSpec::by_name("reacher").unwrap();
    let seeds = RunSeeds::from_master(3);
    let mut a = Agent::new(small_cfg(), spec.state_dim, spec.action_dim, &seeds).unwrap();
    let mut b = Agent::new(small_cfg(), spec.state_dim, spec.action_dim, &seeds).unwrap();
    b.actor.layers_mut()[0].weight.fill(3.0);
    let obs = RealVec::from(vec![0.5; spec.state_dim]);
    for step in 0..50 {
        assert_eq!(
            a.select_action(&obs, step, ActionMode::Explore).unwrap(),
            b.select_action(&obs, step, ActionMode::Explore).unwrap()
        );
    }
}

#[test]
fn nonzero_gate_blocks_updates_without_reward() {
    let cfg = AgentConfig { nz_gate: true, ..small_cfg() };
    let (agent, log) = train(cfg, "pendulum_swingup_sparse", 0, 600);
    assert!(!agent.seen_nonzero_reward());
    assert_eq!(agent.updates(), 0);
    assert!(log.is_empty());
}

#[test]
fn zero_tau_leaves_targets_untouched() {
    let cfg = AgentConfig { tau: 0.0, ..small_cfg() };
    let spec = EnvSpec::by_name("point_mass").unwrap();
    let mut agent = Agent::new(cfg, spec.state_dim, spec.action_dim, &RunSeeds::from_master(2)).unwrap();
    let before = agent.critic_target.clone();
    let batch = random_batch(8, spec.state_dim, spec.action_dim, 4);
    agent.critic_update(&batch, 200).unwrap();
    assert_eq!(agent.critic_target, before);
    assert_ne!(agent.critic, before);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let cfg = AgentConfig { feature_dim: 4, hidden_dim: 6, ..small_cfg() };
    let critic = Critic::init(&cfg, 3, 2, &mut stream(9, 1)).unwrap();
    let batch = random_batch(5, 3, 2, 6);
    let y = batch.r_sum.clone();
    let b = 5.0;
    let loss = |c: &Critic| {
        let (q1, q2) = c.q_values(batch.s.view(), &batch.a).unwrap();
        ((&q1 - &y).mapv(|v| v * v).sum() + (&q2 - &y).mapv(|v| v * v).sum()) / b
    };
    let pass = critic.forward(batch.s.view(), &batch.a).unwrap();
    let g = critic.backward(&pass, &((&pass.q1 - &y) * (2.0 / b)), &((&pass.q2 - &y) * (2.0 / b)), true).unwrap();
    let h = 1e-6;
    let fd_trunk = finite_diff_grad(|p: &MlpParams| loss(&Critic { trunk: p.clone(), ..critic.clone() }), &critic.trunk, h);
    let fd_q1 = finite_diff_grad(|p: &MlpParams| loss(&Critic { q1: p.clone(), ..critic.clone() }), &critic.q1, h);
    let fd_q2 = finite_diff_grad(|p: &MlpParams| loss(&Critic { q2: p.clone(), ..critic.clone() }), &critic.q2, h);
    for (an, fd) in [(g.trunk.unwrap(), fd_trunk), (g.q1.unwrap(), fd_q1), (g.q2.unwrap(), fd_q2)] {
        let err = max_rel_error(&an.to_flat(), &fd.to_flat(), 1e-6);
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn perfect_critic_has_zero_loss_and_gradient() {
    let cfg = small_cfg();
    let critic = constant_critic(&cfg, 3, 1, 1.5, 1.5);
    let pass = critic.forward(gaussian_mat(4, 3, 1.0, 1).view(), &gaussian_mat(4, 1, 0.3, 2)).unwrap();
    let zero = Array1::zeros(4);
    let g = critic.backward(&pass, &zero, &zero, true).unwrap();
    assert_eq!(g.trunk.unwrap().norm() + g.q1.unwrap().norm() + g.q2.unwrap().norm(), 0.0);
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = AgentConfig { actor_pnorm: true, critic_pnorm: true, penalty: PENALTY_LAMBDA, ssl_steps: 200, ..small_cfg() };
    let (a, la) = train(cfg.clone(), "reacher", 5, 260);
    let (b, lb) = train(cfg, "reacher", 5, 260);
    assert_eq!(la, lb);
    assert_eq!(a.actor.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.actor.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let (c, _) = train(small_cfg(), "reacher", 6, 260);
    assert_ne!(a.actor, c.actor);
}

#[test]
fn recorded_targets_reproduce_nonzero_fractions() {
    let spec = EnvSpec::by_name("pendulum_swingup").unwrap();
    let mut agent = Agent::new(small_cfg(), spec.state_dim, spec.action_dim, &RunSeeds::from_master(7)).unwrap();
    agent.set_record_batches(true);
    let mut session = agent.open_session(spec);
    let mut metrics = Vec::new();
    for step in 0..200 {
        if let Some(m) = agent.agent_step(&mut session, step).unwrap() {
            metrics.push(m);
        }
    }
    let rec = agent.recorded_batches();
    assert_eq!(rec.len(), metrics.len());
    for (r, m) in rec.iter().zip(&metrics) {
        let b = r.y.len() as f64;
        let fq = r.y.iter().filter(|v| v.abs() > NONZERO_TOL).count() as f64 / b;
        let fr = r.batch.r_sum.iter().filter(|&&v| v != 0.0).count() as f64 / b;
        assert_eq!((fq, fr), (m.fnz_qtarget, m.fnz_reward));
        assert_eq!(r.step, m.step);
        assert!((0.0..=1.0).contains(&m.avg_abs_action));
        assert!(m.critic_loss.is_finite() && m.delta_q >= 0.0);
    }
}

#[test]
fn eval_and_explore_actions_stay_in_range() {
    let spec = EnvSpec::by_name("reacher").unwrap();
    let mut agent = Agent::new(AgentConfig { seed_frames: 0, ..small_cfg() }, spec.state_dim, spec.action_dim, &RunSeeds::from_master(1)).unwrap();
    for l in agent.actor.layers_mut() {
        l.weight.mapv_inplace(|v| 30.0 * v);
    }
    for k in 0..200u64 {
        let obs = RealVec::from_shape_fn(spec.state_dim, |i| ((k as usize * 7 + i) as f64).sin() * 3.0);
        let e = agent.select_action(&obs, k, ActionMode::Eval).unwrap();
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        let x = agent.select_action(&obs, k, ActionMode::Explore).unwrap();
        assert!(x.iter().all(|v| v.abs() <= 1.0));
    }
    let mut pol = ActorPolicy(&agent.actor);
    let obs = RealVec::zeros(spec.state_dim);
    let (a_pre, _) = agent.actor.forward(&obs).unwrap();
    assert_eq!(pol.act(&obs).unwrap(), a_pre.mapv(f64::tanh));
}

proptest! {
    #[test]
    fn min_bootstrap_never_exceeds_average(q1 in -1e6f64..1e6, q2 in -1e6f64..1e6) {
        prop_assert!(bootstrap_value(q1, q2, false) <= bootstrap_value(q1, q2, true));
    }

    #[test]
    fn normalized_distance_lies_in_zero_four(seed in 0u64..10_000, rows in 1usize..8) {
        let a = gaussian_mat(rows, 5, 2.0, seed);
        let b = gaussian_mat(rows, 5, 0.1, seed + 1);
        let d = normalized_sq_distance(&a, &b);
        prop_assert!((0.0..=4.0 + 1e-12).contains(&d));
    }

    #[test]
    fn explore_clamps(sigma in 0.0f64..5.0, seed in 0u64..1000) {
        let a = RealVec::from(vec![0.99, -0.99, 0.0]);
        let x = explore(&a, sigma, &mut stream(seed, 0));
        prop_assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn target_gap_shrinks_geometrically() {
    let cfg = small_cfg();
    let online = Critic::init(&cfg, 4, 2, &mut stream(12, 1)).unwrap();
    let mut target = Critic::init(&cfg, 4, 2, &mut stream(12, 2)).unwrap();
    let gap = |t: &Critic| {
        let d: f64 = [(&t.trunk, &online.trunk), (&t.q1, &online.q1), (&t.q2, &online.q2)]
            .iter()
            .flat_map(|(a, b)| a.to_flat().into_iter().zip(b.to_flat()).map(|(x, y)| (x - y) * (x - y)).collect::<Vec<_>>())
            .sum();
        d.sqrt()
    };
    let g0 = gap(&target);
    let tau = cfg.tau;
    for k in 1..=50 {
        soft_update(&mut target.trunk, &online.trunk, tau).unwrap();
        soft_update(&mut target.q1, &online.q1, tau).unwrap();
        soft_update(&mut target.q2, &online.q2, tau).unwrap();
        let want = g0 * (1.0 - tau).powi(k);
        assert!((gap(&target) - want).abs() <= 1e-10 * g0, "k={k}");
    }
}
