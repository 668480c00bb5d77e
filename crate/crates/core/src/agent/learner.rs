//! The actor / twin-critic learner and its update rules.

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::AgentConfig;
use super::nets::{avg_q, init_actor, min_q, zeros, Critic};
use super::replay::{Batch, ReplayBuffer};
use super::ssl::{ssl_update_terms, SslHeads};
use crate::diffmath::{clip_grad_norm, clip_grad_norm_joint, soft_update, AdamState, GradBuffer, LinearSchedule, MlpParams, RealMat, RealVec};
use crate::envworld::{EnvSession, Policy};
use crate::rng::{stream, RunSeeds, StreamRng};
use crate::{Error, Result};

/// Threshold below which a TD target counts as zero.
pub const NONZERO_TOL: f64 = 1e-3;

/// Diagnostics of one training update (critic + actor).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub step: u64,
    /// Global gradient norm of the actor before clipping.
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub critic_loss: f64,
    /// Mean `|tanh(a_pre)|` over the batch, in `[0, 1]`.
    pub avg_abs_action: f64,
    /// Mean `min(Q₁, Q₂)` of the policy action.
    pub avg_q: f64,
    /// Mean `|Q(s,a)_after − Q(s,a)_before|` across the critic step.
    pub delta_q: f64,
    pub fnz_qtarget: f64,
    pub fnz_reward: f64,
    pub ssl_loss: f64,
    /// Rows whose normalization denominators hit the floor.
    pub clamped_rows: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Explore,
    Eval,
}

/// TD target and the twin bootstrap values it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct TdTarget {
    pub y: RealVec,
    pub q1: RealVec,
    pub q2: RealVec,
}

/// `min(Q₁, Q₂)`, or `avg(Q₁, Q₂)` under asymmetric clipping.
pub fn bootstrap_value(q1: f64, q2: f64, asym_clip: bool) -> f64 {
    if asym_clip {
        0.5 * (q1 + q2)
    } else {
        q1.min(q2)
    }
}

/// `y = r_sum + disc · Q̂(s_n, ã)` with `ã = clamp(tanh(actor(s_n)) + clip(ε), −1, 1)`.
pub fn td_target<R: Rng + ?Sized>(
    critic_target: &Critic,
    actor: &MlpParams,
    batch: &Batch,
    cfg: &AgentConfig,
    sigma: f64,
    rng: &mut R,
) -> Result<TdTarget> {
    let a_pre = actor.predict(batch.s_n.view())?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let clip = cfg.noise_clip;
    let next_a = a_pre.mapv(|v| (v.tanh() + noise.sample(rng).clamp(-clip, clip)).clamp(-1.0, 1.0));
    let (q1, q2) = critic_target.q_values(batch.s_n.view(), &next_a)?;
    let boot = if cfg.asym_clip { avg_q(&q1, &q2) } else { min_q(&q1, &q2) };
    let y = &batch.r_sum + &(&batch.disc * &boot);
    Ok(TdTarget { y, q1, q2 })
}

/// Actor objective `mean(−min(Q₁,Q₂)(s, tanh(a_pre)) + λ‖a_pre‖²)` and its
/// gradient split into the Q path and the penalty path.
#[derive(Clone, Debug)]
pub struct ActorTerms {
    pub loss: f64,
    pub q_path: GradBuffer,
    pub penalty_path: GradBuffer,
    pub avg_abs_action: f64,
    pub avg_q: f64,
    pub clamped_rows: u64,
}

pub fn actor_terms(actor: &MlpParams, critic: &Critic, s: &RealMat, penalty: f64) -> Result<ActorTerms> {
    let (loss, q_path, penalty_path, stats) = actor_pass(actor, critic, s, penalty, true)?;
    Ok(ActorTerms {
        loss,
        q_path,
        penalty_path: penalty_path.expect("split requested"),
        avg_abs_action: stats.0,
        avg_q: stats.1,
        clamped_rows: stats.2,
    })
}

/// Actor loss only, for contract checks.
pub fn actor_loss(actor: &MlpParams, critic: &Critic, s: &RealMat, penalty: f64) -> Result<f64> {
    let a_pre = actor.predict(s.view())?;
    let a = a_pre.mapv(f64::tanh);
    let (q1, q2) = critic.q_values(s.view(), &a)?;
    Ok(actor_objective(&min_q(&q1, &q2), &a_pre, penalty))
}

fn actor_objective(q: &RealVec, a_pre: &RealMat, penalty: f64) -> f64 {
    let b = q.len() as f64;
    let sq: f64 = a_pre.mapv(|v| v * v).sum();
    (-q.sum() + penalty * sq) / b
}

#[allow(clippy::type_complexity)]
fn actor_pass(
    actor: &MlpParams,
    critic: &Critic,
    s: &RealMat,
    penalty: f64,
    split: bool,
) -> Result<(f64, GradBuffer, Option<GradBuffer>, (f64, f64, u64))> {
    let tape = actor.forward_batch(s.view())?;
    let a_pre = tape.output().clone();
    if !a_pre.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("actor pre-activation in actor update".into()));
    }
    let a = a_pre.mapv(f64::tanh);
    let pass = critic.forward(s.view(), &a)?;
    let q = min_q(&pass.q1, &pass.q2);
    let b = q.len() as f64;
    let loss = actor_objective(&q, &a_pre, penalty);
    let (mut dq1, mut dq2) = (zeros(q.len()), zeros(q.len()));
    for i in 0..q.len() {
        if pass.q1[i] <= pass.q2[i] {
            dq1[i] = -1.0 / b;
        } else {
            dq2[i] = -1.0 / b;
        }
    }
    let da = critic.backward(&pass, &dq1, &dq2, false)?.action;
    let mut d_q = da;
    Zip::from(&mut d_q).and(&a).for_each(|g, &t| *g *= 1.0 - t * t);
    let d_pen = &a_pre * (2.0 * penalty / b);
    let (q_path, pen_path) = if split {
        let (gq, _) = actor.backward_batch(&tape, &d_q)?;
        let (gp, _) = actor.backward_batch(&tape, &d_pen)?;
        (gq, Some(gp))
    } else {
        let (g, _) = actor.backward_batch(&tape, &(d_q + &d_pen))?;
        (g, None)
    };
    let avg_abs = a.mapv(f64::abs).mean().unwrap_or(0.0);
    let avg_q = q.mean().unwrap_or(0.0);
    Ok((loss, q_path, pen_path, (avg_abs, avg_q, tape.clamped_rows as u64)))
}

/// A snapshot of one training batch and the TD targets computed for it.
#[derive(Clone, Debug)]
pub struct RecordedBatch {
    pub step: u64,
    pub batch: Batch,
    pub y: RealVec,
}

/// Evaluation policy `tanh(actor(s))`.
#[derive(Clone, Copy, Debug)]
pub struct ActorPolicy<'a>(pub &'a MlpParams);

impl Policy for ActorPolicy<'_> {
    fn act(&mut self, obs: &RealVec) -> Result<RealVec> {
        let (a_pre, _) = self.0.forward(obs)?;
        check_action(&a_pre, obs)?;
        Ok(a_pre.mapv(f64::tanh))
    }

    fn act_batch(&mut self, obs: &RealMat) -> Result<RealMat> {
        let a_pre = self.0.predict(obs.view())?;
        if !a_pre.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("actor output during evaluation".into()));
        }
        Ok(a_pre.mapv(f64::tanh))
    }
}

fn check_action(a_pre: &RealVec, obs: &RealVec) -> Result<()> {
    if a_pre.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("actor output {a_pre} for observation {obs}")))
    }
}

/// Uniform action in `[−1, 1]^n`.
pub fn uniform_action<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RealVec {
    Array1::from_shape_fn(n, |_| rng.random_range(-1.0..=1.0))
}

/// Actor, twin critics, their targets, optional SSL head, replay and
/// per-run random streams.
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: MlpParams,
    pub actor_target: Option<MlpParams>,
    pub critic: Critic,
    pub critic_target: Critic,
    pub ssl: Option<SslHeads>,
    actor_opt: AdamState,
    critic_opts: [AdamState; 3],
    ssl_opt: Option<AdamState>,
    pub replay: ReplayBuffer,
    seed_rng: StreamRng,
    env_rng: StreamRng,
    noise_rng: StreamRng,
    sampling_rng: StreamRng,
    seen_nonzero_reward: bool,
    updates: u64,
    record_batches: bool,
    recorded: Vec<RecordedBatch>,
}

impl Agent {
    pub fn new(cfg: AgentConfig, obs_dim: usize, act_dim: usize, seeds: &RunSeeds) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = stream(seeds.init, 1);
        let actor = init_actor(&cfg, obs_dim, act_dim, &mut init_rng)?;
        let critic = Critic::init(&cfg, obs_dim, act_dim, &mut init_rng)?;
        let ssl = if cfg.ssl_steps > 0 { Some(SslHeads::init(cfg.feature_dim, cfg.ssl_hidden, &mut init_rng)?) } else { None };
        let critic_opts = [AdamState::new(&critic.trunk), AdamState::new(&critic.q1), AdamState::new(&critic.q2)];
        Ok(Self {
            actor_opt: AdamState::new(&actor),
            ssl_opt: ssl.as_ref().map(|h| AdamState::new(&h.head)),
            actor_target: cfg.target_actor.then(|| actor.clone()),
            critic_target: critic.clone(),
            replay: ReplayBuffer::new(cfg.replay_capacity, cfg.n_step, cfg.gamma),
            seed_rng: stream(seeds.seed_phase, 2),
            env_rng: stream(seeds.env, 3),
            noise_rng: stream(seeds.noise, 4),
            sampling_rng: stream(seeds.sampling, 5),
            cfg,
            obs_dim,
            act_dim,
            actor,
            critic,
            ssl,
            critic_opts,
            seen_nonzero_reward: false,
            updates: 0,
            record_batches: false,
            recorded: Vec::new(),
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn seen_nonzero_reward(&self) -> bool {
        self.seen_nonzero_reward
    }

    /// Keep a copy of every training batch and its TD targets.
    pub fn set_record_batches(&mut self, on: bool) {
        self.record_batches = on;
    }

    pub fn recorded_batches(&self) -> &[RecordedBatch] {
        &self.recorded
    }

    /// Opens the first episode. Its reset seed comes from the seed-phase
    /// stream whenever there is a seed phase.
    pub fn open_session(&mut self, spec: crate::envworld::EnvSpec) -> EnvSession {
        let seed = if self.cfg.seed_frames > 0 { self.seed_rng.random() } else { self.env_rng.random() };
        EnvSession::new(spec, seed)
    }

    /// Exploration noise scale at `step`.
    pub fn noise_sigma(&self, step: u64) -> f64 {
        self.cfg.noise_sched.value(step)
    }

    /// Learning-rate multiplier from the warmup schedule, counted from the
    /// first training step.
    pub fn lr_multiplier(&self, step: u64) -> f64 {
        if self.cfg.warmup_steps == 0 {
            return 1.0;
        }
        LinearSchedule { start: 0.0, end: 1.0, duration: self.cfg.warmup_steps }.value(step.saturating_sub(self.cfg.seed_frames))
    }

    pub fn select_action(&mut self, obs: &RealVec, step: u64, mode: ActionMode) -> Result<RealVec> {
        if mode == ActionMode::Explore && step < self.cfg.seed_frames {
            return Ok(uniform_action(self.act_dim, &mut self.seed_rng));
        }
        let (a_pre, _) = self.actor.forward(obs)?;
        check_action(&a_pre, obs)?;
        let a = a_pre.mapv(f64::tanh);
        match mode {
            ActionMode::Eval => Ok(a),
            ActionMode::Explore => Ok(explore(&a, self.noise_sigma(step), &mut self.noise_rng)),
        }
    }

    /// Whether a training update runs after the `completed`-th environment step.
    pub fn training_gate(&self, completed: u64) -> bool {
        completed > self.cfg.seed_frames
            && completed % self.cfg.update_every == 0
            && (!self.cfg.nz_gate || self.seen_nonzero_reward)
            && self.replay.len() >= self.cfg.batch
    }

    /// Acts once in `env`, stores the transition and trains when the gate is open.
    pub fn agent_step(&mut self, env: &mut EnvSession, step: u64) -> Result<Option<UpdateMetrics>> {
        let obs = env.observation().clone();
        let action = self.select_action(&obs, step, ActionMode::Explore)?;
        let res = env.step(action.as_slice().expect("contiguous"))?;
        if res.reward != 0.0 {
            self.seen_nonzero_reward = true;
        }
        self.replay.push_step(obs, action, res.reward, env.observation().clone(), res.done);
        if res.done {
            let seed = if step < self.cfg.seed_frames { self.seed_rng.random() } else { self.env_rng.random() };
            env.reset(seed);
        }
        if self.training_gate(step + 1) {
            return self.update(step).map(Some);
        }
        Ok(None)
    }

    /// One critic update followed by one actor update on the same batch.
    pub fn update(&mut self, step: u64) -> Result<UpdateMetrics> {
        if self.cfg.spectral {
            self.actor.refresh_spectral(self.cfg.spectral_iters)?;
            self.critic.refresh_spectral(self.cfg.spectral_iters)?;
        }
        let batch = self.replay.sample(self.cfg.batch, &mut self.sampling_rng)?;
        let mut m = self.critic_update(&batch, step)?;
        let actor = self.actor_update(&batch, step)?;
        m.actor_grad_norm = actor.actor_grad_norm;
        m.avg_abs_action = actor.avg_abs_action;
        m.avg_q = actor.avg_q;
        m.clamped_rows += actor.clamped_rows;
        self.updates += 1;
        Ok(m)
    }

    /// Critic step on `batch`: squared TD error of both critics (plus the
    /// auxiliary loss while active), optional clipping, Adam, target averaging.
    pub fn critic_update(&mut self, batch: &Batch, step: u64) -> Result<UpdateMetrics> {
        let cfg = &self.cfg;
        let sigma = cfg.noise_sched.value(step);
        let lr = cfg.lr * self.lr_multiplier(step);
        let target_actor = self.actor_target.as_ref().unwrap_or(&self.actor);
        let tgt = td_target(&self.critic_target, target_actor, batch, cfg, sigma, &mut self.noise_rng)?;
        let pass = self.critic.forward(batch.s.view(), &batch.a)?;
        let b = batch.len() as f64;
        let d1 = &pass.q1 - &tgt.y;
        let d2 = &pass.q2 - &tgt.y;
        let critic_loss = (d1.mapv(|v| v * v).sum() + d2.mapv(|v| v * v).sum()) / b;
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at step {step}")));
        }
        let grads = self.critic.backward(&pass, &(d1 * (2.0 / b)), &(d2 * (2.0 / b)), true)?;
        let mut g_trunk = grads.trunk.expect("params requested");
        let mut g_q1 = grads.q1.expect("params requested");
        let mut g_q2 = grads.q2.expect("params requested");

        let mut ssl_loss = 0.0;
        let mut g_head = None;
        if let (Some(heads), true) = (&self.ssl, step < cfg.ssl_steps) {
            let terms = ssl_update_terms(&self.critic.trunk, &self.critic_target.trunk, heads, &batch.s, &batch.s_next, cfg.ssl_view_noise, &mut self.noise_rng)?;
            ssl_loss = terms.loss;
            g_trunk.add_assign(&terms.trunk_grad)?;
            g_head = Some(terms.head_grad);
        }
        let critic_grad_norm = match cfg.grad_clip {
            Some(c) => {
                if let Some(h) = g_head.as_mut() {
                    clip_grad_norm(h, c);
                }
                clip_grad_norm_joint(&mut [&mut g_trunk, &mut g_q1, &mut g_q2], c)
            }
            None => (g_trunk.sq_norm() + g_q1.sq_norm() + g_q2.sq_norm()).sqrt(),
        };
        self.critic_opts[0].step(&mut self.critic.trunk, &g_trunk, lr)?;
        self.critic_opts[1].step(&mut self.critic.q1, &g_q1, lr)?;
        self.critic_opts[2].step(&mut self.critic.q2, &g_q2, lr)?;
        if let (Some(h), Some(heads), Some(opt)) = (g_head, self.ssl.as_mut(), self.ssl_opt.as_mut()) {
            opt.step(&mut heads.head, &h, lr)?;
        }

        let (q1_after, q2_after) = self.critic.q_values(batch.s.view(), &batch.a)?;
        let delta_q = ((&q1_after - &pass.q1).mapv(f64::abs).sum() + (&q2_after - &pass.q2).mapv(f64::abs).sum()) / (2.0 * b);

        let tau = cfg.tau;
        soft_update(&mut self.critic_target.trunk, &self.critic.trunk, tau)?;
        soft_update(&mut self.critic_target.q1, &self.critic.q1, tau)?;
        soft_update(&mut self.critic_target.q2, &self.critic.q2, tau)?;

        let fnz_qtarget = tgt.y.iter().filter(|v| v.abs() > NONZERO_TOL).count() as f64 / b;
        let fnz_reward = batch.r_sum.iter().filter(|&&v| v != 0.0).count() as f64 / b;
        if self.record_batches {
            self.recorded.push(RecordedBatch { step, batch: batch.clone(), y: tgt.y.clone() });
        }
        Ok(UpdateMetrics {
            step,
            critic_loss,
            critic_grad_norm,
            delta_q,
            fnz_qtarget,
            fnz_reward,
            ssl_loss,
            ..Default::default()
        })
    }

    /// Actor step on `batch` through the frozen critics.
    pub fn actor_update(&mut self, batch: &Batch, step: u64) -> Result<UpdateMetrics> {
        let lr = self.cfg.lr * self.lr_multiplier(step);
        let (loss, mut grads, _, (avg_abs_action, avg_q, clamped)) = actor_pass(&self.actor, &self.critic, &batch.s, self.cfg.penalty, false)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss at step {step}")));
        }
        let actor_grad_norm = match self.cfg.grad_clip {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => grads.norm(),
        };
        self.actor_opt.step(&mut self.actor, &grads, lr)?;
        if let Some(t) = self.actor_target.as_mut() {
            soft_update(t, &self.actor, self.cfg.tau)?;
        }
        Ok(UpdateMetrics { step, actor_grad_norm, avg_abs_action, avg_q, clamped_rows: clamped, ..Default::default() })
    }
}

/// `clamp(a + N(0, σ²), −1, 1)`.
pub fn explore<R: Rng + ?Sized>(a: &RealVec, sigma: f64, rng: &mut R) -> RealVec {
    if sigma == 0.0 {
        return a.clone();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    a.mapv(|v| (v + n.sample(rng)).clamp(-1.0, 1.0))
}

/// Batch of observations stacked as rows.
pub fn stack_rows(rows: &[RealVec]) -> RealMat {
    let n = rows.first().map_or(0, |r| r.len());
    let mut m = Array2::zeros((rows.len(), n));
    for (mut dst, r) in m.rows_mut().into_iter().zip(rows) {
        dst.assign(r);
    }
    m
}
