//! Deterministic toy continuous-control tasks.
//!
//! Every task has the action space `[−1, 1]^n`, a fixed episode length with no
//! early termination, and an action repeat: one control step applies the same
//! action for `action_repeat` physics ticks and sums their rewards. Per-tick
//! rewards lie in `[0, 1]`; sparse variants emit exactly 0 or 1 per tick.
//!
//! Roster:
//!
//! | name                      | physical state        | reward |
//! |---------------------------|-----------------------|--------|
//! | `pendulum_swingup`        | θ, θ̇ (θ = 0 upright)  | (1 + cos θ)/2 |
//! | `pendulum_swingup_sparse` | θ, θ̇                  | 1 iff \|θ\| < 0.15 and \|θ̇\| < 1 |
//! | `reacher`                 | q₁, q₂, q̇₁, q̇₂, target | 1 − tanh(2d) |
//! | `reacher_sparse`          | same                  | 1 iff d < 0.1 |
//! | `point_mass`              | x, y, ẋ, ẏ            | 1 − tanh(2‖p‖) |

mod physics;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{RealMat, RealVec};
use crate::rng::stream;
use crate::{Error, Result};

pub use physics::{pendulum_energy, pendulum_shadow_energy, PhysicsConstants};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    Reacher,
    PointMass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Dense,
    Sparse,
}

/// Static description of a task.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    /// Observation width.
    pub state_dim: usize,
    pub action_dim: usize,
    /// Episode length in physics ticks.
    pub episode_len: usize,
    pub action_repeat: usize,
    pub reward_kind: RewardKind,
    pub physics: PhysicsConstants,
}

pub const ENV_NAMES: [&str; 5] = ["pendulum_swingup", "pendulum_swingup_sparse", "reacher", "reacher_sparse", "point_mass"];

/// Half-width of the uniform perturbation of the hanging pendulum at reset.
pub const PENDULUM_RESET_SPREAD: f64 = 0.2;

impl EnvSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        let (kind, reward_kind, state_dim, action_dim) = match name {
            "pendulum_swingup" => (EnvKind::Pendulum, RewardKind::Dense, 3, 1),
            "pendulum_swingup_sparse" => (EnvKind::Pendulum, RewardKind::Sparse, 3, 1),
            "reacher" => (EnvKind::Reacher, RewardKind::Dense, 8, 2),
            "reacher_sparse" => (EnvKind::Reacher, RewardKind::Sparse, 8, 2),
            "point_mass" => (EnvKind::PointMass, RewardKind::Dense, 4, 2),
            _ => return Err(Error::UnknownEnv(name.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            kind,
            state_dim,
            action_dim,
            episode_len: 400,
            action_repeat: 2,
            reward_kind,
            physics: PhysicsConstants::default(),
        })
    }

    /// Control steps per episode.
    pub fn control_steps(&self) -> usize {
        self.episode_len / self.action_repeat
    }
}

/// Physical state plus the physics-tick counter.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub physical: Vec<f64>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Deterministic initial state for `seed`.
pub fn env_reset(spec: &EnvSpec, seed: u64) -> EnvState {
    let mut rng = stream(seed, 0x5E7);
    let physical = match spec.kind {
        EnvKind::Pendulum => {
            let off = rng.random_range(-PENDULUM_RESET_SPREAD..PENDULUM_RESET_SPREAD);
            vec![physics::wrap_angle(std::f64::consts::PI + off), 0.0]
        }
        EnvKind::Reacher => {
            let q1 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let q2 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let rad = rng.random_range(0.2..0.9);
            vec![q1, q2, 0.0, 0.0, rad * ang.cos(), rad * ang.sin()]
        }
        EnvKind::PointMass => {
            let x = rng.random_range(-0.8..0.8);
            let y = rng.random_range(-0.8..0.8);
            vec![x, y, 0.0, 0.0]
        }
    };
    EnvState { physical, t: 0 }
}

/// Observation vector seen by the agent.
pub fn observe(spec: &EnvSpec, state: &EnvState) -> RealVec {
    let p = &state.physical;
    let obs = match spec.kind {
        EnvKind::Pendulum => vec![p[0].cos(), p[0].sin(), p[1] / spec.physics.max_speed],
        EnvKind::Reacher => {
            let (fx, fy) = physics::fingertip(&spec.physics, p[0], p[1]);
            vec![p[0].cos(), p[0].sin(), p[1].cos(), p[1].sin(), p[2] / spec.physics.max_speed, p[3] / spec.physics.max_speed, p[4] - fx, p[5] - fy]
        }
        EnvKind::PointMass => p.clone(),
    };
    Array1::from(obs)
}

/// Applies `action` for `action_repeat` physics ticks and sums the rewards.
pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<StepResult> {
    if action.len() != spec.action_dim {
        return Err(Error::Shape(format!("{} expects {} action dims, got {}", spec.name, spec.action_dim, action.len())));
    }
    if let Some(a) = action.iter().find(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("action ({a})")));
    }
    if state.t >= spec.episode_len {
        return Err(Error::InvalidArgument("episode already finished; reset first".into()));
    }
    let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    let mut next = state.clone();
    let mut reward = 0.0;
    for _ in 0..spec.action_repeat {
        if next.t >= spec.episode_len {
            break;
        }
        physics::tick(spec.kind, &spec.physics, &mut next.physical, &clamped);
        next.t += 1;
        reward += physics::tick_reward(spec.kind, spec.reward_kind, &spec.physics, &next.physical);
    }
    let done = next.t >= spec.episode_len;
    Ok(StepResult { next, reward, done })
}

/// Anything that maps observations to actions.
pub trait Policy {
    fn act(&mut self, obs: &RealVec) -> Result<RealVec>;

    /// Acts on a batch of observations (rows). Defaults to row-by-row.
    fn act_batch(&mut self, obs: &RealMat) -> Result<RealMat> {
        let rows = obs.rows().into_iter().map(|r| self.act(&r.to_owned())).collect::<Result<Vec<_>>>()?;
        let n = rows.first().map_or(0, |r| r.len());
        let mut out = Array2::zeros((obs.nrows(), n));
        for (mut dst, r) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&r);
        }
        Ok(out)
    }
}

impl<F: FnMut(&RealVec) -> RealVec> Policy for F {
    fn act(&mut self, obs: &RealVec) -> Result<RealVec> {
        Ok(self(obs))
    }
}

/// One control step of a recorded trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub obs: RealVec,
    pub action: RealVec,
    pub reward: f64,
    pub next_obs: RealVec,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub total_reward: f64,
}

/// Runs one episode (or `max_steps` control steps) from `env_reset(spec, seed)`.
pub fn rollout<P: Policy + ?Sized>(spec: &EnvSpec, policy: &mut P, seed: u64, max_steps: usize) -> Result<Rollout> {
    let mut state = env_reset(spec, seed);
    let mut steps = Vec::new();
    let mut total_reward = 0.0;
    for _ in 0..max_steps {
        let obs = observe(spec, &state);
        let action = policy.act(&obs)?;
        let res = env_step(spec, &state, action.as_slice().expect("contiguous action"))?;
        total_reward += res.reward;
        let next_obs = observe(spec, &res.next);
        steps.push(RolloutStep { obs, action, reward: res.reward, next_obs, done: res.done });
        state = res.next;
        if res.done {
            break;
        }
    }
    Ok(Rollout { steps, total_reward })
}

/// Runs one full episode per seed in lockstep and returns the undiscounted
/// returns. Equivalent to calling [`rollout`] per seed with a policy whose
/// action depends only on the observation.
pub fn evaluate_lockstep<P: Policy + ?Sized>(spec: &EnvSpec, policy: &mut P, seeds: &[u64]) -> Result<Vec<f64>> {
    let mut states: Vec<EnvState> = seeds.iter().map(|&s| env_reset(spec, s)).collect();
    let mut returns = vec![0.0; seeds.len()];
    if seeds.is_empty() {
        return Ok(returns);
    }
    for _ in 0..spec.control_steps() {
        let mut obs = Array2::zeros((states.len(), spec.state_dim));
        for (mut row, s) in obs.rows_mut().into_iter().zip(&states) {
            row.assign(&observe(spec, s));
        }
        let actions = policy.act_batch(&obs)?;
        for ((state, ret), a) in states.iter_mut().zip(returns.iter_mut()).zip(actions.rows()) {
            let res = env_step(spec, state, a.as_slice().expect("contiguous action"))?;
            *ret += res.reward;
            *state = res.next;
        }
    }
    Ok(returns)
}

/// A live episode with automatic bookkeeping, used by the training loop.
#[derive(Clone, Debug)]
pub struct EnvSession {
    pub spec: EnvSpec,
    state: EnvState,
    obs: RealVec,
}

impl EnvSession {
    pub fn new(spec: EnvSpec, seed: u64) -> Self {
        let state = env_reset(&spec, seed);
        let obs = observe(&spec, &state);
        Self { spec, state, obs }
    }

    pub fn observation(&self) -> &RealVec {
        &self.obs
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let res = env_step(&self.spec, &self.state, action)?;
        self.state = res.next.clone();
        self.obs = observe(&self.spec, &self.state);
        Ok(res)
    }

    pub fn reset(&mut self, seed: u64) {
        self.state = env_reset(&self.spec, seed);
        self.obs = observe(&self.spec, &self.state);
    }
}
