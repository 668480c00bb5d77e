use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffmath::{LinearSchedule, PenultMode};
use crate::{Error, Result};

/// Pre-tanh penalty weight used by the `penalty` preset.
pub const PENALTY_LAMBDA: f64 = 1e-6;

/// Every hyperparameter and stabilization switch of the learner.
///
/// `Default` reproduces the standard DrQ-v2 medium-task table (learning rate
/// 1e-4, τ = 0.01, update every 2 steps, exploration σ linear(1.0, 0.1,
/// 500 000), target-noise clip 0.3, batch 256, 3-step returns, γ = 0.99,
/// 4 000 seed steps) with every fix switched off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub lr: f64,
    pub tau: f64,
    pub update_every: u64,
    pub gamma: f64,
    pub n_step: usize,
    pub batch: usize,
    pub seed_frames: u64,
    pub noise_sched: LinearSchedule,
    pub noise_clip: f64,

    pub actor_pnorm: bool,
    pub critic_pnorm: bool,
    pub layer_norm: bool,
    pub spectral: bool,
    pub output_norm: bool,
    /// λ of the `λ‖a_pre‖²` actor penalty; 0 disables it.
    pub penalty: f64,
    /// Linear lr warmup length in steps after training starts; 0 disables it.
    pub warmup_steps: u64,
    pub grad_clip: Option<f64>,
    pub scale_down: Option<f64>,
    /// Average instead of min of the twin target critics in the TD target.
    pub asym_clip: bool,
    /// Withhold updates until a non-zero reward has been stored.
    pub nz_gate: bool,
    /// Self-supervised auxiliary loss is active while `step < ssl_steps`.
    pub ssl_steps: u64,

    /// Use a Polyak-averaged actor (instead of the online actor) for the TD target action.
    pub target_actor: bool,
    pub spectral_iters: usize,
    pub ssl_view_noise: f64,
    pub replay_capacity: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub ssl_hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            tau: 1e-2,
            update_every: 2,
            gamma: 0.99,
            n_step: 3,
            batch: 256,
            seed_frames: 4000,
            noise_sched: LinearSchedule { start: 1.0, end: 0.1, duration: 500_000 },
            noise_clip: 0.3,
            actor_pnorm: false,
            critic_pnorm: false,
            layer_norm: false,
            spectral: false,
            output_norm: false,
            penalty: 0.0,
            warmup_steps: 0,
            grad_clip: None,
            scale_down: None,
            asym_clip: false,
            nz_gate: false,
            ssl_steps: 0,
            target_actor: false,
            spectral_iters: 1,
            ssl_view_noise: 0.01,
            replay_capacity: 100_000,
            feature_dim: 50,
            hidden_dim: 256,
            hidden_layers: 2,
            ssl_hidden: 512,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr >= 0.0) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must be in [0,1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0,1], got {}", self.gamma));
        }
        if self.update_every == 0 || self.n_step == 0 || self.batch == 0 {
            return bad("update_every, n_step and batch must be >= 1".into());
        }
        if self.noise_sched.duration == 0 {
            return bad("noise_sched.duration must be > 0".into());
        }
        if !(self.penalty >= 0.0) {
            return bad(format!("penalty must be >= 0, got {}", self.penalty));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        if let Some(f) = self.scale_down {
            if !(f > 0.0) {
                return bad(format!("scale_down must be > 0, got {f}"));
            }
        }
        if self.spectral_iters == 0 {
            return bad("spectral_iters must be >= 1".into());
        }
        if self.feature_dim < 2 || self.hidden_dim < 2 || self.ssl_hidden == 0 {
            return bad("network widths must be >= 2".into());
        }
        if self.hidden_layers == 0 && (self.spectral || self.layer_norm) {
            return bad("spectral / layer norm need at least one hidden layer".into());
        }
        if self.replay_capacity < self.batch {
            return bad("replay_capacity must be >= batch".into());
        }
        self.actor_penult()?;
        self.critic_penult()?;
        Ok(())
    }

    fn pick(pnorm: bool, layer_norm: bool, spectral: bool, who: &str) -> Result<PenultMode> {
        match (pnorm, layer_norm, spectral) {
            (false, false, false) => Ok(PenultMode::None),
            (true, false, false) => Ok(PenultMode::Pnorm),
            (false, true, false) => Ok(PenultMode::LayerNorm),
            (false, false, true) => Ok(PenultMode::Spectral),
            _ => Err(Error::Config(format!("{who}: pnorm, layer_norm and spectral are mutually exclusive"))),
        }
    }

    pub fn actor_penult(&self) -> Result<PenultMode> {
        Self::pick(self.actor_pnorm, self.layer_norm, self.spectral, "actor")
    }

    pub fn critic_penult(&self) -> Result<PenultMode> {
        Self::pick(self.critic_pnorm, self.layer_norm, self.spectral, "critic")
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
