//! Experiment configuration files and method presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::agent::{AgentConfig, PENALTY_LAMBDA};
use crate::bench::RunOptions;
use crate::diffmath::LinearSchedule;
use crate::envworld::EnvSpec;
use crate::{Error, Result};

/// Steps of lr warmup at desk scale.
pub const DESK_WARMUP_STEPS: u64 = 2_000;
/// Steps of the self-supervised loss in the `combined` preset at desk scale.
pub const DESK_SSL_STEPS: u64 = 5_000;
/// Exploration noise decay length at desk scale.
pub const DESK_NOISE_STEPS: u64 = 25_000;
/// Default network width and batch size at desk scale.
pub const DESK_WIDTH: usize = 64;

const DESK_NOTE: &str = "desk scale: step budget, noise decay, warmup and ssl length are the full-scale values divided by 20; \
                         hidden width and batch are 64";

/// Agent defaults for desk-scale experiments.
pub fn desk_agent() -> AgentConfig {
    AgentConfig {
        noise_sched: LinearSchedule { start: 1.0, end: 0.1, duration: DESK_NOISE_STEPS },
        hidden_dim: DESK_WIDTH,
        batch: DESK_WIDTH,
        ..AgentConfig::default()
    }
}

/// Either an explicit seed list or a count `n` meaning seeds `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

fn default_total_steps() -> u64 {
    50_000
}
fn default_eval_every() -> u64 {
    1_000
}
fn default_eval_episodes() -> usize {
    10
}
fn default_seeds() -> Seeds {
    Seeds::Count(20)
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_stuck_floor() -> f64 {
    20.0
}
fn default_note() -> String {
    DESK_NOTE.to_string()
}

/// The agent block is overlaid on [`desk_agent`], so omitted keys take desk
/// values instead of full-scale ones.
fn agent_over_desk<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<AgentConfig, D::Error> {
    let given = Value::deserialize(d)?;
    let Value::Object(given) = given else {
        return Err(serde::de::Error::custom("agent must be an object"));
    };
    let mut base = serde_json::to_value(desk_agent()).map_err(serde::de::Error::custom)?;
    let obj = base.as_object_mut().expect("config is an object");
    for (k, v) in given {
        obj.insert(k, v);
    }
    serde_json::from_value(base).map_err(|e| serde::de::Error::custom(format!("agent: {e}")))
}

/// A flat JSON experiment file with one nested `agent` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    #[serde(default = "default_total_steps")]
    pub total_steps: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Final score at or below which a saturated run counts as stuck.
    #[serde(default = "default_stuck_floor")]
    pub stuck_floor: f64,
    /// Free-form header describing how the defaults were scaled.
    #[serde(default = "default_note")]
    pub note: String,
    #[serde(default = "desk_agent", deserialize_with = "agent_over_desk")]
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    pub fn new(env: &str) -> Self {
        Self {
            env: env.to_string(),
            total_steps: default_total_steps(),
            eval_every: default_eval_every(),
            eval_episodes: default_eval_episodes(),
            seeds: default_seeds(),
            output: default_output(),
            stuck_floor: default_stuck_floor(),
            note: default_note(),
            agent: desk_agent(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        EnvSpec::by_name(&self.env)?;
        self.agent.validate()?;
        self.run_options().validate(&self.agent)
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        EnvSpec::by_name(&self.env)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions { total_steps: self.total_steps, eval_every: self.eval_every, eval_episodes: self.eval_episodes }
    }
}

/// Named bundles of stabilization switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodPreset {
    Baseline,
    Penalty,
    ActorPnorm,
    BothPnorm,
    LayerNorm,
    LrWarmup,
    GradClip1,
    GradClip10,
    Spectral,
    ScaleDown,
    OutputNorm,
    Combined,
    CombinedPp,
}

impl MethodPreset {
    pub const ALL: [MethodPreset; 13] = [
        Self::Baseline,
        Self::Penalty,
        Self::ActorPnorm,
        Self::BothPnorm,
        Self::LayerNorm,
        Self::LrWarmup,
        Self::GradClip1,
        Self::GradClip10,
        Self::Spectral,
        Self::ScaleDown,
        Self::OutputNorm,
        Self::Combined,
        Self::CombinedPp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Penalty => "penalty",
            Self::ActorPnorm => "actor_pnorm",
            Self::BothPnorm => "both_pnorm",
            Self::LayerNorm => "layer_norm",
            Self::LrWarmup => "lr_warmup",
            Self::GradClip1 => "grad_clip_1",
            Self::GradClip10 => "grad_clip_10",
            Self::Spectral => "spectral",
            Self::ScaleDown => "scale_down",
            Self::OutputNorm => "output_norm",
            Self::Combined => "combined",
            Self::CombinedPp => "combined_pp",
        }
    }

    /// Switches every fix off on `base`, then turns on this preset's fixes.
    /// `total_steps` sets the length of the full-run SSL in `combined_pp`.
    pub fn apply(self, base: &AgentConfig, total_steps: u64) -> AgentConfig {
        let mut c = AgentConfig {
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
            ..base.clone()
        };
        match self {
            Self::Baseline => {}
            Self::Penalty => c.penalty = PENALTY_LAMBDA,
            Self::ActorPnorm => c.actor_pnorm = true,
            Self::BothPnorm => (c.actor_pnorm, c.critic_pnorm) = (true, true),
            Self::LayerNorm => c.layer_norm = true,
            Self::LrWarmup => c.warmup_steps = DESK_WARMUP_STEPS,
            Self::GradClip1 => c.grad_clip = Some(1.0),
            Self::GradClip10 => c.grad_clip = Some(10.0),
            Self::Spectral => c.spectral = true,
            Self::ScaleDown => c.scale_down = Some(100.0),
            Self::OutputNorm => c.output_norm = true,
            Self::Combined | Self::CombinedPp => {
                c.actor_pnorm = true;
                c.critic_pnorm = true;
                c.penalty = PENALTY_LAMBDA;
                c.ssl_steps = DESK_SSL_STEPS;
                if self == Self::CombinedPp {
                    c.asym_clip = true;
                    c.ssl_steps = total_steps;
                }
            }
        }
        c
    }
}

impl fmt::Display for MethodPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
            Error::InvalidArgument(format!("unknown preset {s:?}; valid presets: {}", names.join(", ")))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_desk_defaults() {
        let c = ExperimentConfig::from_json(r#"{"env": "pendulum_swingup"}"#).unwrap();
        assert_eq!(c, ExperimentConfig::new("pendulum_swingup"));
        assert_eq!(c.seeds.to_vec().len(), 20);
    }

    #[test]
    fn partial_agent_block_keeps_desk_values() {
        let c = ExperimentConfig::from_json(r#"{"env": "reacher", "agent": {"lr": 0.001}}"#).unwrap();
        assert_eq!(c.agent, AgentConfig { lr: 1e-3, ..desk_agent() });
    }

    #[test]
    fn unknown_keys_and_missing_env_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"env": "reacher", "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"env": "reacher", "agent": {"bogus": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"total_steps": 10}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"env": "nowhere"}"#).is_err());
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let mut c = ExperimentConfig::new("point_mass");
        c.seeds = Seeds::List(vec![3, 9]);
        c.agent.grad_clip = Some(10.0);
        let once = c.to_json().unwrap();
        let back = ExperimentConfig::from_json(&once).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), once);
    }

    #[test]
    fn presets_parse_and_validate() {
        for p in MethodPreset::ALL {
            assert_eq!(p.name().parse::<MethodPreset>().unwrap(), p);
            p.apply(&desk_agent(), 50_000).validate().unwrap();
        }
        let err = "nope".parse::<MethodPreset>().unwrap_err().to_string();
        assert!(err.contains("combined_pp"));
        let pp = MethodPreset::CombinedPp.apply(&desk_agent(), 777);
        assert!(pp.asym_clip && pp.actor_pnorm && pp.critic_pnorm && pp.penalty == PENALTY_LAMBDA);
        assert_eq!(pp.ssl_steps, 777);
    }
}
