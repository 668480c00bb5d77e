//! DDPG-style learner: actor, twin critics with Polyak targets, n-step
//! replay, and every stabilization fix as an independent switch.

mod config;
mod learner;
mod nets;
mod replay;
mod ssl;

pub use config::{AgentConfig, PENALTY_LAMBDA};
pub use learner::{
    actor_loss, actor_terms, bootstrap_value, explore, stack_rows, td_target, uniform_action, ActionMode, ActorPolicy, ActorTerms, Agent, RecordedBatch,
    TdTarget, UpdateMetrics, NONZERO_TOL,
};
pub use nets::{avg_q, init_actor, min_q, Critic, CriticGrads, CriticPass};
pub use replay::{Batch, NStepAssembler, ReplayBuffer, Transition};
pub use ssl::{normalized_sq_distance, ssl_update_terms, SslHeads, SslTerms};
