//! Actor and twin-critic networks.
//!
//! The critic has a shared state trunk `tanh(W s + b)` of width
//! `feature_dim`, followed by two Q heads that take `[features, action]`.
//! The actor is a single MLP from state to pre-tanh action.

use ndarray::{s, Array1, ArrayView2, Axis};
use rand::Rng;

use super::config::AgentConfig;
use crate::diffmath::{hconcat, scale_down_init, Activation, GradBuffer, MlpParams, OutputMode, PenultMode, RealMat, RealVec, Tape};
use crate::Result;

pub fn init_actor<R: Rng + ?Sized>(cfg: &AgentConfig, obs_dim: usize, act_dim: usize, rng: &mut R) -> Result<MlpParams> {
    let mut dims = vec![obs_dim, cfg.feature_dim];
    dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.hidden_layers));
    dims.push(act_dim);
    let output = if cfg.output_norm { OutputMode::OutputNorm } else { OutputMode::Identity };
    let mut actor = MlpParams::init(&dims, Activation::Relu, cfg.actor_penult()?, output, rng)?;
    if let Some(f) = cfg.scale_down {
        scale_down_init(&mut actor, f)?;
    }
    Ok(actor)
}

/// Shared trunk plus twin Q heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub trunk: MlpParams,
    pub q1: MlpParams,
    pub q2: MlpParams,
}

/// Forward record of both critics on one batch.
#[derive(Clone, Debug)]
pub struct CriticPass {
    pub features: RealMat,
    pub q1: RealVec,
    pub q2: RealVec,
    trunk_tape: Tape,
    q1_tape: Tape,
    q2_tape: Tape,
}

/// Gradients of a critic pass. Parameter gradients are absent when only the
/// action gradient was requested.
#[derive(Clone, Debug)]
pub struct CriticGrads {
    pub trunk: Option<GradBuffer>,
    pub q1: Option<GradBuffer>,
    pub q2: Option<GradBuffer>,
    pub action: RealMat,
}

impl Critic {
    pub fn init<R: Rng + ?Sized>(cfg: &AgentConfig, obs_dim: usize, act_dim: usize, rng: &mut R) -> Result<Self> {
        let trunk = MlpParams::init(&[obs_dim, cfg.feature_dim], Activation::Tanh, PenultMode::None, OutputMode::Identity, rng)?;
        let mut dims = vec![cfg.feature_dim + act_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.hidden_layers));
        dims.push(1);
        let penult = cfg.critic_penult()?;
        let mut q1 = MlpParams::init(&dims, Activation::Relu, penult, OutputMode::Identity, rng)?;
        let mut q2 = MlpParams::init(&dims, Activation::Relu, penult, OutputMode::Identity, rng)?;
        if let Some(f) = cfg.scale_down {
            scale_down_init(&mut q1, f)?;
            scale_down_init(&mut q2, f)?;
        }
        Ok(Self { trunk, q1, q2 })
    }

    /// Trunk features `tanh(trunk(s))` and the trunk tape.
    pub fn features(&self, s: ArrayView2<f64>) -> Result<(RealMat, Tape)> {
        trunk_features(&self.trunk, s)
    }

    pub fn forward(&self, s: ArrayView2<f64>, a: &RealMat) -> Result<CriticPass> {
        let (features, trunk_tape) = self.features(s)?;
        let input = hconcat(&features, a);
        let q1_tape = self.q1.forward_batch(input.view())?;
        let q2_tape = self.q2.forward_batch(input.view())?;
        Ok(CriticPass {
            q1: q1_tape.output().column(0).to_owned(),
            q2: q2_tape.output().column(0).to_owned(),
            features,
            trunk_tape,
            q1_tape,
            q2_tape,
        })
    }

    pub fn q_values(&self, s: ArrayView2<f64>, a: &RealMat) -> Result<(RealVec, RealVec)> {
        let p = self.forward(s, a)?;
        Ok((p.q1, p.q2))
    }

    /// Reverse pass given per-row `∂L/∂Q₁` and `∂L/∂Q₂`.
    pub fn backward(&self, pass: &CriticPass, dq1: &RealVec, dq2: &RealVec, want_params: bool) -> Result<CriticGrads> {
        let feat = pass.features.ncols();
        let g1 = dq1.view().insert_axis(Axis(1)).to_owned();
        let g2 = dq2.view().insert_axis(Axis(1)).to_owned();
        let (q1g, q2g, in1, in2) = if want_params {
            let (a, x1) = self.q1.backward_batch(&pass.q1_tape, &g1)?;
            let (b, x2) = self.q2.backward_batch(&pass.q2_tape, &g2)?;
            (Some(a), Some(b), x1, x2)
        } else {
            (None, None, self.q1.input_grad_batch(&pass.q1_tape, &g1)?, self.q2.input_grad_batch(&pass.q2_tape, &g2)?)
        };
        let input_grad = in1 + in2;
        let action = input_grad.slice(s![.., feat..]).to_owned();
        let trunk = if want_params {
            let dfeat = input_grad.slice(s![.., ..feat]).to_owned();
            Some(trunk_backward(&self.trunk, &pass.trunk_tape, &pass.features, dfeat)?)
        } else {
            None
        };
        Ok(CriticGrads { trunk, q1: q1g, q2: q2g, action })
    }

    pub fn refresh_spectral(&mut self, iters: usize) -> Result<()> {
        self.q1.refresh_spectral(iters)?;
        self.q2.refresh_spectral(iters)
    }
}

pub(crate) fn trunk_features(trunk: &MlpParams, s: ArrayView2<f64>) -> Result<(RealMat, Tape)> {
    let tape = trunk.forward_batch(s)?;
    Ok((tape.output().mapv(f64::tanh), tape))
}

/// Trunk parameter gradient from `∂L/∂features`.
pub(crate) fn trunk_backward(trunk: &MlpParams, tape: &Tape, features: &RealMat, mut dfeat: RealMat) -> Result<GradBuffer> {
    ndarray::Zip::from(&mut dfeat).and(features).for_each(|g, &h| *g *= 1.0 - h * h);
    Ok(trunk.backward_batch(tape, &dfeat)?.0)
}

/// Entrywise `min(Q₁, Q₂)`.
pub fn min_q(q1: &RealVec, q2: &RealVec) -> RealVec {
    ndarray::Zip::from(q1).and(q2).map_collect(|&a, &b| a.min(b))
}

/// Entrywise `(Q₁ + Q₂)/2`.
pub fn avg_q(q1: &RealVec, q2: &RealVec) -> RealVec {
    ndarray::Zip::from(q1).and(q2).map_collect(|&a, &b| 0.5 * (a + b))
}

pub(crate) fn zeros(n: usize) -> RealVec {
    Array1::zeros(n)
}
