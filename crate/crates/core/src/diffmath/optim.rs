//! Adam, gradient clipping, linear schedules and target-network averaging.

use serde::{Deserialize, Serialize};

use super::mlp::{GradBuffer, MlpParams};
use crate::{Error, Result};

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: GradBuffer,
    v: GradBuffer,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &MlpParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: GradBuffer::zeros_like(params), v: GradBuffer::zeros_like(params), t: 0, beta1, beta2, eps }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &GradBuffer, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        if !grads.same_shape(&self.m) || grads.layers.len() != params.layers().len() {
            return Err(Error::Shape("gradient does not match optimizer state".into()));
        }
        grads.check_finite("adam input")?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let eps = self.eps;
        let layers = params.layers_mut();
        for (((p, g), m), v) in layers.iter_mut().zip(&grads.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            };
            ndarray::Zip::from(&mut p.weight).and(&g.weight).and(&mut m.weight).and(&mut v.weight).for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut p.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradBuffer, max_norm: f64) -> f64 {
    clip_grad_norm_joint(&mut [grads], max_norm)
}

/// Clips several buffers jointly, treating them as one parameter vector.
pub fn clip_grad_norm_joint(grads: &mut [&mut GradBuffer], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(c);
        }
    }
    norm
}

/// `value(s) = start + (end − start)·min(s, duration)/duration`, evaluated as a
/// convex combination so both endpoints are exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub duration: u64,
}

impl LinearSchedule {
    pub fn new(start: f64, end: f64, duration: u64) -> Result<Self> {
        if duration == 0 {
            return Err(Error::InvalidArgument("schedule duration must be > 0".into()));
        }
        Ok(Self { start, end, duration })
    }

    pub fn value(&self, step: u64) -> f64 {
        let frac = step.min(self.duration) as f64 / self.duration as f64;
        self.start * (1.0 - frac) + self.end * frac
    }
}

/// `target ← τ·online + (1−τ)·target`, entrywise. Spectral power vectors are
/// copied from the online network.
pub fn soft_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must be in [0,1], got {tau}")));
    }
    if target.dims() != online.dims() {
        return Err(Error::Shape(format!("soft update between {:?} and {:?}", target.dims(), online.dims())));
    }
    if tau == 0.0 {
        return Ok(());
    }
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        ndarray::Zip::from(&mut t.weight).and(&o.weight).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        ndarray::Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    if let (Some(_), Some(v)) = (target.power_vec(), online.power_vec()) {
        target.set_power_vec(v.clone())?;
    }
    Ok(())
}

/// Divides the final layer's weight and bias by `factor`.
pub fn scale_down_init(params: &mut MlpParams, factor: f64) -> Result<()> {
    if !(factor > 0.0) {
        return Err(Error::InvalidArgument(format!("scale-down factor must be > 0, got {factor}")));
    }
    let layers = params.layers_mut();
    let last = layers.len() - 1;
    layers[last].weight /= factor;
    layers[last].bias /= factor;
    Ok(())
}
