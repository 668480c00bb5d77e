//! Physics ticks and per-tick rewards. All integrators are semi-implicit
//! Euler: velocities first, then positions with the new velocities.

use std::f64::consts::PI;

use super::{EnvKind, RewardKind};

/// Constants shared by all tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsConstants {
    /// Seconds per physics tick.
    pub dt: f64,
    /// Torque (or force) applied per unit action.
    pub torque_scale: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    /// Angular velocity clamp, rad/s.
    pub max_speed: f64,
    /// Joint / velocity damping for reacher and point-mass (pendulum is frictionless).
    pub damping: f64,
    /// Reacher link length (both links).
    pub link: f64,
    /// Sparse pendulum: |θ| threshold in radians.
    pub upright_angle: f64,
    /// Sparse pendulum: |θ̇| threshold in rad/s.
    pub upright_speed: f64,
    /// Sparse reacher: fingertip-to-target radius.
    pub target_radius: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            dt: 0.05,
            torque_scale: 2.0,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            max_speed: 8.0,
            damping: 1.0,
            link: 0.5,
            upright_angle: 0.15,
            upright_speed: 1.0,
            target_radius: 0.1,
        }
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

pub(super) fn fingertip(c: &PhysicsConstants, q1: f64, q2: f64) -> (f64, f64) {
    (c.link * q1.cos() + c.link * (q1 + q2).cos(), c.link * q1.sin() + c.link * (q1 + q2).sin())
}

/// Mechanical energy of the pendulum, `½ m l² θ̇² + m g l cos θ` (θ = 0 upright).
pub fn pendulum_energy(c: &PhysicsConstants, theta: f64, omega: f64) -> f64 {
    0.5 * c.mass * c.length * c.length * omega * omega + c.mass * c.gravity * c.length * theta.cos()
}

/// Modified energy of the semi-implicit Euler map of the undriven pendulum,
/// truncated after the `dt²` term. The plain energy oscillates by `O(dt)`
/// under this integrator; this one stays flat to `O(dt³)`.
pub fn pendulum_shadow_energy(c: &PhysicsConstants, theta: f64, omega: f64) -> f64 {
    let inertia = c.mass * c.length * c.length;
    let mgl = c.mass * c.gravity * c.length;
    let p = inertia * omega;
    let dv = -mgl * theta.sin();
    let ddv = -mgl * theta.cos();
    pendulum_energy(c, theta, omega) - 0.5 * c.dt * (p / inertia) * dv
        + c.dt * c.dt / 12.0 * (dv * dv / inertia + ddv * (p / inertia).powi(2))
}

pub(super) fn tick(kind: EnvKind, c: &PhysicsConstants, p: &mut [f64], action: &[f64]) {
    match kind {
        EnvKind::Pendulum => {
            let inertia = c.mass * c.length * c.length;
            let acc = c.gravity / c.length * p[0].sin() + c.torque_scale * action[0] / inertia;
            p[1] = (p[1] + c.dt * acc).clamp(-c.max_speed, c.max_speed);
            p[0] = wrap_angle(p[0] + c.dt * p[1]);
        }
        EnvKind::Reacher => {
            for j in 0..2 {
                let acc = c.torque_scale * action[j] - c.damping * p[2 + j];
                p[2 + j] = (p[2 + j] + c.dt * acc).clamp(-c.max_speed, c.max_speed);
                p[j] = wrap_angle(p[j] + c.dt * p[2 + j]);
            }
        }
        EnvKind::PointMass => {
            for j in 0..2 {
                let acc = c.torque_scale * action[j] - c.damping * p[2 + j];
                p[2 + j] += c.dt * acc;
                p[j] += c.dt * p[2 + j];
                if p[j].abs() > 1.0 {
                    p[j] = p[j].clamp(-1.0, 1.0);
                    p[2 + j] = 0.0;
                }
            }
        }
    }
}

pub(super) fn tick_reward(kind: EnvKind, reward: RewardKind, c: &PhysicsConstants, p: &[f64]) -> f64 {
    match (kind, reward) {
        (EnvKind::Pendulum, RewardKind::Dense) => 0.5 * (1.0 + p[0].cos()),
        (EnvKind::Pendulum, RewardKind::Sparse) => {
            if p[0].abs() < c.upright_angle && p[1].abs() < c.upright_speed {
                1.0
            } else {
                0.0
            }
        }
        (EnvKind::Reacher, r) => {
            let (fx, fy) = fingertip(c, p[0], p[1]);
            let d = ((p[4] - fx).powi(2) + (p[5] - fy).powi(2)).sqrt();
            match r {
                RewardKind::Dense => 1.0 - (2.0 * d).tanh(),
                RewardKind::Sparse => {
                    if d < c.target_radius {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
        (EnvKind::PointMass, RewardKind::Dense) => 1.0 - (2.0 * (p[0] * p[0] + p[1] * p[1]).sqrt()).tanh(),
        (EnvKind::PointMass, RewardKind::Sparse) => {
            if (p[0] * p[0] + p[1] * p[1]).sqrt() < c.target_radius {
                1.0
            } else {
                0.0
            }
        }
    }
}
