//! Dense real-vector math: MLPs with exact reverse-mode gradients,
//! optimizers, schedules and normalization primitives.

pub mod fd;
pub mod mlp;
pub mod norm;
pub mod optim;

pub use fd::{finite_diff_grad, finite_diff_vec, max_rel_error};
pub use mlp::{hconcat, orthogonal, Activation, GradBuffer, Linear, MlpParams, OutputMode, PenultMode, Tape};
pub use norm::{layer_norm_forward, pnorm_forward, power_iteration, spectral_normalize, Normalized};
pub use optim::{clip_grad_norm, clip_grad_norm_joint, scale_down_init, soft_update, AdamState, LinearSchedule};

pub type RealVec = ndarray::Array1<f64>;
pub type RealMat = ndarray::Array2<f64>;
