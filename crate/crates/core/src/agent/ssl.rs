//! Self-supervised auxiliary loss on the critic trunk.
//!
//! Two views of each sample are the trunk inputs `s_t` and `s_{t+1}`, each
//! perturbed with Gaussian noise. The online branch is `head(trunk(·))`, the
//! target branch is the Polyak-averaged trunk. Both embeddings are
//! L2-normalized and compared with the squared distance, symmetrized over the
//! two views, so the loss always lies in `[0, 4]`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::nets::{trunk_backward, trunk_features};
use crate::diffmath::norm::{l2_normalize_rows, l2_normalize_rows_backward};
use crate::diffmath::{Activation, GradBuffer, MlpParams, OutputMode, PenultMode, RealMat};
use crate::Result;

/// Online projection head (two-layer MLP).
#[derive(Clone, Debug, PartialEq)]
pub struct SslHeads {
    pub head: MlpParams,
}

impl SslHeads {
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let head = MlpParams::init(&[feature_dim, hidden, feature_dim], Activation::Relu, PenultMode::None, OutputMode::Identity, rng)?;
        Ok(Self { head })
    }
}

#[derive(Clone, Debug)]
pub struct SslTerms {
    pub loss: f64,
    pub trunk_grad: GradBuffer,
    pub head_grad: GradBuffer,
}

/// Mean over rows of `‖a_i/‖a_i‖ − b_i/‖b_i‖‖²`.
pub fn normalized_sq_distance(a: &RealMat, b: &RealMat) -> f64 {
    let (na, _, _) = l2_normalize_rows(a);
    let (nb, _, _) = l2_normalize_rows(b);
    (&na - &nb).mapv(|v| v * v).sum() / a.nrows().max(1) as f64
}

fn noisy<R: Rng + ?Sized>(x: &RealMat, sigma: f64, rng: &mut R) -> RealMat {
    if sigma == 0.0 {
        return x.clone();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    x + &Array2::from_shape_fn(x.raw_dim(), |_| n.sample(rng))
}

/// Loss and gradients for the trunk and head.
pub fn ssl_update_terms<R: Rng + ?Sized>(
    trunk: &MlpParams,
    target_trunk: &MlpParams,
    heads: &SslHeads,
    s: &RealMat,
    s_next: &RealMat,
    view_noise: f64,
    rng: &mut R,
) -> Result<SslTerms> {
    let v1 = noisy(s, view_noise, rng);
    let v2 = noisy(s_next, view_noise, rng);
    let mut trunk_grad = GradBuffer::zeros_like(trunk);
    let mut head_grad = GradBuffer::zeros_like(&heads.head);
    let b = s.nrows().max(1) as f64;
    let mut loss = 0.0;
    for (online_in, target_in) in [(&v1, &v2), (&v2, &v1)] {
        let (h, trunk_tape) = trunk_features(trunk, online_in.view())?;
        let head_tape = heads.head.forward_batch(h.view())?;
        let (z, z_norms, _) = l2_normalize_rows(head_tape.output());
        let (t, _) = trunk_features(target_trunk, target_in.view())?;
        let (t, _, _) = l2_normalize_rows(&t);
        let diff = &z - &t;
        loss += 0.5 * diff.mapv(|v| v * v).sum() / b;
        // 0.5 for the symmetrization, 1/b for the batch mean
        let dz = diff * (2.0 * 0.5 / b);
        let dp = l2_normalize_rows_backward(&z, &z_norms, &dz);
        let (hg, dh) = heads.head.backward_batch(&head_tape, &dp)?;
        head_grad.add_assign(&hg)?;
        trunk_grad.add_assign(&trunk_backward(trunk, &trunk_tape, &h, dh)?)?;
    }
    Ok(SslTerms { loss, trunk_grad, head_grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_embeddings_have_zero_loss() {
        let a = array![[1.0, 2.0], [0.0, 3.0]];
        assert!(normalized_sq_distance(&a, &(&a * 5.0)) < 1e-15);
    }

    #[test]
    fn opposite_embeddings_have_loss_four() {
        let a = array![[1.0, 2.0]];
        assert!((normalized_sq_distance(&a, &(-&a)) - 4.0).abs() < 1e-12);
    }
}
