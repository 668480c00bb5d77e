//! Normalization primitives shared by the network variants.

use ndarray::{Array1, ArrayView1, Axis};

use super::{RealMat, RealVec};
use crate::{Error, Result};

/// Denominator floor for L2 normalization.
pub const NORM_FLOOR: f64 = 1e-12;
/// Variance epsilon of the affine-free layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Result of an L2 normalization; `clamped` is set when the input norm fell
/// below [`NORM_FLOOR`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub value: RealVec,
    pub clamped: bool,
}

/// Penultimate-feature normalization: `x / ‖x‖₂`. No mean is subtracted.
pub fn pnorm_forward(x: &RealVec) -> Normalized {
    let norm = l2(x.view());
    let clamped = norm < NORM_FLOOR;
    Normalized { value: x / norm.max(NORM_FLOOR), clamped }
}

/// Layer norm without learned affine parameters.
pub fn layer_norm_forward(x: &RealVec) -> Result<RealVec> {
    if x.len() < 2 {
        return Err(Error::Shape(format!("layer norm needs at least 2 features, got {}", x.len())));
    }
    let (out, _) = layer_norm_rows(&x.view().insert_axis(Axis(0)).to_owned());
    Ok(out.row(0).to_owned())
}

pub(crate) fn l2(x: ArrayView1<f64>) -> f64 {
    x.dot(&x).sqrt()
}

/// Row-wise L2 normalization. Returns the normalized rows, the clamped norms
/// and how many rows hit the floor.
pub(crate) fn l2_normalize_rows(x: &RealMat) -> (RealMat, Array1<f64>, usize) {
    let mut out = x.clone();
    let mut norms = Array1::zeros(x.nrows());
    let mut clamped = 0;
    for (mut row, n) in out.rows_mut().into_iter().zip(norms.iter_mut()) {
        let raw = l2(row.view());
        if raw < NORM_FLOOR {
            clamped += 1;
        }
        *n = raw.max(NORM_FLOOR);
        row /= *n;
    }
    (out, norms, clamped)
}

/// Backward pass of row-wise L2 normalization: `(g − u (u·g)) / ‖x‖`.
pub(crate) fn l2_normalize_rows_backward(
    normalized: &RealMat,
    norms: &Array1<f64>,
    grad: &RealMat,
) -> RealMat {
    let mut out = grad.clone();
    for ((mut g, u), &n) in out.rows_mut().into_iter().zip(normalized.rows()).zip(norms.iter()) {
        let proj = u.dot(&g);
        g.scaled_add(-proj, &u);
        g /= n;
    }
    out
}

/// Row-wise layer norm. Returns the normalized rows and per-row `1/std`.
pub(crate) fn layer_norm_rows(x: &RealMat) -> (RealMat, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in out.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row -= mean;
        let var = row.dot(&row) / n;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *s;
    }
    (out, inv_std)
}

pub(crate) fn layer_norm_rows_backward(
    normalized: &RealMat,
    inv_std: &Array1<f64>,
    grad: &RealMat,
) -> RealMat {
    let n = grad.ncols() as f64;
    let mut out = grad.clone();
    for ((mut g, xh), &s) in out.rows_mut().into_iter().zip(normalized.rows()).zip(inv_std.iter()) {
        let mean_g = g.sum() / n;
        let mean_gx = g.dot(&xh) / n;
        g -= mean_g;
        g.scaled_add(-mean_gx, &xh);
        g *= s;
    }
    out
}

/// Runs `iters` power iterations on `WᵀW`, updating `power_vec` in place,
/// and returns the top singular value estimate `‖W v‖` (floored).
pub fn power_iteration(weight: &RealMat, power_vec: &mut RealVec, iters: usize) -> Result<f64> {
    if power_vec.len() != weight.ncols() {
        return Err(Error::Shape(format!(
            "power vector has length {}, weight has {} columns",
            power_vec.len(),
            weight.ncols()
        )));
    }
    if l2(power_vec.view()) == 0.0 {
        return Err(Error::InvalidArgument("power-iteration vector is zero".into()));
    }
    for _ in 0..iters {
        let wv = weight.dot(&*power_vec);
        let next = weight.t().dot(&wv);
        let n = l2(next.view());
        if n < NORM_FLOOR {
            break;
        }
        *power_vec = next / n;
    }
    let n = l2(power_vec.view());
    *power_vec /= n;
    Ok(spectral_sigma(weight, power_vec))
}

/// `‖W v‖` for a unit `v`, floored at [`NORM_FLOOR`].
pub(crate) fn spectral_sigma(weight: &RealMat, power_vec: &RealVec) -> f64 {
    l2(weight.dot(power_vec).view()).max(NORM_FLOOR)
}

/// Divides `weight` by its power-iteration estimate of the top singular value.
/// The power vector persists across calls; a zero matrix comes back unchanged.
pub fn spectral_normalize(weight: &RealMat, power_vec: &mut RealVec, iters: usize) -> Result<RealMat> {
    if iters == 0 {
        return Err(Error::InvalidArgument("spectral normalization needs iters >= 1".into()));
    }
    let sigma = power_iteration(weight, power_vec, iters)?;
    if l2(weight.dot(&*power_vec).view()) < NORM_FLOOR {
        return Ok(weight.clone());
    }
    Ok(weight / sigma)
}

/// Gradient of `L(W / ‖W v‖)` with respect to `W`, given `grad_eff = ∂L/∂(W/σ)`,
/// with `v` held fixed.
pub(crate) fn spectral_backward(weight: &RealMat, power_vec: &RealVec, grad_eff: &RealMat) -> RealMat {
    let wv = weight.dot(power_vec);
    let sigma = l2(wv.view()).max(NORM_FLOOR);
    let u = &wv / sigma;
    let inner = (grad_eff * weight).sum();
    let mut out = grad_eff / sigma;
    let outer = u
        .view()
        .insert_axis(Axis(1))
        .dot(&power_vec.view().insert_axis(Axis(0)));
    out.scaled_add(-inner / (sigma * sigma), &outer);
    out
}
