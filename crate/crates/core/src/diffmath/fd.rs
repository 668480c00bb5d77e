//! Central finite differences, used as a gradient oracle.

use super::mlp::{GradBuffer, MlpParams};

/// `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` for every coordinate of `x`.
pub fn finite_diff_vec<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of a scalar function of network parameters.
pub fn finite_diff_grad<F: FnMut(&MlpParams) -> f64>(mut f: F, params: &MlpParams, h: f64) -> GradBuffer {
    let mut scratch = params.clone();
    let flat = params.to_flat();
    let g = finite_diff_vec(
        |x| {
            scratch.set_flat(x).expect("same parameter count");
            f(&scratch)
        },
        &flat,
        h,
    );
    let mut out = GradBuffer::zeros_like(params);
    let mut it = g.into_iter();
    for l in &mut out.layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = it.next().unwrap();
        }
    }
    out
}

/// Largest coordinate-wise relative error, `|a−b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::mlp::{Activation, Linear, OutputMode, PenultMode};
    use ndarray::array;

    #[test]
    fn quadratic() {
        let g = finite_diff_vec(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_gives_zero_buffer() {
        let net = MlpParams::from_layers(
            vec![Linear { weight: array![[1.0, 2.0]], bias: array![0.5] }],
            Activation::Relu,
            PenultMode::None,
            OutputMode::Identity,
        )
        .unwrap();
        let g = finite_diff_grad(|_| 4.2, &net, 1e-5);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }
}
