//! Compares analytic MLP gradients against central differences for every
//! normalization mode.

use ndarray::Array2;
use rand::Rng;
use varlab::diffmath::*;
use varlab::rng::stream;

fn main() -> varlab::Result<()> {
    let mut rng = stream(7, 0);
    for penult in [PenultMode::None, PenultMode::Pnorm, PenultMode::LayerNorm, PenultMode::Spectral] {
        for output in [OutputMode::Identity, OutputMode::OutputNorm] {
            let mut net = MlpParams::init(&[4, 16, 16, 2], Activation::Relu, penult, output, &mut rng)?;
            net.refresh_spectral(3)?;
            let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            let c = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
            let loss = |y: &RealMat| (&c * y).sum();
            let tape = net.forward_batch(x.view())?;
            let dy = c.clone();
            let (grad, _) = net.backward_batch(&tape, &dy)?;
            let fd = finite_diff_grad(|p| loss(&p.predict(x.view()).unwrap()), &net, 1e-5);
            let err = max_rel_error(&grad.to_flat(), &fd.to_flat(), 1e-6);
            println!("{penult:?} / {output:?}: max relative error {err:.2e}");
        }
    }
    Ok(())
}
