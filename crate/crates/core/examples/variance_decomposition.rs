//! Splits the variance of a synthetic score matrix into run-to-run and
//! episode-to-episode parts, then asks how much more evaluation episodes buy.

use rand::Rng;
use rand_distr::StandardNormal;
use varlab::bench::{eval_gain_ratio, variance_decomposition};
use varlab::rng::stream;

fn main() -> varlab::Result<()> {
    let mut rng = stream(11, 0);
    let scores: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let run: f64 = 500.0 + 180.0 * rng.sample::<f64, _>(StandardNormal);
            (0..10).map(|_| run + 400.0 * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let d = variance_decomposition(&scores)?;
    println!("run-to-run variance {:.1}, episode variance {:.1}", d.alg_var, d.sample_var);
    println!("10 -> 100 episodes on this matrix: {:.4}", eval_gain_ratio(d.alg_var, d.sample_var, 10, 100)?);
    println!("10 -> 100 episodes, reference values: {:.4}", eval_gain_ratio(35231.7, 176211.9, 10, 100)?);
    Ok(())
}
