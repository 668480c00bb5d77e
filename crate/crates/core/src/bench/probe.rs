//! Random-action probe: with probability `p` each action of a fixed policy is
//! replaced by a uniform random one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{uniform_action, ActorPolicy};
use crate::diffmath::{MlpParams, RealMat, RealVec};
use crate::envworld::{evaluate_lockstep, EnvSpec, Policy};
use crate::rng::{stream, StreamRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub p: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Reset seeds of the evaluation episodes for a probe or plain evaluation.
pub fn evaluation_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream(seed, 7);
    (0..episodes).map(|_| rng.random()).collect()
}

/// Returns of the deterministic policy on `episodes` episodes.
pub fn evaluate_policy(policy: &MlpParams, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    evaluate_lockstep(spec, &mut ActorPolicy(policy), &evaluation_seeds(seed, episodes))
}

struct Swapped<'a> {
    inner: ActorPolicy<'a>,
    p: f64,
    rng: StreamRng,
}

impl Policy for Swapped<'_> {
    fn act(&mut self, obs: &RealVec) -> Result<RealVec> {
        let mut a = self.inner.act(obs)?;
        // both draws happen every step so the stream never depends on p or the policy
        let swap = self.rng.random::<f64>() < self.p;
        let random = uniform_action(a.len(), &mut self.rng);
        if swap {
            a = random;
        }
        Ok(a)
    }

    fn act_batch(&mut self, obs: &RealMat) -> Result<RealMat> {
        let mut a = self.inner.act_batch(obs)?;
        for mut row in a.rows_mut() {
            let swap = self.rng.random::<f64>() < self.p;
            let random = uniform_action(row.len(), &mut self.rng);
            if swap {
                row.assign(&random);
            }
        }
        Ok(a)
    }
}

/// Mean and standard deviation of the return for every `p` in the grid.
/// Every `p` uses the same episode seeds as [`evaluate_policy`].
pub fn random_action_probe(policy: &MlpParams, spec: &EnvSpec, p_grid: &[f64], episodes: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    if let Some(p) = p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let seeds = evaluation_seeds(seed, episodes);
    p_grid
        .iter()
        .map(|&p| {
            let mut pol = Swapped { inner: ActorPolicy(policy), p, rng: stream(seed, 8) };
            let returns = evaluate_lockstep(spec, &mut pol, &seeds)?;
            let n = returns.len() as f64;
            let mean = returns.iter().sum::<f64>() / n;
            let std = if returns.len() > 1 { (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            Ok(ProbeRow { p, mean_return: mean, std_return: std })
        })
        .collect()
}
