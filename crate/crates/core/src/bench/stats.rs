//! Pure statistics over final scores and evaluation matrices.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean, sample standard deviation and relative variance of final scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mu: f64,
    pub sigma: f64,
    /// `σ/μ`, absent unless `μ > 0`.
    pub rel: Option<f64>,
    pub n: usize,
}

/// Sample mean and `N−1` standard deviation.
pub fn summarize_scores(scores: &[f64]) -> Result<SummaryStats> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 scores, got {}", scores.len())));
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma = var.sqrt();
    Ok(SummaryStats { mu, sigma, rel: (mu > 0.0).then(|| sigma / mu), n: scores.len() })
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson needs equal-length vectors");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Split of evaluation-score variance into an across-run and a
/// within-run (episode sampling) component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarDecomp {
    /// Across-run variance of the per-run means, bias-corrected and floored at 0.
    pub alg_var: f64,
    /// The same estimate before flooring.
    pub alg_var_raw: f64,
    /// Mean over runs of the unbiased within-run variance.
    pub sample_var: f64,
    pub runs: usize,
    pub samples: usize,
}

impl VarDecomp {
    /// Predicted variance of the grand mean, `alg/R + sample/(R·S)`.
    pub fn perf_variance(&self) -> f64 {
        let (r, s) = (self.runs as f64, self.samples as f64);
        self.alg_var / r + self.sample_var / (r * s)
    }
}

/// Decomposes an `R × S` matrix (runs × evaluation episodes).
pub fn variance_decomposition(scores: &[Vec<f64>]) -> Result<VarDecomp> {
    let r = scores.len();
    let s = scores.first().map_or(0, Vec::len);
    if r < 2 || s < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs and 2 samples, got {r} x {s}")));
    }
    if scores.iter().any(|row| row.len() != s) {
        return Err(Error::Shape("score matrix rows differ in length".into()));
    }
    let (rf, sf) = (r as f64, s as f64);
    let means: Vec<f64> = scores.iter().map(|row| row.iter().sum::<f64>() / sf).collect();
    let sample_var = scores
        .iter()
        .zip(&means)
        .map(|(row, m)| row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (sf - 1.0))
        .sum::<f64>()
        / rf;
    let grand = means.iter().sum::<f64>() / rf;
    let between = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (rf - 1.0);
    let alg_var_raw = between - sample_var / sf;
    Ok(VarDecomp { alg_var: alg_var_raw.max(0.0), alg_var_raw, sample_var, runs: r, samples: s })
}

/// `sqrt((σ²_alg + σ²_sample/S_from) / (σ²_alg + σ²_sample/S_to))`: how much the
/// standard deviation of the benchmark shrinks when evaluating on `s_to`
/// instead of `s_from` episodes.
pub fn eval_gain_ratio(alg_var: f64, sample_var: f64, s_from: usize, s_to: usize) -> Result<f64> {
    if s_from == 0 || s_to == 0 {
        return Err(Error::InvalidArgument("episode counts must be >= 1".into()));
    }
    let num = alg_var + sample_var / s_from as f64;
    let den = alg_var + sample_var / s_to as f64;
    if den == 0.0 {
        return Err(Error::InvalidArgument("zero variance in the denominator".into()));
    }
    if num == den {
        return Ok(1.0);
    }
    Ok((num / den).sqrt())
}

/// One point of a performance profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub method: String,
    pub tau: f64,
    pub fraction: f64,
}

/// Fraction of runs scoring strictly above each threshold, per method.
pub fn performance_profile(methods: &[(String, Vec<f64>)], taus: &[f64]) -> Result<Vec<ProfilePoint>> {
    let mut out = Vec::with_capacity(methods.len() * taus.len());
    for (name, scores) in methods {
        if scores.is_empty() {
            return Err(Error::InvalidArgument(format!("method {name} has no scores")));
        }
        for &tau in taus {
            let above = scores.iter().filter(|&&s| s > tau).count();
            out.push(ProfilePoint { method: name.clone(), tau, fraction: above as f64 / scores.len() as f64 });
        }
    }
    Ok(out)
}
