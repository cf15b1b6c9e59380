use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of post-burn-in draws accepted by [`summarize_draws`].
pub const MIN_SUMMARY_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub median: f64,
    pub mean: f64,
    /// Mean after dropping 5% of the draws in each tail.
    pub trimmed_mean_10: f64,
    pub sd: f64,
    /// Shortest interval holding 95% of the draws.
    pub hpd_95: (f64, f64),
    /// Equal-tailed 95% interval (2.5% and 97.5% quantiles).
    pub eti_95: (f64, f64),
    pub ess: f64,
}

/// Linear-interpolation quantile of sorted data (`h = (N-1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Shortest window covering `ceil(mass·N)` sorted draws; ties go to the lowest start.
pub fn hpd_interval(sorted: &[f64], mass: f64) -> (f64, f64) {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    let mut width = f64::INFINITY;
    for start in 0..=n - k {
        let w = sorted[start + k - 1] - sorted[start];
        if w < width {
            width = w;
            best = start;
        }
    }
    (sorted[best], sorted[best + k - 1])
}

/// Mean after dropping `floor(fraction/2 · N)` draws from each tail.
pub fn trimmed_mean(sorted: &[f64], fraction: f64) -> f64 {
    let cut = ((fraction / 2.0) * sorted.len() as f64).floor() as usize;
    let kept = &sorted[cut..sorted.len() - cut];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Effective sample size from the autocorrelation sum, truncated at the first
/// non-positive pair of consecutive autocorrelations (Geyer's initial positive
/// sequence).
pub fn effective_sample_size(draws: &[f64]) -> f64 {
    let n = draws.len();
    if n < 4 {
        return n as f64;
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = draws.iter().map(|d| d - mean).collect();
    let c0 = centred.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / c0
    };
    let mut sum = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    // τ = -1 + 2 Σ Γ_k, where Γ_k pairs start at lag 0.
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

pub fn summarize_draws(draws: &[f64]) -> Result<PosteriorSummary> {
    if draws.len() < MIN_SUMMARY_DRAWS {
        return Err(Error::ChainTooShort {
            len: draws.len(),
            min: MIN_SUMMARY_DRAWS,
        });
    }
    let n = draws.len() as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    Ok(PosteriorSummary {
        median: quantile_sorted(&sorted, 0.5),
        mean,
        trimmed_mean_10: trimmed_mean(&sorted, 0.10),
        sd: var.sqrt(),
        hpd_95: hpd_interval(&sorted, 0.95),
        eti_95: (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975)),
        ess: effective_sample_size(draws),
    })
}
