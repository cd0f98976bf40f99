//! Monte Carlo measurements on solved cells: growth weights `mu_d`,
//! moment estimates with bootstrap bands, the minimal radius `chi*` and the
//! homogenization commutator.

mod commutator;
mod fluct;
mod minrad;

pub use commutator::{commutator, variance_scaling, CommutatorRow, CommutatorSetup, CommutatorSummary, ScalingReport, TestFunction};
pub use fluct::{fluct_suite, FluctOptions, FluctReport, StationarityRow};
pub use minrad::{minimal_radius, radius_grid, MinimalRadiusSample, RadiusFunctionals};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Growth weight: `sqrt(2 + r)` for `d <= 2`, `sqrt(ln(2 + r))` for
/// `d = 3`, 1 above. `NaN` for negative `r`.
pub fn mu_d(r: f64, d: usize) -> f64 {
    if r.is_nan() || r < 0.0 {
        return f64::NAN;
    }
    match d {
        0..=2 => (2.0 + r).sqrt(),
        3 => (2.0 + r).ln().sqrt(),
        _ => 1.0,
    }
}

/// Monte Carlo mean of `x^p` with a bootstrap half-width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub label: String,
    pub p: u32,
    pub n_samples: usize,
    pub estimate: f64,
    /// Half the central 95% bootstrap interval.
    pub half_width: f64,
}

impl MomentEstimate {
    /// Estimate from raw per-sample values `x` (the `p`-th power is taken
    /// here). Samples are sorted first, so relabeling them changes nothing.
    pub fn from_values(label: &str, p: u32, x: &[f64], resamples: usize, seed: u64) -> Self {
        let mut v: Vec<f64> = x.iter().map(|a| a.powi(p as i32)).collect();
        v.sort_by(f64::total_cmp);
        Self {
            label: label.to_string(),
            p,
            n_samples: v.len(),
            estimate: mean(&v),
            half_width: bootstrap_half_width(&v, resamples, seed),
        }
    }

    /// `|a - b| <= k` times the larger half-width.
    pub fn agrees_with(&self, other: &Self, k: f64) -> bool {
        (self.estimate - other.estimate).abs() <= k * self.half_width.max(other.half_width)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Half the 2.5%..97.5% range of bootstrap means.
pub fn bootstrap_half_width(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    if n < 2 || resamples == 0 {
        return if n == 1 { f64::INFINITY } else { f64::NAN };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    0.5 * (q(0.975) - q(0.025))
}
