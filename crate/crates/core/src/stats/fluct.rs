//! Fluctuation moments of correctors over an ensemble.
//!
//! Per sample and per origin `z` (the lattice origin and the site halfway
//! across every axis) we record
//!
//! * `grad_energy`: `mean_{Q_unit(z)} |(grad phi, grad sigma)|^2`
//! * `box_average`: `|mean_{Q_unit(z)} (phi, sigma)|^2`
//! * `sigma_growth`: mean-square increment of `Q_unit`-averages of the
//!   time row of `sigma` over `|z'| = L/4`, divided by `mu_d(L / (4 unit))^2`
//! * `chi_star`: the minimal radius (censored samples left out)
//!
//! and report `<x^p>` with bootstrap half-widths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::minrad::{cube, RadiusFunctionals};
use super::{mu_d, MinimalRadiusSample, MomentEstimate};
use crate::corrector::{effective, flux, solve_cell, CorrectorOptions, CorrectorSet};
use crate::ensemble::{derive_seed, sample, EnsembleSpec};
use crate::error::{Error, Result};
use crate::fluxcor::{growth_profile, solve_sigma, FluxCorrector};
use crate::lattice::Lattice;

pub const LABELS: [&str; 4] = ["grad_energy", "box_average", "sigma_growth", "chi_star"];

fn default_p_list() -> Vec<u32> {
    vec![1, 2]
}

fn default_theta() -> f64 {
    0.1
}

fn default_unit() -> f64 {
    1.0
}

fn default_max_p() -> u32 {
    4
}

fn default_resamples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctOptions {
    pub n_samples: usize,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<u32>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Radius of the unit cube `Q_1`, in physical units.
    #[serde(default = "default_unit")]
    pub unit: f64,
    #[serde(default = "default_max_p")]
    pub max_p: u32,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

impl Default for FluctOptions {
    fn default() -> Self {
        Self {
            n_samples: 8,
            p_list: default_p_list(),
            theta: default_theta(),
            unit: default_unit(),
            max_p: default_max_p(),
            resamples: default_resamples(),
        }
    }
}

impl FluctOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 8 {
            return Err(Error::Config(format!("need at least 8 samples, got {}", self.n_samples)));
        }
        if self.p_list.is_empty() || self.p_list.iter().any(|&p| p == 0 || p > self.max_p) {
            return Err(Error::Config(format!("moment orders must lie in 1..={}", self.max_p)));
        }
        if !(self.theta > 0.0) || !(self.unit > 0.0) {
            return Err(Error::Config("theta and unit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityRow {
    pub label: String,
    pub p: u32,
    pub origin: f64,
    pub shifted: f64,
    pub half_width: f64,
    /// Within 3 of the larger half-width.
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctReport {
    pub estimates: Vec<MomentEstimate>,
    pub shifted: Vec<MomentEstimate>,
    pub stationarity: Vec<StationarityRow>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Censored `chi*` fraction at the origin and at the shifted origin.
    pub censored_fraction: [f64; 2],
    pub chi: Vec<MinimalRadiusSample>,
    pub chi_shifted: Vec<MinimalRadiusSample>,
    pub failures: Vec<String>,
}

struct SampleValues {
    /// `[quantity][origin]`, quantities in `LABELS` order without `chi_star`
    values: [[f64; 2]; 3],
    chi: [MinimalRadiusSample; 2],
}

fn grad_energy(set: &CorrectorSet, sigma: &FluxCorrector, center: usize, unit: f64) -> Result<f64> {
    let l = *set.lattice();
    let d = l.d();
    let win = cube(&l, center, unit)?;
    let mut total = 0.0;
    let mut unit_step = vec![0isize; d + 1];
    win.for_each(|s, _| {
        for g in &set.grad {
            for m in 0..d {
                total += g.component(m).values()[s].powi(2);
            }
        }
        for m in 0..d {
            unit_step.iter_mut().for_each(|v| *v = 0);
            unit_step[m] = 1;
            let next = l.offset_index(s, &unit_step);
            for j in 0..d {
                for k in 0..=d {
                    for i in 0..=d {
                        let v = sigma.get(k, i, j).values();
                        total += ((v[next] - v[s]) / l.h()).powi(2);
                    }
                }
            }
        }
    });
    Ok(total / win.len() as f64)
}

fn box_average(set: &CorrectorSet, sigma: &FluxCorrector, center: usize, unit: f64) -> Result<f64> {
    let d = set.lattice().d();
    let mut total = 0.0;
    for p in &set.phi {
        total += p.box_average(center, unit)?.powi(2);
    }
    for j in 0..d {
        for k in 0..=d {
            for i in 0..=d {
                total += sigma.get(k, i, j).box_average(center, unit)?.powi(2);
            }
        }
    }
    Ok(total)
}

fn sigma_growth(sigma: &FluxCorrector, center: usize, unit: f64) -> Result<f64> {
    let l = sigma.lattice();
    let d = l.d();
    let r = 0.25 * l.length();
    let mut total = 0.0;
    for j in 0..d {
        total += growth_profile(&sigma.time_row(j), &[r], center, unit)?[0].mean_square;
    }
    Ok(total / d as f64 / mu_d(r / unit, d).powi(2))
}

fn one_sample(spec: &EnsembleSpec, lattice: &Lattice, seed: u64, opts: &FluctOptions, copts: &CorrectorOptions) -> Result<SampleValues> {
    let a = sample(spec, lattice, seed)?;
    let set = solve_cell(&a, 0.0, copts)?;
    let abar = effective(&a, &set)?;
    let sigma = solve_sigma(&flux(&a, &set, &abar)?)?;
    let centers = [0, shifted_origin(lattice)];
    let radius = RadiusFunctionals::new(&set, &sigma)?;
    let mut values = [[0.0; 2]; 3];
    for (c, &z) in centers.iter().enumerate() {
        values[0][c] = grad_energy(&set, &sigma, z, opts.unit)?;
        values[1][c] = box_average(&set, &sigma, z, opts.unit)?;
        values[2][c] = sigma_growth(&sigma, z, opts.unit)?;
    }
    let chi = [radius.sample(centers[0], opts.theta)?, radius.sample(centers[1], opts.theta)?];
    Ok(SampleValues { values, chi })
}

/// The site at `(n/2, ..., n/2, n_t/2)`.
pub fn shifted_origin(l: &Lattice) -> usize {
    let x = vec![l.n() / 2; l.d()];
    l.index(&x, l.n_t() / 2)
}

/// Monte Carlo suite over `opts.n_samples` samples seeded from `seed`.
/// Failed samples are counted and left out.
pub fn fluct_suite(
    spec: &EnsembleSpec,
    lattice: &Lattice,
    opts: &FluctOptions,
    seed: u64,
    copts: &CorrectorOptions,
) -> Result<FluctReport> {
    spec.validate()?;
    opts.validate()?;
    let results: Vec<Result<SampleValues>> = (0..opts.n_samples)
        .into_par_iter()
        .map(|s| one_sample(spec, lattice, derive_seed(seed, s as u64), opts, copts))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(format!("sample {s}: {e}")),
        }
    }
    if ok.is_empty() {
        return Err(Error::Config(format!("every sample failed: {}", failures.join("; "))));
    }
    let mut estimates = Vec::new();
    let mut shifted = Vec::new();
    let mut stationarity = Vec::new();
    let mut censored_fraction = [0.0; 2];
    for (q, label) in LABELS.iter().enumerate() {
        for &p in &opts.p_list {
            let mut pair = Vec::with_capacity(2);
            for c in 0..2 {
                let x: Vec<f64> = if q < 3 {
                    ok.iter().map(|v| v.values[q][c]).collect()
                } else {
                    ok.iter().filter(|v| !v.chi[c].censored).map(|v| v.chi[c].chi).collect()
                };
                let boot_seed = derive_seed(seed ^ 0x0b00_7500, (q * 16 + p as usize) as u64);
                pair.push(MomentEstimate::from_values(label, p, &x, opts.resamples, boot_seed));
            }
            stationarity.push(StationarityRow {
                label: label.to_string(),
                p,
                origin: pair[0].estimate,
                shifted: pair[1].estimate,
                half_width: pair[0].half_width.max(pair[1].half_width),
                agree: pair[0].agrees_with(&pair[1], 3.0),
            });
            shifted.push(pair.pop().unwrap());
            estimates.push(pair.pop().unwrap());
        }
    }
    for (c, frac) in censored_fraction.iter_mut().enumerate() {
        *frac = ok.iter().filter(|v| v.chi[c].censored).count() as f64 / ok.len() as f64;
    }
    let n_ok = ok.len();
    let (chi, chi_shifted) = ok.into_iter().map(|v| { let [a, b] = v.chi; (a, b) }).unzip();
    Ok(FluctReport {
        estimates,
        shifted,
        stationarity,
        n_ok,
        n_failed: failures.len(),
        censored_fraction,
        chi,
        chi_shifted,
        failures,
    })
}
