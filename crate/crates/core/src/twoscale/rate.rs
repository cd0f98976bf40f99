//! Monte Carlo study of `|u_eps - u_0|` as `eps` shrinks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expansion::{expansion, CellData, ExpansionOptions};
use super::march::{march_pair, MacroCoefficient};
use super::{CylinderProblem, Geometry, MacroGrid, Source};
use crate::corrector::{CorrectorOptions, EffectiveTensor};
use crate::ensemble::{derive_seed, sample, EnsembleSpec};
use crate::error::{Error, Result};
use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TilingMode {
    /// One cell sample per Monte Carlo sample, tiled periodically, with its
    /// own `a-bar`. The same cell serves every `eps` of that sample.
    #[default]
    Locked,
    /// The ensemble evaluated pointwise on the whole macro grid; `a-bar`
    /// is the average over independent cell samples.
    Fresh,
}

fn default_r0() -> f64 {
    1.0
}

fn default_abar_samples() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSetup {
    pub eps_list: Vec<f64>,
    pub n_samples: usize,
    #[serde(default = "default_r0")]
    pub r0: f64,
    pub t_end: f64,
    #[serde(default = "torus")]
    pub geometry: Geometry,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub mode: TilingMode,
    /// Cell samples averaged for `a-bar` in fresh mode.
    #[serde(default = "default_abar_samples")]
    pub abar_samples: usize,
}

fn torus() -> Geometry {
    Geometry::Torus
}

impl RateSetup {
    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() || self.n_samples == 0 {
            return Err(Error::Config("rate experiment needs eps values and samples".into()));
        }
        for &e in &self.eps_list {
            let inv = 1.0 / e;
            if !(e > 0.0 && e <= 1.0) || (inv.log2() - inv.log2().round()).abs() > 1e-9 {
                return Err(Error::Config(format!("eps = {e} is not dyadic")));
            }
        }
        if self.mode == TilingMode::Fresh && self.abar_samples == 0 {
            return Err(Error::Config("fresh mode needs at least one a-bar sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub eps: f64,
    pub sample: usize,
    pub err_l2: f64,
    /// `|w_eps|` in `L^2`; `NaN` in fresh mode (no correctors).
    pub w_norm: f64,
    /// Relative residual of the expansion; `NaN` in fresh mode.
    pub residual: f64,
    pub u0_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub eps: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_err: f64,
    /// Standard error of `mean_err`.
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub mode: TilingMode,
    pub rows: Vec<RateRow>,
    pub summary: Vec<RateSummary>,
    /// Least-squares slope of `log mean_err` against `log eps`.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    /// Set when the slope is undefined (vanishing errors or too few points).
    pub flagged: bool,
    /// `a-bar` used in fresh mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abar: Option<EffectiveTensor>,
}

/// Least-squares slope of `y` against `x` and its standard error given
/// independent standard errors `se` of the `y` values.
pub fn fit_slope(x: &[f64], y: &[f64], se: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n || se.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let var: f64 = x.iter().zip(se).map(|(a, s)| ((a - mx) / sxx).powi(2) * s * s).sum();
    (slope.is_finite()).then_some((slope, var.sqrt()))
}

/// Runs every `(sample, eps)` pair; failures are recorded per row and the
/// experiment carries on.
pub fn rate_experiment(
    spec: &EnsembleSpec,
    cell: &Lattice,
    setup: &RateSetup,
    seed: u64,
    opts: &CorrectorOptions,
) -> Result<RateReport> {
    spec.validate()?;
    setup.validate()?;
    let problem = |eps: f64| CylinderProblem {
        d: cell.d(),
        r0: setup.r0,
        t_end: setup.t_end,
        eps,
        source: setup.source,
        geometry: setup.geometry,
    };
    // fail early on grids that cannot be built
    for &eps in &setup.eps_list {
        MacroGrid::new(&problem(eps), cell.h(), cell.tau())?;
    }
    let abar = match setup.mode {
        TilingMode::Locked => None,
        TilingMode::Fresh => {
            let list = (0..setup.abar_samples)
                .into_par_iter()
                .map(|i| {
                    let a = sample(spec, cell, derive_seed(seed ^ 0xa5a5_a5a5, i as u64))?;
                    Ok(CellData::solve(a, opts, false)?.abar)
                })
                .collect::<Result<Vec<_>>>()?;
            EffectiveTensor::average(&list)
        }
    };
    let ell = spec.ell.unwrap_or(cell.h());
    let exp_opts = ExpansionOptions { solve: opts.solve, drop_sigma_terms: false };

    let per_sample: Vec<Vec<RateRow>> = (0..setup.n_samples)
        .into_par_iter()
        .map(|s| {
            let sample_seed = derive_seed(seed, s as u64);
            let row = |eps: f64, r: Result<(f64, f64, f64, f64)>| match r {
                Ok((err_l2, w_norm, residual, u0_l2)) => {
                    RateRow { eps, sample: s, err_l2, w_norm, residual, u0_l2, error: None }
                }
                Err(e) => RateRow {
                    eps,
                    sample: s,
                    err_l2: f64::NAN,
                    w_norm: f64::NAN,
                    residual: f64::NAN,
                    u0_l2: f64::NAN,
                    error: Some(e.to_string()),
                },
            };
            match setup.mode {
                TilingMode::Locked => {
                    let cell_data = sample(spec, cell, sample_seed).and_then(|a| CellData::solve(a, opts, true));
                    setup
                        .eps_list
                        .iter()
                        .map(|&eps| {
                            let r = cell_data.as_ref().map_err(clone_err).and_then(|c| {
                                let grid = MacroGrid::new(&problem(eps), cell.h(), cell.tau())?;
                                let rep = expansion(c, &grid, &setup.source, &exp_opts)?;
                                Ok((rep.err_l2, rep.w_l2, rep.residual, rep.u0_l2))
                            });
                            row(eps, r)
                        })
                        .collect()
                }
                TilingMode::Fresh => setup
                    .eps_list
                    .iter()
                    .map(|&eps| {
                        let r = (|| {
                            let grid = MacroGrid::new(&problem(eps), cell.h(), cell.tau())?;
                            let coef = MacroCoefficient::Fresh { spec, seed: sample_seed, ell };
                            let abar = abar.as_ref().expect("fresh mode computes a-bar");
                            let st = march_pair(coef, abar, &grid, &setup.source, &opts.solve, |_| Ok(()))?;
                            Ok((st.err_l2, f64::NAN, f64::NAN, st.u0_l2))
                        })();
                        row(eps, r)
                    })
                    .collect(),
            }
        })
        .collect();
    let mut rows: Vec<RateRow> = per_sample.into_iter().flatten().collect();
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps).then(a.sample.cmp(&b.sample)));

    let summary: Vec<RateSummary> = setup
        .eps_list
        .iter()
        .map(|&eps| {
            let ok: Vec<f64> = rows.iter().filter(|r| r.eps == eps && r.error.is_none()).map(|r| r.err_l2).collect();
            let n = ok.len();
            let mean = ok.iter().sum::<f64>() / n.max(1) as f64;
            let var = if n > 1 { ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            RateSummary {
                eps,
                n_ok: n,
                n_failed: rows.iter().filter(|r| r.eps == eps && r.error.is_some()).count(),
                mean_err: if n > 0 { mean } else { f64::NAN },
                stderr: (var / n.max(1) as f64).sqrt(),
            }
        })
        .collect();

    let scale = rows.iter().filter(|r| r.error.is_none()).map(|r| r.u0_l2).fold(0.0, f64::max);
    let usable = summary.iter().all(|s| s.n_ok > 0 && s.mean_err > 1e-9 * scale);
    let fit = if usable {
        let x: Vec<f64> = summary.iter().map(|s| s.eps.ln()).collect();
        let y: Vec<f64> = summary.iter().map(|s| s.mean_err.ln()).collect();
        let se: Vec<f64> = summary.iter().map(|s| s.stderr / s.mean_err).collect();
        fit_slope(&x, &y, &se)
    } else {
        None
    };
    Ok(RateReport {
        mode: setup.mode,
        rows,
        summary,
        slope: fit.map(|f| f.0),
        slope_stderr: fit.map(|f| f.1),
        flagged: fit.is_none(),
        abar,
    })
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::NotConverged(r) => Error::NotConverged(*r),
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x: Vec<f64> = [0.5f64, 0.25, 0.125].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 1.0).collect();
        let (s, se) = fit_slope(&x, &y, &[0.0; 3]).unwrap();
        assert!((s - 0.7).abs() < 1e-12 && se == 0.0);
        let (_, se1) = fit_slope(&x, &y, &[0.1; 3]).unwrap();
        let (_, se2) = fit_slope(&x, &y, &[0.1 / 2f64.sqrt(); 3]).unwrap();
        assert!((se1 / se2 - 2f64.sqrt()).abs() < 1e-12);
        assert!(fit_slope(&x[..1], &y[..1], &[0.0]).is_none());
    }

    #[test]
    fn non_dyadic_eps_rejected() {
        let s = RateSetup {
            eps_list: vec![0.3],
            n_samples: 1,
            r0: 1.0,
            t_end: 0.1,
            geometry: Geometry::Torus,
            source: Source::default(),
            mode: TilingMode::Locked,
            abar_samples: 1,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn constant_ensemble_is_flagged() {
        let cell = Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let setup = RateSetup {
            eps_list: vec![0.5, 0.25],
            n_samples: 2,
            r0: 1.0,
            t_end: 0.05,
            geometry: Geometry::Torus,
            source: Source::default(),
            mode: TilingMode::Locked,
            abar_samples: 1,
        };
        let rep = rate_experiment(&EnsembleSpec::constant(2.0), &cell, &setup, 7, &CorrectorOptions::default()).unwrap();
        assert!(rep.flagged && rep.slope.is_none());
        assert_eq!(rep.rows.len(), 4);
        assert!(rep.rows.iter().all(|r| r.error.is_none() && r.err_l2 < 1e-9 * r.u0_l2));
    }

    #[test]
    fn fresh_mode_runs_and_orders_rows() {
        let cell = Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let spec = EnsembleSpec::two_phase(crate::ensemble::EnsembleKind::Checkerboard, 1.0, 4.0, Some(0.5));
        let setup = RateSetup {
            eps_list: vec![0.5, 0.25],
            n_samples: 2,
            r0: 1.0,
            t_end: 0.05,
            geometry: Geometry::Torus,
            source: Source::default(),
            mode: TilingMode::Fresh,
            abar_samples: 2,
        };
        let rep = rate_experiment(&spec, &cell, &setup, 7, &CorrectorOptions::default()).unwrap();
        assert_eq!(rep.rows.iter().map(|r| (r.eps, r.sample)).collect::<Vec<_>>(), vec![(0.5, 0), (0.5, 1), (0.25, 0), (0.25, 1)]);
        assert!(rep.rows.iter().all(|r| r.err_l2 > 0.0 && r.w_norm.is_nan()));
        assert!(rep.abar.is_some() && rep.slope.is_some());
    }
}
