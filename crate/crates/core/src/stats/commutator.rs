//! Homogenization commutator
//! `H = int h . (a^eps - abar)(grad u_eps - grad u_0 - grad_y phi_i phi_i)`
//! with the test functions `phi_i` of the expansion, and its variance
//! scaling across `eps`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectorOptions;
use crate::ensemble::{derive_seed, sample, EnsembleSpec};
use crate::error::{Error, Result};
use crate::lattice::{forward_diff_into, Lattice};
use crate::solver::SolveOptions;
use crate::twoscale::{march_pair, CellData, CylinderProblem, Geometry, MacroCoefficient, MacroGrid, Source, Tiler};

/// Vector test function `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Zero,
    /// `amplitude e_direction prod_i b(x_i / R_0) b(t / T)` with
    /// `b(s) = (4 s (1 - s))^3` on `[0, 1]`.
    Bump {
        #[serde(default)]
        direction: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `e_direction` everywhere; not compactly supported, so rejected.
    Uniform {
        #[serde(default)]
        direction: usize,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for TestFunction {
    fn default() -> Self {
        TestFunction::Bump { direction: 0, amplitude: 1.0 }
    }
}

fn bump(s: f64) -> f64 {
    if (0.0..=1.0).contains(&s) {
        (4.0 * s * (1.0 - s)).powi(3)
    } else {
        0.0
    }
}

impl TestFunction {
    fn check(&self, d: usize) -> Result<()> {
        match *self {
            TestFunction::Zero => Ok(()),
            TestFunction::Bump { direction, .. } if direction < d => Ok(()),
            TestFunction::Bump { direction, .. } => Err(Error::Config(format!("direction {direction} out of range"))),
            TestFunction::Uniform { .. } => {
                Err(Error::Config("test function must vanish on the parabolic boundary".into()))
            }
        }
    }

    /// Direction and values at level `k` of `grid`.
    fn level(&self, grid: &MacroGrid, k: usize) -> Option<(usize, Vec<f64>)> {
        match *self {
            TestFunction::Bump { direction, amplitude } => {
                let bt = amplitude * bump(grid.time(k) / grid.t_end());
                let v = (0..grid.nodes())
                    .map(|z| {
                        let x = grid.position(z);
                        bt * (0..grid.d).map(|i| bump(x[i] / grid.r0)).product::<f64>()
                    })
                    .collect();
                Some((direction, v))
            }
            _ => None,
        }
    }
}

/// `H^eps` for one tiled cell; `cell.sigma` is not needed.
pub fn commutator(cell: &CellData, grid: &MacroGrid, source: &Source, test: &TestFunction, opts: &SolveOptions) -> Result<f64> {
    let d = grid.d;
    test.check(d)?;
    if matches!(test, TestFunction::Zero) {
        return Ok(0.0);
    }
    let tiler = Tiler::new(cell.lattice(), grid)?;
    let shape = grid.shape();
    let nodes = grid.nodes();
    let weight = grid.tau * grid.cell_volume();
    let mut total = 0.0;
    march_pair(MacroCoefficient::Tiled(&cell.a), &cell.abar, grid, source, opts, |lv| {
        let Some((dir, hv)) = test.level(grid, lv.k) else {
            return Ok(());
        };
        let diff: Vec<f64> = lv.u_eps.iter().zip(lv.u0).map(|(a, b)| a - b).collect();
        let mut g = vec![vec![0.0; nodes]; d];
        for (m, gm) in g.iter_mut().enumerate() {
            forward_diff_into(&diff, gm, &shape, m, 1.0 / grid.h);
            for (i, grad) in cell.correctors.grad.iter().enumerate() {
                let dphi = tiler.level(grad.component(m).values(), lv.k);
                for (o, (a, b)) in gm.iter_mut().zip(dphi.iter().zip(&lv.test[i])) {
                    *o -= a * b;
                }
            }
        }
        let mut f = vec![vec![0.0; nodes]; d];
        lv.scheme.flux_into(&g, &mut f);
        let mut s = 0.0;
        for z in 0..nodes {
            if hv[z] != 0.0 {
                let ag: f64 = (0..d).map(|m| lv.abar[dir * d + m] * g[m][z]).sum();
                s += hv[z] * (f[dir][z] - ag);
            }
        }
        total += weight * s;
        Ok(())
    })?;
    Ok(total)
}

fn default_r0() -> f64 {
    0.5
}

fn torus() -> Geometry {
    Geometry::Torus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutatorSetup {
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
    pub test: TestFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutatorRow {
    pub eps: f64,
    pub sample: usize,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutatorSummary {
    pub eps: f64,
    pub n_ok: usize,
    pub mean: f64,
    pub sd: f64,
    /// `sd * eps^(-(d+2)/2)`
    pub scaled_sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<CommutatorRow>,
    pub summary: Vec<CommutatorSummary>,
    /// Largest over smallest `scaled_sd`; `None` when one of them is 0.
    pub ratio: Option<f64>,
}

/// `H^eps` for every `(sample, eps)`, one tiled cell per sample shared by
/// all `eps`.
pub fn variance_scaling(
    spec: &EnsembleSpec,
    cell: &Lattice,
    setup: &CommutatorSetup,
    seed: u64,
    copts: &CorrectorOptions,
) -> Result<ScalingReport> {
    spec.validate()?;
    setup.test.check(cell.d())?;
    if setup.eps_list.is_empty() || setup.n_samples < 2 {
        return Err(Error::Config("commutator scaling needs eps values and at least 2 samples".into()));
    }
    let d = cell.d();
    let grid = |eps: f64| {
        let p = CylinderProblem { d, r0: setup.r0, t_end: setup.t_end, eps, source: setup.source, geometry: setup.geometry };
        MacroGrid::new(&p, cell.h(), cell.tau())
    };
    for &eps in &setup.eps_list {
        grid(eps)?;
    }
    let per_sample: Vec<Vec<CommutatorRow>> = (0..setup.n_samples)
        .into_par_iter()
        .map(|s| {
            let data = sample(spec, cell, derive_seed(seed, s as u64)).and_then(|a| CellData::solve(a, copts, false));
            setup
                .eps_list
                .iter()
                .map(|&eps| {
                    let r = match &data {
                        Ok(c) => grid(eps).and_then(|g| commutator(c, &g, &setup.source, &setup.test, &copts.solve)),
                        Err(e) => Err(Error::Config(e.to_string())),
                    };
                    match r {
                        Ok(value) => CommutatorRow { eps, sample: s, value, error: None },
                        Err(e) => CommutatorRow { eps, sample: s, value: f64::NAN, error: Some(e.to_string()) },
                    }
                })
                .collect()
        })
        .collect();
    let mut rows: Vec<CommutatorRow> = per_sample.into_iter().flatten().collect();
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps).then(a.sample.cmp(&b.sample)));
    let summary: Vec<CommutatorSummary> = setup
        .eps_list
        .iter()
        .map(|&eps| {
            let v: Vec<f64> = rows.iter().filter(|r| r.eps == eps && r.error.is_none()).map(|r| r.value).collect();
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n.max(1) as f64;
            let sd = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { f64::NAN };
            CommutatorSummary { eps, n_ok: n, mean, sd, scaled_sd: sd * eps.powf(-(d as f64 + 2.0) / 2.0) }
        })
        .collect();
    let lo = summary.iter().map(|s| s.scaled_sd).fold(f64::INFINITY, f64::min);
    let hi = summary.iter().map(|s| s.scaled_sd).fold(0.0, f64::max);
    let ratio = (lo > 0.0 && lo.is_finite()).then(|| hi / lo);
    Ok(ScalingReport { rows, summary, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{CoefficientField, EnsembleKind};

    fn grid(eps: f64) -> MacroGrid {
        let p = CylinderProblem { d: 2, r0: 0.5, t_end: 1.0 / 16.0, eps, source: Source::default(), geometry: Geometry::Torus };
        MacroGrid::new(&p, 0.125, 0.125).unwrap()
    }

    #[test]
    fn constant_coefficients_give_exact_zero() {
        let l = Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let c = CellData::solve(CoefficientField::constant(&l, 2.0), &CorrectorOptions::default(), false).unwrap();
        let h = commutator(&c, &grid(0.25), &Source::default(), &TestFunction::default(), &SolveOptions::default()).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn zero_and_unsupported_test_functions() {
        let l = Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let spec = EnsembleSpec::two_phase(EnsembleKind::Checkerboard, 1.0, 4.0, None);
        let c = CellData::solve(sample(&spec, &l, 2).unwrap(), &CorrectorOptions::default(), false).unwrap();
        let g = grid(0.25);
        let o = SolveOptions::default();
        assert_eq!(commutator(&c, &g, &Source::default(), &TestFunction::Zero, &o).unwrap(), 0.0);
        assert!(commutator(&c, &g, &Source::default(), &TestFunction::Uniform { direction: 0 }, &o).is_err());
        assert!(commutator(&c, &g, &Source::default(), &TestFunction::Bump { direction: 2, amplitude: 1.0 }, &o).is_err());
        let h = commutator(&c, &g, &Source::default(), &TestFunction::default(), &o).unwrap();
        assert!(h.is_finite() && h != 0.0);
    }

    #[test]
    fn bump_vanishes_at_the_ends() {
        assert_eq!(bump(0.0), 0.0);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(0.5), 1.0);
    }

    #[test]
    fn scaling_table_has_one_row_per_pair() {
        let l = Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let spec = EnsembleSpec::two_phase(EnsembleKind::Checkerboard, 1.0, 4.0, None);
        let setup = CommutatorSetup {
            eps_list: vec![0.25, 0.125],
            n_samples: 3,
            r0: 0.5,
            t_end: 1.0 / 16.0,
            geometry: Geometry::Torus,
            source: Source::default(),
            test: TestFunction::default(),
        };
        let rep = variance_scaling(&spec, &l, &setup, 4, &CorrectorOptions::default()).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.summary.iter().all(|s| s.n_ok == 3 && s.sd > 0.0));
        assert!(rep.ratio.unwrap() >= 1.0);
    }
}
