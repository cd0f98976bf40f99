//! Macroscopic problems `(d_t + L_eps) u = F` and the two-scale expansion.
//!
//! The microscale is realized through the cell lattice: the macro grid has
//! spacing `h = eps * h_cell` and step `tau = eps^2 * tau_cell`, so node
//! `m` at level `k` sits at the cell site `(m mod n, k mod n_t)`. A cell
//! torus of side `L_cell` and time period `P` therefore repeats with macro
//! period `eps * L_cell` in space and `eps^2 * P` in time.
//!
//! Cylinders `(0, R0)^d x (0, T)` are stored on a periodic grid of `N`
//! points per axis whose node `0` carries the zero Dirichlet value. The
//! torus setting drops that mask.

mod expansion;
mod march;
mod rate;
mod smoothing;

pub use expansion::{expansion, CellData, ExpansionOptions, ExpansionReport, Tiler};
pub use march::{
    energy_balance, march_pair, solve_eps, solve_hom, EnergyBalance, MacroCoefficient, PairLevel,
    PairStats, Solution,
};
pub use rate::{fit_slope, rate_experiment, RateReport, RateRow, RateSetup, RateSummary, TilingMode};
pub use smoothing::{smooth_k, smooth_s, SpatialKernel, TimeBoundary, TimeKernel};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Zero initial and lateral Dirichlet data on `(0, R0)^d x (0, T)`.
    #[default]
    Cylinder,
    /// Periodic in space with period `R0`, zero initial data.
    Torus,
}

/// Right-hand side of the macroscopic problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Zero,
    /// `F = amplitude * prod_i sin(2 pi x_i / R0)`, constant in time.
    Smooth { amplitude: f64 },
    /// Source of `u = prod_i sin(pi x_i / R0) (1 - e^{-t})` for the operator
    /// `d_t - c Laplace`; cylinders only.
    Manufactured { c: f64 },
    /// Divergence form `F = D_1^b f_1` with
    /// `f_1 = amplitude * prod_i sin^2(pi x_i / R0)`.
    Divergence { amplitude: f64 },
}

impl Default for Source {
    fn default() -> Self {
        Source::Smooth { amplitude: 1.0 }
    }
}

impl Source {
    /// Exact solution for the manufactured source.
    pub fn exact(&self, grid: &MacroGrid, x: &[f64], t: f64) -> Option<f64> {
        match self {
            Source::Manufactured { .. } => {
                let p: f64 = x.iter().map(|&xi| (PI * xi / grid.r0).sin()).product();
                Some(p * (1.0 - (-t).exp()))
            }
            _ => None,
        }
    }

    /// Source values at level `k` (zero on Dirichlet nodes).
    pub fn level(&self, grid: &MacroGrid, k: usize) -> Vec<f64> {
        let n = grid.nodes();
        let t = grid.time(k);
        let r0 = grid.r0;
        let mut out = vec![0.0; n];
        match *self {
            Source::Zero => {}
            Source::Smooth { amplitude } => {
                for (z, v) in out.iter_mut().enumerate() {
                    let x = grid.position(z);
                    *v = amplitude
                        * x[..grid.d].iter().map(|&xi| (2.0 * PI * xi / r0).sin()).product::<f64>();
                }
            }
            Source::Manufactured { c } => {
                let lam = c * grid.d as f64 * (PI / r0).powi(2);
                for (z, v) in out.iter_mut().enumerate() {
                    let x = grid.position(z);
                    let p: f64 = x[..grid.d].iter().map(|&xi| (PI * xi / r0).sin()).product();
                    *v = p * (-t).exp() + lam * p * (1.0 - (-t).exp());
                }
            }
            Source::Divergence { amplitude } => {
                let f: Vec<f64> = (0..n)
                    .map(|z| {
                        let x = grid.position(z);
                        amplitude
                            * x[..grid.d].iter().map(|&xi| (PI * xi / r0).sin().powi(2)).product::<f64>()
                    })
                    .collect();
                crate::lattice::backward_diff_acc(&f, &mut out, &grid.shape(), 0, 1.0 / grid.h);
            }
        }
        if let Some(mask) = grid.boundary_mask() {
            for (v, &b) in out.iter_mut().zip(&mask) {
                if b {
                    *v = 0.0;
                }
            }
        }
        out
    }
}

/// A macroscopic initial-boundary value problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderProblem {
    pub d: usize,
    pub r0: f64,
    pub t_end: f64,
    pub eps: f64,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub geometry: Geometry,
}

impl CylinderProblem {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Error::Config(format!("dimension d = {} must be 1, 2 or 3", self.d)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Config(format!("eps = {} must lie in (0, 1]", self.eps)));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite() && self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config("R0 and T must be positive".into()));
        }
        if matches!(self.source, Source::Manufactured { .. }) && self.geometry == Geometry::Torus {
            return Err(Error::Config("the manufactured source needs the cylinder".into()));
        }
        Ok(())
    }
}

/// The macroscopic space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroGrid {
    pub d: usize,
    /// Points per spatial axis.
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    /// Number of implicit steps; levels run `0..=steps`.
    pub steps: usize,
    pub r0: f64,
    pub eps: f64,
    pub geometry: Geometry,
    /// Cell spacings the grid was derived from.
    pub h_cell: f64,
    pub tau_cell: f64,
}

impl MacroGrid {
    /// Grid resolving `eps` with cell spacings `h_cell`, `tau_cell`.
    /// Errors unless `eps * h_cell <= eps / 8` and `R0 / (eps h_cell)` is
    /// a whole number.
    pub fn new(problem: &CylinderProblem, h_cell: f64, tau_cell: f64) -> Result<Self> {
        problem.validate()?;
        if h_cell > 0.125 * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!(
                "micro spacing {} exceeds eps/8 (cell spacing {h_cell} > 1/8)",
                problem.eps * h_cell
            )));
        }
        let h = problem.eps * h_cell;
        let tau = problem.eps * problem.eps * tau_cell;
        let ratio = problem.r0 / h;
        let n = ratio.round() as usize;
        if (ratio - n as f64).abs() > 1e-6 * ratio || n < 4 {
            return Err(Error::Config(format!(
                "R0 = {} is not a whole number of macro spacings {h}",
                problem.r0
            )));
        }
        let steps = ((problem.t_end / tau).round() as usize).max(1);
        Ok(Self {
            d: problem.d,
            n,
            h: problem.r0 / n as f64,
            tau,
            steps,
            r0: problem.r0,
            eps: problem.eps,
            geometry: problem.geometry,
            h_cell,
            tau_cell,
        })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(&vec![self.n; self.d])
    }

    pub fn nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn t_end(&self) -> f64 {
        self.steps as f64 * self.tau
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }

    pub fn coords(&self, mut z: usize) -> [usize; 3] {
        let mut c = [0; 3];
        for ci in c.iter_mut().take(self.d) {
            *ci = z % self.n;
            z /= self.n;
        }
        c
    }

    pub fn position(&self, z: usize) -> [f64; 3] {
        let c = self.coords(z);
        let mut x = [0.0; 3];
        for i in 0..self.d {
            x[i] = c[i] as f64 * self.h;
        }
        x
    }

    /// `Some(mask)` with `true` on Dirichlet nodes for cylinders.
    pub fn boundary_mask(&self) -> Option<Vec<bool>> {
        match self.geometry {
            Geometry::Torus => None,
            Geometry::Cylinder => Some(
                (0..self.nodes())
                    .map(|z| self.coords(z)[..self.d].contains(&0))
                    .collect(),
            ),
        }
    }

    /// Weight `h^d` of one node in spatial sums.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// True when the cutoff vanishes identically, so the expansion carries
    /// no corrector terms.
    pub fn cutoff_is_trivial(&self) -> bool {
        let t_ok = self.t_end().sqrt() > 2.0 * self.eps;
        let x_ok = self.geometry == Geometry::Torus || 0.5 * self.r0 > 2.0 * self.eps;
        self.eps >= 1.0 || !(t_ok && x_ok)
    }

    /// Cutoff `Psi_eps` at level `k`.
    pub fn cutoff(&self, k: usize) -> Vec<f64> {
        let eps = self.eps;
        let ramp = |dist: f64| smoothstep((dist - 2.0 * eps) / (2.0 * eps));
        let pt = ramp(self.time(k).sqrt());
        (0..self.nodes())
            .map(|z| match self.geometry {
                Geometry::Torus => pt,
                Geometry::Cylinder => {
                    let x = self.position(z);
                    let dist = x[..self.d]
                        .iter()
                        .map(|&xi| xi.min(self.r0 - xi))
                        .fold(f64::INFINITY, f64::min);
                    pt * ramp(dist)
                }
            })
            .collect()
    }
}

/// Quintic smoothstep clamped to `[0, 1]`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}
