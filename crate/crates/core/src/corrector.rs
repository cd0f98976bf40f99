//! Corrector cell problems on the space-time torus, the flux `q` and the
//! effective tensor.
//!
//! The discrete operator is
//! `beta u + D_t^b u - sum_i D_i^b F_i(grad_f u)` with the flux
//! `F_i(g) = a_ii^face g_i + sum_{k != i} a_ik g_k`. The diagonal entry is
//! averaged onto the face between `z` and `z + h e_i` where the forward
//! difference `g_i` lives. Because `a-bar` and `q` are built from the same
//! `F`, the backward space-time divergence of `q` is exactly the corrector
//! residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::CoefficientField;
use crate::error::{Error, Result};
use crate::lattice::{
    backward_diff_acc, forward_diff_into, roll_into, Lattice, ScalarField, Shape, StField,
    VectorField,
};
use crate::solver::{
    bicgstab_slices, cg_slices, parabolic_preconditioner, LinearOperator, SolveOptions,
    SolveReport,
};

/// Per-site flux matrices on a periodic array whose first `d` axes are
/// spatial with spacing `h`.
#[derive(Debug, Clone)]
pub struct FluxScheme {
    shape: Shape,
    d: usize,
    h: f64,
    /// `m[i * d + k]` holds the site values of the `(i, k)` flux entry.
    m: Vec<Vec<f64>>,
    off_diagonal: bool,
}

impl FluxScheme {
    /// `entries` holds `d * d` row-major values per site of `shape`.
    pub fn new(shape: Shape, d: usize, h: f64, entries: &[f64]) -> Self {
        let len = shape.len();
        assert_eq!(entries.len(), len * d * d);
        let mut m = vec![vec![0.0; len]; d * d];
        for s in 0..len {
            for ik in 0..d * d {
                m[ik][s] = entries[s * d * d + ik];
            }
        }
        for i in 0..d {
            let mut shift = vec![0isize; shape.rank()];
            shift[i] = 1;
            let mut up = vec![0.0; len];
            roll_into(&m[i * d + i], &mut up, &shape, &shift);
            for (a, b) in m[i * d + i].iter_mut().zip(&up) {
                *a = 0.5 * (*a + b);
            }
        }
        let off_diagonal = (0..d)
            .flat_map(|i| (0..d).filter(move |&k| k != i).map(move |k| i * d + k))
            .any(|ik| m[ik].iter().any(|&v| v != 0.0));
        Self { shape, d, h, m, off_diagonal }
    }

    pub fn from_field(a: &CoefficientField) -> Self {
        let l = a.lattice();
        Self::new(l.shape(), l.d(), l.h(), a.entries())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Site values of the `(i, k)` flux entry (face-averaged when `i == k`).
    pub fn entry(&self, i: usize, k: usize) -> &[f64] {
        &self.m[i * self.d + k]
    }

    pub fn mean_diagonal(&self) -> f64 {
        let len = self.shape.len() as f64;
        (0..self.d).map(|i| self.entry(i, i).iter().sum::<f64>() / len).sum::<f64>() / self.d as f64
    }

    /// Forward gradient of `x` into `g` (one array per spatial axis).
    pub fn grad_into(&self, x: &[f64], g: &mut [Vec<f64>]) {
        for (i, gi) in g.iter_mut().enumerate() {
            forward_diff_into(x, gi, &self.shape, i, 1.0 / self.h);
        }
    }

    /// `out_i = sum_k M_ik g_k`.
    pub fn flux_into(&self, g: &[Vec<f64>], out: &mut [Vec<f64>]) {
        let d = self.d;
        for i in 0..d {
            let o = &mut out[i];
            let mii = &self.m[i * d + i];
            for ((v, &a), &gi) in o.iter_mut().zip(mii).zip(&g[i]) {
                *v = a * gi;
            }
            if self.off_diagonal {
                for k in (0..d).filter(|&k| k != i) {
                    for ((v, &a), &gk) in o.iter_mut().zip(&self.m[i * d + k]).zip(&g[k]) {
                        *v += a * gk;
                    }
                }
            }
        }
    }

    /// `y -= sum_i D_i^b f_i`.
    pub fn sub_div_into(&self, f: &[Vec<f64>], y: &mut [f64]) {
        for (i, fi) in f.iter().enumerate() {
            backward_diff_acc(fi, y, &self.shape, i, -1.0 / self.h);
        }
    }

    /// `y = -sum_i D_i^b F_i(grad_f x)`.
    pub fn neg_div_flux_grad(&self, x: &[f64], y: &mut [f64]) {
        let len = x.len();
        let mut g = vec![vec![0.0; len]; self.d];
        let mut f = vec![vec![0.0; len]; self.d];
        self.grad_into(x, &mut g);
        self.flux_into(&g, &mut f);
        y.iter_mut().for_each(|v| *v = 0.0);
        self.sub_div_into(&f, y);
    }

    /// `sum_i D_i^b F_i(e_j)`: the corrector right-hand side.
    pub fn div_flux_unit(&self, j: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.shape.len()];
        for i in 0..self.d {
            backward_diff_acc(self.entry(i, j), &mut y, &self.shape, i, 1.0 / self.h);
        }
        y
    }
}

/// `beta u + D_t^b u - div_b F(grad_f u)` on the full space-time lattice.
#[derive(Debug, Clone)]
pub struct CorrectorOperator {
    scheme: FluxScheme,
    beta: f64,
    tau: f64,
}

impl CorrectorOperator {
    pub fn new(a: &CoefficientField, beta: f64) -> Self {
        Self { scheme: FluxScheme::from_field(a), beta, tau: a.lattice().tau() }
    }

    pub fn scheme(&self) -> &FluxScheme {
        &self.scheme
    }
}

impl LinearOperator for CorrectorOperator {
    fn len(&self) -> usize {
        self.scheme.shape.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.scheme.neg_div_flux_grad(x, y);
        let t_axis = self.scheme.d;
        backward_diff_acc(x, y, &self.scheme.shape, t_axis, 1.0 / self.tau);
        if self.beta != 0.0 {
            for (v, &xi) in y.iter_mut().zip(x) {
                *v += self.beta * xi;
            }
        }
    }

    fn has_constant_nullspace(&self) -> bool {
        self.beta == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorMethod {
    /// One preconditioned BiCGStab solve of the space-time system.
    #[default]
    SpaceTime,
    /// Implicit Euler around the time period until the state repeats.
    TimeMarching,
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectorOptions {
    pub solve: SolveOptions,
    pub method: CorrectorMethod,
    /// Fourier preconditioner for the space-time solve.
    pub precondition: bool,
    /// Period budget for time marching.
    pub max_periods: usize,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            method: CorrectorMethod::SpaceTime,
            precondition: true,
            max_periods: 2000,
        }
    }
}

/// The `d` correctors of one coefficient sample.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub beta: f64,
    pub phi: Vec<ScalarField>,
    pub grad: Vec<VectorField>,
    pub reports: Vec<SolveReport>,
}

impl CorrectorSet {
    pub fn lattice(&self) -> &Lattice {
        self.phi[0].lattice()
    }

    /// RMS of all corrector gradients together.
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g.norm_rms().powi(2)).sum::<f64>().sqrt()
    }

    pub fn phi_norm(&self) -> f64 {
        self.phi.iter().map(|p| p.norm_rms().powi(2)).sum::<f64>().sqrt()
    }

    /// Adds `c_j` to `phi_j`; gradients are untouched.
    pub fn add_constants(&mut self, c: &[f64]) {
        for (p, &cj) in self.phi.iter_mut().zip(c) {
            p.values_mut().iter_mut().for_each(|v| *v += cj);
        }
    }
}

/// Solves the `d` corrector problems
/// `beta phi + D_t^b phi - div_b F(grad_f phi + e_j) = 0`.
pub fn solve_cell(a: &CoefficientField, beta: f64, opts: &CorrectorOptions) -> Result<CorrectorSet> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta = {beta} must be non-negative")));
    }
    let l = *a.lattice();
    let op = CorrectorOperator::new(a, beta);
    let precond = if opts.precondition && opts.method == CorrectorMethod::SpaceTime {
        Some(parabolic_preconditioner(&l, beta, op.scheme.mean_diagonal())?)
    } else {
        None
    };
    let solved: Vec<(Vec<f64>, SolveReport)> = (0..l.d())
        .into_par_iter()
        .map(|j| {
            let rhs = op.scheme.div_flux_unit(j);
            let mut x = vec![0.0; rhs.len()];
            let report = match opts.method {
                CorrectorMethod::SpaceTime => bicgstab_slices(
                    &op,
                    &rhs,
                    &mut x,
                    &opts.solve,
                    precond.as_ref().map(|p| p as &dyn LinearOperator),
                )?,
                CorrectorMethod::TimeMarching => march(&op, &l, &rhs, &mut x, opts)?,
            };
            if report.converged {
                Ok((x, report))
            } else {
                Err(Error::NotConverged(report))
            }
        })
        .collect::<Result<_>>()?;
    let mut phi = Vec::with_capacity(l.d());
    let mut grad = Vec::with_capacity(l.d());
    let mut reports = Vec::with_capacity(l.d());
    for (x, r) in solved {
        let f = ScalarField::from_values(&l, x)?;
        grad.push(f.grad_f());
        phi.push(f);
        reports.push(r);
    }
    Ok(CorrectorSet { beta, phi, grad, reports })
}

/// One time level of the marching scheme: `(beta + 1/tau) u - div_b F_t grad_f u`.
struct LevelOperator {
    scheme: FluxScheme,
    diag: f64,
}

impl LinearOperator for LevelOperator {
    fn len(&self) -> usize {
        self.scheme.shape.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.scheme.neg_div_flux_grad(x, y);
        for (v, &xi) in y.iter_mut().zip(x) {
            *v += self.diag * xi;
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

fn level_scheme(op: &CorrectorOperator, l: &Lattice, t: usize) -> FluxScheme {
    let d = l.d();
    let s = l.spatial_sites();
    let range = t * s..(t + 1) * s;
    FluxScheme {
        shape: l.spatial_shape(),
        d,
        h: l.h(),
        m: op.scheme.m.iter().map(|e| e[range.clone()].to_vec()).collect(),
        off_diagonal: op.scheme.off_diagonal,
    }
}

fn march(
    op: &CorrectorOperator,
    l: &Lattice,
    rhs: &[f64],
    x: &mut [f64],
    opts: &CorrectorOptions,
) -> Result<SolveReport> {
    let s = l.spatial_sites();
    let tau = l.tau();
    let levels: Vec<LevelOperator> = (0..l.n_t())
        .map(|t| LevelOperator { scheme: level_scheme(op, l, t), diag: op.beta + 1.0 / tau })
        .collect();
    let step_opts = SolveOptions { tol: 0.1 * opts.solve.tol, max_iter: opts.solve.max_iter };
    let bnorm = crate::solver::norm(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport { iterations: 0, relative_residual: 0.0, converged: true });
    }
    let mut prev = vec![0.0; s];
    let mut work = vec![0.0; s];
    let mut iterations = 0;
    let mut residual = vec![0.0; x.len()];
    for _ in 0..opts.max_periods {
        for t in 0..l.n_t() {
            for i in 0..s {
                work[i] = prev[i] / tau + rhs[t * s + i];
            }
            let slot = &mut x[t * s..(t + 1) * s];
            let r = cg_slices(&levels[t], &work, slot, &step_opts, None)?;
            iterations += r.iterations;
            prev.copy_from_slice(slot);
        }
        if op.beta == 0.0 {
            crate::solver::remove_mean(x);
        }
        op.apply(x, &mut residual);
        for (r, b) in residual.iter_mut().zip(rhs) {
            *r = b - *r;
        }
        let rel = crate::solver::norm(&residual) / bnorm;
        if rel <= opts.solve.tol {
            return Ok(SolveReport { iterations, relative_residual: rel, converged: true });
        }
        prev.copy_from_slice(&x[(l.n_t() - 1) * s..]);
    }
    op.apply(x, &mut residual);
    for (r, b) in residual.iter_mut().zip(rhs) {
        *r = b - *r;
    }
    let rel = crate::solver::norm(&residual) / bnorm;
    Ok(SolveReport { iterations, relative_residual: rel, converged: rel <= opts.solve.tol })
}

/// Residual `||A phi_j - rhs_j||` per direction, relative to `||rhs_j||`
/// (absolute when the right-hand side vanishes).
pub fn corrector_residual(a: &CoefficientField, set: &CorrectorSet) -> Result<Vec<f64>> {
    let op = CorrectorOperator::new(a, set.beta);
    let mut y = vec![0.0; op.len()];
    set.phi
        .iter()
        .enumerate()
        .map(|(j, p)| {
            a.lattice().check_same(p.lattice())?;
            let rhs = op.scheme.div_flux_unit(j);
            op.apply(p.values(), &mut y);
            let r = y.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let b = crate::solver::norm(&rhs);
            Ok(if b > 0.0 { r / b } else { r })
        })
        .collect()
}

/// The homogenized matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveTensor {
    pub d: usize,
    pub entries: Vec<f64>,
}

impl EffectiveTensor {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.d).map(|r| r.to_vec()).collect()
    }

    /// Extreme eigenvalues of the symmetric part.
    pub fn eigen_range(&self) -> (f64, f64) {
        let m = nalgebra::DMatrix::from_row_slice(self.d, self.d, &self.entries);
        let e = ((&m + m.transpose()) * 0.5).symmetric_eigenvalues();
        (e.min(), e.max())
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Mean of several estimates.
    pub fn average(list: &[EffectiveTensor]) -> Option<EffectiveTensor> {
        let first = list.first()?;
        let mut entries = vec![0.0; first.entries.len()];
        for t in list {
            for (e, v) in entries.iter_mut().zip(&t.entries) {
                *e += v / list.len() as f64;
            }
        }
        Some(EffectiveTensor { d: first.d, entries })
    }
}

/// Torus average of `e_i . F(e_j + grad phi_j)`.
pub fn effective(a: &CoefficientField, set: &CorrectorSet) -> Result<EffectiveTensor> {
    let scheme = FluxScheme::from_field(a);
    let d = scheme.d;
    let mut entries = vec![0.0; d * d];
    for j in 0..d {
        let f = total_flux(&scheme, set, j)?;
        for i in 0..d {
            entries[i * d + j] = f[i].iter().sum::<f64>() / f[i].len() as f64;
        }
    }
    Ok(EffectiveTensor { d, entries })
}

fn total_flux(scheme: &FluxScheme, set: &CorrectorSet, j: usize) -> Result<Vec<Vec<f64>>> {
    let phi = &set.phi[j];
    if phi.values().len() != scheme.shape.len() {
        return Err(Error::LatticeMismatch("correctors and coefficients differ".into()));
    }
    let d = scheme.d;
    let len = scheme.shape.len();
    let mut g: Vec<Vec<f64>> = set.grad[j].components().iter().map(|c| c.values().to_vec()).collect();
    for v in g[j].iter_mut() {
        *v += 1.0;
    }
    let mut f = vec![vec![0.0; len]; d];
    scheme.flux_into(&g, &mut f);
    Ok(f)
}

/// `q_{.j}` for every direction `j`.
#[derive(Debug, Clone)]
pub struct FluxField {
    pub q: Vec<StField>,
}

impl FluxField {
    pub fn lattice(&self) -> &Lattice {
        self.q[0].lattice()
    }

    /// Space-time backward divergence of each `q_{.j}`.
    pub fn divergence(&self) -> Vec<ScalarField> {
        self.q.iter().map(|q| q.div_b()).collect()
    }

    /// Largest `|mean q_{i'j}|`.
    pub fn max_mean(&self) -> f64 {
        self.q
            .iter()
            .flat_map(|q| q.components().iter().map(|c| c.mean().abs()))
            .fold(0.0, f64::max)
    }
}

/// `q_ij = abar_ij - F_i(e_j + grad phi_j)` and `q_{(d+1)j} = phi_j - mean phi_j`.
pub fn flux(a: &CoefficientField, set: &CorrectorSet, abar: &EffectiveTensor) -> Result<FluxField> {
    let scheme = FluxScheme::from_field(a);
    let l = *a.lattice();
    let d = l.d();
    let mut q = Vec::with_capacity(d);
    for j in 0..d {
        let f = total_flux(&scheme, set, j)?;
        let mut comps: Vec<ScalarField> = f
            .into_iter()
            .enumerate()
            .map(|(i, fi)| {
                let ab = abar.get(i, j);
                ScalarField::from_raw(&l, fi.into_iter().map(|v| ab - v).collect())
            })
            .collect();
        let mut last = set.phi[j].clone();
        last.project_mean_zero();
        comps.push(last);
        q.push(StField::from_components(&l, comps)?);
    }
    Ok(FluxField { q })
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaRow {
    pub beta: f64,
    pub abar: Option<EffectiveTensor>,
    pub grad_norm: Option<f64>,
    pub phi_norm: Option<f64>,
    pub report: Option<Vec<SolveReport>>,
    pub error: Option<String>,
}

/// Massive correctors for a descending list of `beta` (a trailing `0` is
/// allowed). Failed rows carry the error and the sweep continues.
pub fn beta_sweep(a: &CoefficientField, betas: &[f64], opts: &CorrectorOptions) -> Result<Vec<BetaRow>> {
    for w in betas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Config("betas must be strictly descending".into()));
        }
    }
    if betas.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
        return Err(Error::Config("betas must be non-negative".into()));
    }
    Ok(betas
        .iter()
        .map(|&beta| match solve_cell(a, beta, opts).and_then(|s| Ok((effective(a, &s)?, s))) {
            Ok((abar, set)) => BetaRow {
                beta,
                abar: Some(abar),
                grad_norm: Some(set.grad_norm()),
                phi_norm: Some(set.phi_norm()),
                report: Some(set.reports),
                error: None,
            },
            Err(e) => BetaRow {
                beta,
                abar: None,
                grad_norm: None,
                phi_norm: None,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
