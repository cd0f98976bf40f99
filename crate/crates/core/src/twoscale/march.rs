//! Implicit Euler for `(d_t + L) u = F` on the macro grid.

use std::collections::HashMap;

use num_complex::Complex64;

use super::smoothing::{SpatialKernel, TimeKernel};
use super::{Geometry, MacroGrid, Source};
use crate::corrector::{EffectiveTensor, FluxScheme};
use crate::ensemble::{CoefficientField, EnsembleSpec};
use crate::error::{Error, Result};
use crate::lattice::{backward_diff_acc, forward_diff_into};
use crate::solver::{
    backward_symbol, cg_slices, forward_symbol, FourierMultiplier, LinearOperator, SolveOptions,
    SolveReport,
};

/// Where the macro coefficient at node `m`, level `k` comes from.
#[derive(Debug, Clone, Copy)]
pub enum MacroCoefficient<'a> {
    /// One `d x d` matrix (row-major) everywhere.
    Constant(&'a [f64]),
    /// Periodic tiling of a cell field: `a(m mod n, k mod n_t)`.
    Tiled(&'a CoefficientField),
    /// Pointwise evaluation of an ensemble at cell-unit coordinates
    /// `y = (m + 1/2) h_cell`, `s = (k + 1/2) tau_cell`.
    Fresh { spec: &'a EnsembleSpec, seed: u64, ell: f64 },
}

impl MacroCoefficient<'_> {
    /// Levels sharing a key share their coefficients.
    fn cache_key(&self, k: usize) -> usize {
        match self {
            MacroCoefficient::Constant(_) => 0,
            MacroCoefficient::Tiled(a) => k % a.lattice().n_t(),
            MacroCoefficient::Fresh { .. } => k,
        }
    }

    fn is_fresh(&self) -> bool {
        matches!(self, MacroCoefficient::Fresh { .. })
    }

    fn entries(&self, grid: &MacroGrid, k: usize) -> Result<Vec<f64>> {
        let d = grid.d;
        let nodes = grid.nodes();
        match *self {
            MacroCoefficient::Constant(m) => {
                if m.len() != d * d {
                    return Err(Error::Config(format!("expected a {d}x{d} matrix")));
                }
                Ok(m.iter().copied().cycle().take(nodes * d * d).collect())
            }
            MacroCoefficient::Tiled(a) => {
                let l = a.lattice();
                if l.d() != d {
                    return Err(Error::LatticeMismatch(format!(
                        "cell dimension {} vs macro dimension {d}",
                        l.d()
                    )));
                }
                let t = k % l.n_t();
                let mut out = Vec::with_capacity(nodes * d * d);
                for z in 0..nodes {
                    let c = grid.coords(z);
                    let mut x = [0usize; 3];
                    for i in 0..d {
                        x[i] = c[i] % l.n();
                    }
                    out.extend_from_slice(a.matrix(l.index(&x[..d], t)));
                }
                Ok(out)
            }
            MacroCoefficient::Fresh { spec, seed, ell } => {
                let s = (k as f64 + 0.5) * grid.tau_cell;
                let mut out = Vec::with_capacity(nodes * d * d);
                for z in 0..nodes {
                    let c = grid.coords(z);
                    let mut y = [0.0; 3];
                    for i in 0..d {
                        y[i] = (c[i] as f64 + 0.5) * grid.h_cell;
                    }
                    let v = spec.scalar_at(seed, &y[..d], s, ell)?;
                    for i in 0..d {
                        for j in 0..d {
                            out.push(if i == j { v } else { 0.0 });
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// `u / tau - div_b F grad_f u` with identity rows on Dirichlet nodes.
struct LevelOperator<'a> {
    scheme: &'a FluxScheme,
    inv_tau: f64,
    mask: Option<&'a [bool]>,
}

impl LinearOperator for LevelOperator<'_> {
    fn len(&self) -> usize {
        self.scheme.shape().len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.mask {
            None => self.scheme.neg_div_flux_grad(x, y),
            Some(mask) => {
                let px: Vec<f64> = x.iter().zip(mask).map(|(&v, &b)| if b { 0.0 } else { v }).collect();
                self.scheme.neg_div_flux_grad(&px, y);
            }
        }
        for (v, &xi) in y.iter_mut().zip(x) {
            *v += self.inv_tau * xi;
        }
        if let Some(mask) = self.mask {
            for ((v, &xi), &b) in y.iter_mut().zip(x).zip(mask) {
                if b {
                    *v = xi;
                }
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

struct Jacobi(Vec<f64>);

impl LinearOperator for Jacobi {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((v, &xi), &w) in y.iter_mut().zip(x).zip(&self.0) {
            *v = xi * w;
        }
    }
}

/// Inverse diagonal of the level operator.
fn jacobi(scheme: &FluxScheme, h: f64, inv_tau: f64, mask: Option<&[bool]>) -> Jacobi {
    let shape = scheme.shape();
    let d = scheme.d();
    let len = shape.len();
    let mut diag = vec![inv_tau; len];
    let ih2 = 1.0 / (h * h);
    for i in 0..d {
        let a = scheme.entry(i, i);
        // a(z) + a(z - e_i)
        let mut sum = a.to_vec();
        let mut back = vec![0.0; len];
        backward_diff_acc(a, &mut back, shape, i, 1.0);
        for (s, b) in sum.iter_mut().zip(&back) {
            *s = 2.0 * *s - b;
        }
        for (g, s) in diag.iter_mut().zip(&sum) {
            *g += s * ih2;
        }
        for k in (0..d).filter(|&k| k != i) {
            for (g, &v) in diag.iter_mut().zip(scheme.entry(i, k)) {
                *g += v * ih2;
            }
        }
    }
    if let Some(mask) = mask {
        for (g, &b) in diag.iter_mut().zip(mask) {
            if b {
                *g = 1.0;
            }
        }
    }
    Jacobi(diag.into_iter().map(|g| if g > 0.0 { 1.0 / g } else { 1.0 }).collect())
}

/// Exact torus solve of `u / tau - sum_ik a_ik D_i^b D_k^f u = rhs`.
fn fourier_level(grid: &MacroGrid, abar: &[f64]) -> FourierMultiplier {
    let shape = grid.shape();
    let d = grid.d;
    let b = backward_symbol(grid.n, grid.h);
    let f = forward_symbol(grid.n, grid.h);
    let symbol = FourierMultiplier::symbol_from_fn(&shape, |k| {
        let mut s = Complex64::new(1.0 / grid.tau, 0.0);
        for i in 0..d {
            for j in 0..d {
                s -= abar[i * d + j] * b[k[i]] * f[k[j]];
            }
        }
        s
    });
    FourierMultiplier::inverse_of(&shape, symbol)
}

/// Advances one field level by level.
pub(crate) struct Stepper<'a> {
    grid: MacroGrid,
    coef: MacroCoefficient<'a>,
    mask: Option<Vec<bool>>,
    schemes: HashMap<usize, (FluxScheme, Jacobi)>,
    fourier: Option<FourierMultiplier>,
    opts: SolveOptions,
    pub(crate) max_iterations: usize,
    pub(crate) worst_residual: f64,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(grid: &MacroGrid, coef: MacroCoefficient<'a>, opts: &SolveOptions) -> Self {
        let fourier = match (grid.geometry, coef) {
            (Geometry::Torus, MacroCoefficient::Constant(m)) => Some(fourier_level(grid, m)),
            _ => None,
        };
        Self {
            grid: grid.clone(),
            coef,
            mask: grid.boundary_mask(),
            schemes: HashMap::new(),
            fourier,
            opts: *opts,
            max_iterations: 0,
            worst_residual: 0.0,
        }
    }

    fn build(&self, k: usize) -> Result<(FluxScheme, Jacobi)> {
        let entries = self.coef.entries(&self.grid, k)?;
        let scheme = FluxScheme::new(self.grid.shape(), self.grid.d, self.grid.h, &entries);
        let pre = jacobi(&scheme, self.grid.h, 1.0 / self.grid.tau, self.mask.as_deref());
        Ok((scheme, pre))
    }

    /// Flux scheme of level `k`, built once per distinct cell level.
    pub(crate) fn scheme(&mut self, k: usize) -> Result<&FluxScheme> {
        let key = self.coef.cache_key(k);
        if !self.schemes.contains_key(&key) {
            if self.coef.is_fresh() {
                self.schemes.clear();
            }
            let built = self.build(k)?;
            self.schemes.insert(key, built);
        }
        Ok(&self.schemes[&key].0)
    }

    /// Solves level `k` from the previous level `prev` into `out`.
    pub(crate) fn step(&mut self, k: usize, prev: &[f64], source: &[f64], out: &mut [f64]) -> Result<()> {
        let inv_tau = 1.0 / self.grid.tau;
        let mut rhs: Vec<f64> = prev.iter().zip(source).map(|(&u, &f)| u * inv_tau + f).collect();
        if let Some(mask) = &self.mask {
            for (v, &b) in rhs.iter_mut().zip(mask) {
                if b {
                    *v = 0.0;
                }
            }
        }
        if let Some(fft) = &self.fourier {
            out.copy_from_slice(&rhs);
            fft.apply_in_place(out);
            return Ok(());
        }
        self.scheme(k)?;
        let (scheme, pre) = &self.schemes[&self.coef.cache_key(k)];
        let op = LevelOperator { scheme, inv_tau, mask: self.mask.as_deref() };
        out.copy_from_slice(prev);
        let report = cg_slices(&op, &rhs, out, &self.opts, Some(pre))?;
        self.note(report)
    }

    fn note(&mut self, report: SolveReport) -> Result<()> {
        self.max_iterations = self.max_iterations.max(report.iterations);
        self.worst_residual = self.worst_residual.max(report.relative_residual);
        if report.converged {
            Ok(())
        } else {
            Err(Error::NotConverged(report))
        }
    }
}

/// All time levels of one macro solution.
#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: MacroGrid,
    /// `levels[k]` holds the nodal values at time `k tau`; `levels[0] = 0`.
    pub levels: Vec<Vec<f64>>,
    pub max_iterations: usize,
}

impl Solution {
    /// `L^2(Omega_T)` norm over levels `1..=steps`.
    pub fn norm_l2(&self) -> f64 {
        let w = self.grid.tau * self.grid.cell_volume();
        (self.levels[1..].iter().flatten().map(|v| v * v).sum::<f64>() * w).sqrt()
    }

    /// `L^2(Omega_T)` norm of the difference to `other`.
    pub fn distance_l2(&self, other: &Solution) -> f64 {
        let w = self.grid.tau * self.grid.cell_volume();
        let s: f64 = self.levels[1..]
            .iter()
            .flatten()
            .zip(other.levels[1..].iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (s * w).sqrt()
    }
}

/// `u_eps`: implicit Euler with per-level conjugate gradients.
pub fn solve_eps(
    coef: MacroCoefficient<'_>,
    grid: &MacroGrid,
    source: &Source,
    opts: &SolveOptions,
) -> Result<Solution> {
    let mut stepper = Stepper::new(grid, coef, opts);
    let nodes = grid.nodes();
    let mut levels = vec![vec![0.0; nodes]];
    for k in 1..=grid.steps {
        let f = source.level(grid, k);
        let mut next = vec![0.0; nodes];
        stepper.step(k, &levels[k - 1], &f, &mut next)?;
        levels.push(next);
    }
    Ok(Solution { grid: grid.clone(), levels, max_iterations: stepper.max_iterations })
}

/// `u_0`: the same scheme with the constant matrix `abar`.
pub fn solve_hom(abar: &EffectiveTensor, grid: &MacroGrid, source: &Source, opts: &SolveOptions) -> Result<Solution> {
    let m: Vec<f64> = abar.rows().concat();
    solve_eps(MacroCoefficient::Constant(&m), grid, source, opts)
}

/// Both sides of the discrete energy inequality
/// `|u(T)|^2 / 2 + sum_k tau <F_k grad u, grad u> <= sum_k tau <f_k, u_k>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn energy_balance(sol: &Solution, coef: MacroCoefficient<'_>, source: &Source) -> Result<EnergyBalance> {
    let grid = &sol.grid;
    let vol = grid.cell_volume();
    let mut stepper = Stepper::new(grid, coef, &SolveOptions::default());
    let nodes = grid.nodes();
    let shape = grid.shape();
    let mut g = vec![vec![0.0; nodes]; grid.d];
    let mut fl = vec![vec![0.0; nodes]; grid.d];
    let mut dissipation = 0.0;
    let mut work = 0.0;
    for k in 1..=grid.steps {
        let u = &sol.levels[k];
        let scheme = stepper.scheme(k)?;
        for (i, gi) in g.iter_mut().enumerate() {
            forward_diff_into(u, gi, &shape, i, 1.0 / grid.h);
        }
        scheme.flux_into(&g, &mut fl);
        dissipation += grid.tau * vol * fl.iter().zip(&g).map(|(a, b)| dot(a, b)).sum::<f64>();
        work += grid.tau * vol * dot(&source.level(grid, k), u);
    }
    let last = &sol.levels[grid.steps];
    Ok(EnergyBalance { lhs: 0.5 * vol * dot(last, last) + dissipation, rhs: work })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// State handed to the visitor of [`march_pair`] at every level `k >= 1`.
pub struct PairLevel<'s> {
    pub k: usize,
    pub grid: &'s MacroGrid,
    pub u_eps: &'s [f64],
    pub u_eps_prev: &'s [f64],
    pub u0: &'s [f64],
    pub u0_prev: &'s [f64],
    /// Test functions `phi_j = S_eps K_eps(Psi_eps D_j u_0)` at levels `k`
    /// and `k - 1`.
    pub test: &'s [Vec<f64>],
    pub test_prev: &'s [Vec<f64>],
    /// Flux scheme of `a^eps` at level `k`.
    pub scheme: &'s FluxScheme,
    pub abar: &'s [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairStats {
    /// `|u_eps - u_0|` in `L^2(Omega_T)`.
    pub err_l2: f64,
    pub u0_l2: f64,
    pub max_iterations: usize,
}

/// Marches `u_eps` and `u_0` together and builds the smoothed test
/// functions on the fly; `visit` sees every level once.
pub fn march_pair(
    coef: MacroCoefficient<'_>,
    abar: &EffectiveTensor,
    grid: &MacroGrid,
    source: &Source,
    opts: &SolveOptions,
    mut visit: impl FnMut(&PairLevel<'_>) -> Result<()>,
) -> Result<PairStats> {
    let d = grid.d;
    let nodes = grid.nodes();
    let shape = grid.shape();
    let m: Vec<f64> = abar.rows().concat();
    let mut eps_stepper = Stepper::new(grid, coef, opts);
    let mut hom_stepper = Stepper::new(grid, MacroCoefficient::Constant(&m), opts);
    let trivial = grid.cutoff_is_trivial();
    let kernel = SpatialKernel::new(d, grid.h, grid.eps)?;
    let tkernel = TimeKernel::new(grid.tau, grid.eps);
    // ring of K(Psi D_j u_0) levels, newest first
    let mut ring: Vec<Vec<Vec<f64>>> = Vec::with_capacity(tkernel.len());

    let mut ue_prev = vec![0.0; nodes];
    let mut u0_prev = vec![0.0; nodes];
    let mut ue = vec![0.0; nodes];
    let mut u0 = vec![0.0; nodes];
    let mut test_prev = vec![vec![0.0; nodes]; d];
    let mut test = vec![vec![0.0; nodes]; d];
    let mut grad = vec![0.0; nodes];
    let mut stats = PairStats::default();
    let w = grid.tau * grid.cell_volume();
    for k in 1..=grid.steps {
        let f = source.level(grid, k);
        eps_stepper.step(k, &ue_prev, &f, &mut ue)?;
        hom_stepper.step(k, &u0_prev, &f, &mut u0)?;
        stats.err_l2 += w * ue.iter().zip(&u0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        stats.u0_l2 += w * dot(&u0, &u0);

        if !trivial {
            let psi = grid.cutoff(k);
            let mut level = Vec::with_capacity(d);
            for j in 0..d {
                forward_diff_into(&u0, &mut grad, &shape, j, 1.0 / grid.h);
                for (g, p) in grad.iter_mut().zip(&psi) {
                    *g *= p;
                }
                let mut kg = vec![0.0; nodes];
                kernel.apply(&grad, &mut kg, &shape);
                level.push(kg);
            }
            if ring.len() == tkernel.len() {
                ring.pop();
            }
            ring.insert(0, level);
            for (j, tj) in test.iter_mut().enumerate() {
                tj.iter_mut().for_each(|v| *v = 0.0);
                for (lvl, &wt) in ring.iter().zip(tkernel.weights()) {
                    for (v, &x) in tj.iter_mut().zip(&lvl[j]) {
                        *v += wt * x;
                    }
                }
            }
        }

        let scheme = eps_stepper.scheme(k)?;
        visit(&PairLevel {
            k,
            grid,
            u_eps: &ue,
            u_eps_prev: &ue_prev,
            u0: &u0,
            u0_prev: &u0_prev,
            test: &test,
            test_prev: &test_prev,
            scheme,
            abar: &m,
        })?;
        std::mem::swap(&mut ue, &mut ue_prev);
        std::mem::swap(&mut u0, &mut u0_prev);
        for (a, b) in test_prev.iter_mut().zip(&test) {
            a.copy_from_slice(b);
        }
    }
    stats.err_l2 = stats.err_l2.sqrt();
    stats.u0_l2 = stats.u0_l2.sqrt();
    stats.max_iterations = eps_stepper.max_iterations.max(hom_stepper.max_iterations);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twoscale::{CylinderProblem, Geometry};

    fn grid(eps: f64, r0: f64, t_end: f64, source: Source, geometry: Geometry) -> MacroGrid {
        let p = CylinderProblem { d: 2, r0, t_end, eps, source, geometry };
        MacroGrid::new(&p, 0.125, 0.125).unwrap()
    }

    fn abar(v: f64) -> EffectiveTensor {
        EffectiveTensor { d: 2, entries: vec![v, 0.0, 0.0, v] }
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = grid(0.25, 1.0, 0.05, Source::Zero, Geometry::Cylinder);
        let s = solve_hom(&abar(1.5), &g, &Source::Zero, &SolveOptions::default()).unwrap();
        assert!(s.levels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_cell_reproduces_u0_bitwise() {
        let src = Source::Smooth { amplitude: 1.0 };
        let g = grid(0.25, 1.0, 0.05, src, Geometry::Cylinder);
        let cell = crate::lattice::Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let a = CoefficientField::constant(&cell, 2.0);
        let ue = solve_eps(MacroCoefficient::Tiled(&a), &g, &src, &SolveOptions::default()).unwrap();
        let u0 = solve_hom(&abar(2.0), &g, &src, &SolveOptions::default()).unwrap();
        assert_eq!(ue.levels, u0.levels);
        assert!(u0.norm_l2() > 0.0);
    }

    #[test]
    fn manufactured_solution_converges() {
        let c = 1.3;
        let src = Source::Manufactured { c };
        let mut errs = Vec::new();
        for eps in [0.5, 0.25] {
            // tau_cell fixed => tau ~ h^2
            let g = grid(eps, 1.0, 0.25, src, Geometry::Cylinder);
            let u = solve_hom(&abar(c), &g, &src, &SolveOptions::default()).unwrap();
            let mut e = 0.0f64;
            for z in 0..g.nodes() {
                let x = g.position(z);
                let ex = src.exact(&g, &x[..2], g.t_end()).unwrap();
                e = e.max((u.levels[g.steps][z] - ex).abs());
            }
            errs.push(e);
        }
        // h halves and tau quarters: second order in h
        let rate = (errs[0] / errs[1]).log2();
        assert!(errs[1] < 2e-3 && rate > 1.7, "{errs:?}");
    }

    #[test]
    fn energy_inequality_holds() {
        let src = Source::Divergence { amplitude: 1.0 };
        let g = grid(0.25, 1.0, 0.1, src, Geometry::Cylinder);
        let cell = crate::lattice::Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let spec = crate::ensemble::EnsembleSpec::two_phase(
            crate::ensemble::EnsembleKind::Checkerboard,
            1.0,
            4.0,
            Some(0.25),
        );
        let a = crate::ensemble::sample(&spec, &cell, 3).unwrap();
        let coef = MacroCoefficient::Tiled(&a);
        let u = solve_eps(coef, &g, &src, &SolveOptions::default()).unwrap();
        let e = energy_balance(&u, coef, &src).unwrap();
        assert!(e.lhs > 0.0 && e.lhs <= e.rhs * (1.0 + 1e-8), "{e:?}");
    }

    #[test]
    fn torus_fourier_matches_cg() {
        let src = Source::Smooth { amplitude: 1.0 };
        let g = grid(0.25, 1.0, 0.05, src, Geometry::Torus);
        let a = abar(1.7);
        let fft = solve_hom(&a, &g, &src, &SolveOptions::default()).unwrap();
        let cell = crate::lattice::Lattice::with_tau(2, 8, 8, 1.0, Some(0.125)).unwrap();
        let c = CoefficientField::constant(&cell, 1.7);
        let cg = solve_eps(MacroCoefficient::Tiled(&c), &g, &src, &SolveOptions::default()).unwrap();
        assert!(fft.distance_l2(&cg) < 1e-9 * fft.norm_l2());
    }

    #[test]
    fn fresh_constant_matches_tiled_constant() {
        let src = Source::Smooth { amplitude: 1.0 };
        let g = grid(0.25, 1.0, 0.03, src, Geometry::Cylinder);
        let spec = crate::ensemble::EnsembleSpec::constant(2.0);
        let fresh = solve_eps(MacroCoefficient::Fresh { spec: &spec, seed: 1, ell: 0.125 }, &g, &src, &SolveOptions::default()).unwrap();
        let u0 = solve_hom(&abar(2.0), &g, &src, &SolveOptions::default()).unwrap();
        assert_eq!(fresh.levels, u0.levels);
    }
}
