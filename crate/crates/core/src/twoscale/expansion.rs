//! The two-scale expansion error
//! `w = u_eps - u_0 - eps phibar_j phi_j - eps^2 sigmatilde_{l(d+1)j} D_l phi_j`
//! and the residual of its equation
//! `(d_t + L_eps) w = div f_eps - eps sum_l pi_llj d_t phi_j`.
//!
//! Gauge choices for the shifted quantities: `phibar = phi - <phi>`;
//! `sigmabar_{ikj}` subtracts the spatial mean of each time slice;
//! `sigmatilde_{l(d+1)j} = sigma_{l(d+1)j} - pi_{ilj} y_i - <sigma_{l(d+1)j}>`
//! where `pi_{klj}` averages `D_k sigma_{l(d+1)j}` over the cube of radius
//! `2/eps` in cell units (clamped to the whole cell).
//!
//! Products are split with the exact discrete rule
//! `D_k^f(a b) = (D_k^f a) b(. + e_k) + a D_k^f b`, so the `eps^2` part of
//! the left side matches `f_eps` to rounding and the remaining mismatch is
//! a discretization error that vanishes as the cell spacing shrinks. The
//! residual is measured in `L^2(0, T; H^{-1})`, where staggering errors at
//! coefficient jumps are of the order of the macro spacing.

use num_complex::Complex64;
use serde::Serialize;

use super::march::{march_pair, MacroCoefficient};
use super::{Geometry, MacroGrid, Source};
use crate::corrector::{effective, flux, solve_cell, CorrectorOptions, CorrectorSet, EffectiveTensor};
use crate::ensemble::CoefficientField;
use crate::error::{Error, Result};
use crate::fluxcor::{solve_sigma, FluxCorrector};
use crate::lattice::{backward_diff_acc, forward_diff_into, roll_into, Lattice, ScalarField, Shape};
use crate::solver::{FourierMultiplier, SolveOptions};

/// A solved cell: coefficients, correctors, `a-bar` and optionally `sigma`.
#[derive(Debug, Clone)]
pub struct CellData {
    pub a: CoefficientField,
    pub correctors: CorrectorSet,
    pub abar: EffectiveTensor,
    pub sigma: Option<FluxCorrector>,
}

impl CellData {
    pub fn solve(a: CoefficientField, opts: &CorrectorOptions, with_sigma: bool) -> Result<Self> {
        let correctors = solve_cell(&a, 0.0, opts)?;
        let abar = effective(&a, &correctors)?;
        let sigma = if with_sigma {
            Some(solve_sigma(&flux(&a, &correctors, &abar)?)?)
        } else {
            None
        };
        Ok(Self { a, correctors, abar, sigma })
    }

    pub fn lattice(&self) -> &Lattice {
        self.a.lattice()
    }
}

/// Periodic lookup of cell values at macro nodes.
#[derive(Debug, Clone)]
pub struct Tiler {
    map: Vec<usize>,
    n_s: usize,
    n_t: usize,
}

impl Tiler {
    pub fn new(cell: &Lattice, grid: &MacroGrid) -> Result<Self> {
        if cell.d() != grid.d {
            return Err(Error::LatticeMismatch(format!("cell d = {} vs macro d = {}", cell.d(), grid.d)));
        }
        if (cell.h() - grid.h_cell).abs() > 1e-12 * cell.h() || (cell.tau() - grid.tau_cell).abs() > 1e-12 * cell.tau() {
            return Err(Error::LatticeMismatch(format!(
                "cell spacings ({}, {}) differ from the grid's ({}, {})",
                cell.h(),
                cell.tau(),
                grid.h_cell,
                grid.tau_cell
            )));
        }
        if grid.geometry == Geometry::Torus && !grid.n.is_multiple_of(cell.n()) {
            return Err(Error::Config(format!(
                "macro torus of {} points is not a whole number of cells of {}",
                grid.n,
                cell.n()
            )));
        }
        let map = (0..grid.nodes())
            .map(|z| {
                let c = grid.coords(z);
                let mut x = [0usize; 3];
                for i in 0..grid.d {
                    x[i] = c[i] % cell.n();
                }
                cell.index(&x[..grid.d], 0)
            })
            .collect();
        Ok(Self { map, n_s: cell.spatial_sites(), n_t: cell.n_t() })
    }

    /// Cell values at the macro nodes of level `k`.
    pub fn level(&self, cell_values: &[f64], k: usize) -> Vec<f64> {
        let off = (k % self.n_t) * self.n_s;
        self.map.iter().map(|&s| cell_values[off + s]).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExpansionOptions {
    pub solve: SolveOptions,
    /// Leave every `sigma` term out of `f_eps` (sensitivity check).
    pub drop_sigma_terms: bool,
}

/// Norms of one expansion run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub eps: f64,
    pub seed: u64,
    pub n: usize,
    pub steps: usize,
    /// `|u_eps - u_0|` in `L^2(Omega_T)`.
    pub err_l2: f64,
    pub u0_l2: f64,
    pub w_l2: f64,
    pub grad_w_l2: f64,
    /// `|(d_t + L_eps) w - rhs|` in `L^2(0, T; H^{-1})`.
    pub residual_abs: f64,
    /// The same in `L^2(Omega_T)`.
    pub residual_l2: f64,
    /// `|div f_eps|` in `L^2(0, T; H^{-1})`.
    pub div_f_norm: f64,
    /// `residual_abs / div_f_norm` (0 when both vanish).
    pub residual: f64,
    /// Set when the cutoff vanishes, e.g. `eps = 1`.
    pub degenerate: bool,
    pub max_iterations: usize,
}

/// Dual norm of the Dirichlet (cylinder) or periodic (torus) Laplacian.
struct NegativeNorm {
    inverse: FourierMultiplier,
    ext: Shape,
    n: usize,
    d: usize,
    h: f64,
    dirichlet: bool,
}

impl NegativeNorm {
    fn new(grid: &MacroGrid) -> Self {
        let dirichlet = grid.geometry == Geometry::Cylinder;
        let m = if dirichlet { 2 * grid.n } else { grid.n };
        let ext = Shape::new(&vec![m; grid.d]);
        let h = grid.h;
        let symbol = FourierMultiplier::symbol_from_fn(&ext, |k| {
            let s: f64 = k
                .iter()
                .map(|&ki| {
                    let s = (std::f64::consts::PI * ki as f64 / m as f64).sin();
                    4.0 * s * s / (h * h)
                })
                .sum();
            Complex64::new(s, 0.0)
        });
        Self { inverse: FourierMultiplier::inverse_of(&ext, symbol), ext, n: grid.n, d: grid.d, h, dirichlet }
    }

    /// `|r|_{H^{-1}}^2`.
    fn norm_sq(&self, r: &[f64]) -> f64 {
        let vol = self.h.powi(self.d as i32);
        if !self.dirichlet {
            let mut v = r.to_vec();
            self.inverse.apply_in_place(&mut v);
            return vol * r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        // odd reflection across every face turns the Dirichlet problem into
        // a periodic one on a grid twice as long
        let m = 2 * self.n;
        let mut ext = vec![0.0; self.ext.len()];
        for (e, val) in ext.iter_mut().enumerate() {
            let mut rem = e;
            let mut src = 0;
            let mut stride = 1;
            let mut sign = 1.0;
            let mut zero = false;
            for _ in 0..self.d {
                let c = rem % m;
                rem /= m;
                let (ci, s) = if c < self.n { (c, 1.0) } else { (m - c, -1.0) };
                if ci == 0 || ci == self.n {
                    zero = true;
                    break;
                }
                src += ci * stride;
                stride *= self.n;
                sign *= s;
            }
            if !zero {
                *val = sign * r[src];
            }
        }
        let mut v = ext.clone();
        self.inverse.apply_in_place(&mut v);
        vol * ext.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (1u64 << self.d) as f64
    }
}

/// Cell fields entering `w` and `f_eps`, shifted per the chosen gauge.
struct CellTerms {
    d: usize,
    /// `phibar_j`
    phi: Vec<Vec<f64>>,
    /// `sigma_{l(d+1)j} - <.>`, index `l * d + j`
    st: Vec<Vec<f64>>,
    /// `D_k^f sigma_{l(d+1)j} - pi_{klj}`, index `(k * d + l) * d + j`
    dst: Vec<Vec<f64>>,
    /// `sigma_{ikj}` minus per-slice means, index `(i * d + k) * d + j`
    sbar: Vec<Vec<f64>>,
    /// `pi_{klj}`, same indexing as `dst`
    pi: Vec<f64>,
}

impl CellTerms {
    fn new(cell: &CellData, sigma: &FluxCorrector, eps: f64) -> Result<Self> {
        let l = *cell.lattice();
        let d = l.d();
        let n_s = l.spatial_sites();
        let centered = |f: &ScalarField| {
            let m = f.mean();
            f.values().iter().map(|v| v - m).collect::<Vec<f64>>()
        };
        let phi = cell.correctors.phi.iter().map(centered).collect();
        let mut st = Vec::with_capacity(d * d);
        for li in 0..d {
            for j in 0..d {
                st.push(centered(sigma.get(li, d, j)));
            }
        }
        let mut dst = Vec::with_capacity(d * d * d);
        let mut pi = Vec::with_capacity(d * d * d);
        for k in 0..d {
            for li in 0..d {
                for j in 0..d {
                    let g = sigma.get(li, d, j).diff_f(k);
                    let p = g.box_average(0, 2.0 / eps)?;
                    pi.push(p);
                    dst.push(g.values().iter().map(|v| v - p).collect());
                }
            }
        }
        let mut sbar = Vec::with_capacity(d * d * d);
        for i in 0..d {
            for k in 0..d {
                for j in 0..d {
                    let s = sigma.get(i, k, j).values();
                    let mut out = s.to_vec();
                    for slice in out.chunks_mut(n_s) {
                        let m = slice.iter().sum::<f64>() / n_s as f64;
                        slice.iter_mut().for_each(|v| *v -= m);
                    }
                    sbar.push(out);
                }
            }
        }
        Ok(Self { d, phi, st, dst, sbar, pi })
    }
}

fn fwd(src: &[f64], shape: &Shape, axis: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    forward_diff_into(src, &mut out, shape, axis, 1.0 / h);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs `u_eps`, `u_0`, the expansion `w` and the residual of its equation
/// for the tiled cell; `cell.sigma` must be present.
pub fn expansion(cell: &CellData, grid: &MacroGrid, source: &Source, opts: &ExpansionOptions) -> Result<ExpansionReport> {
    let sigma = cell
        .sigma
        .as_ref()
        .ok_or_else(|| Error::Config("the expansion needs the flux corrector".into()))?;
    let tiler = Tiler::new(cell.lattice(), grid)?;
    let terms = CellTerms::new(cell, sigma, grid.eps)?;
    let d = terms.d;
    let nodes = grid.nodes();
    let shape = grid.shape();
    let (h, tau, eps) = (grid.h, grid.tau, grid.eps);
    let mask = grid.boundary_mask();
    let neg = NegativeNorm::new(grid);
    // unwrapped cell coordinates of the nodes
    let y: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..nodes).map(|z| grid.coords(z)[i] as f64 * grid.h_cell).collect())
        .collect();

    let mut w_prev = vec![0.0; nodes];
    let (mut w2, mut gw2, mut r_h, mut r_l2, mut f_h) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let weight = tau * grid.cell_volume();

    let stats = march_pair(MacroCoefficient::Tiled(&cell.a), &cell.abar, grid, source, &opts.solve, |lv| {
        let k = lv.k;
        let scheme = lv.scheme;
        let phi: Vec<Vec<f64>> = terms.phi.iter().map(|f| tiler.level(f, k)).collect();
        let st: Vec<Vec<f64>> = (0..d * d)
            .map(|idx| {
                let (li, j) = (idx / d, idx % d);
                let mut v = tiler.level(&terms.st[idx], k);
                for i in 0..d {
                    let p = terms.pi[(i * d + li) * d + j];
                    if p != 0.0 {
                        for (a, yi) in v.iter_mut().zip(&y[i]) {
                            *a -= p * yi;
                        }
                    }
                }
                v
            })
            .collect();
        // P[l * d + j] = D_l^f phi_j
        let p: Vec<Vec<f64>> = (0..d * d).map(|idx| fwd(&lv.test[idx % d], &shape, idx / d, h)).collect();
        let dt_test: Vec<Vec<f64>> =
            lv.test.iter().zip(lv.test_prev).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) / tau).collect()).collect();

        let mut w: Vec<f64> = lv.u_eps.iter().zip(lv.u0).map(|(a, b)| a - b).collect();
        for j in 0..d {
            for (v, (a, b)) in w.iter_mut().zip(phi[j].iter().zip(&lv.test[j])) {
                *v -= eps * a * b;
            }
            for li in 0..d {
                for (v, (a, b)) in w.iter_mut().zip(st[li * d + j].iter().zip(&p[li * d + j])) {
                    *v -= eps * eps * a * b;
                }
            }
        }

        // left side (d_t + L_eps) w
        let mut lhs = vec![0.0; nodes];
        scheme.neg_div_flux_grad(&w, &mut lhs);
        for ((l, a), b) in lhs.iter_mut().zip(&w).zip(&w_prev) {
            *l += (a - b) / tau;
        }

        // f_eps, one array per spatial component
        let mut f = vec![vec![0.0; nodes]; d];
        let mut tmp = vec![vec![0.0; nodes]; d];
        let apply_flux = |v: &[Vec<f64>], scale: f64, f: &mut [Vec<f64>], tmp: &mut [Vec<f64>]| {
            scheme.flux_into(v, tmp);
            for (fi, ti) in f.iter_mut().zip(tmp.iter()) {
                for (a, b) in fi.iter_mut().zip(ti) {
                    *a += scale * b;
                }
            }
        };
        // (a - abar)(grad u_0 - phi)
        let g: Vec<Vec<f64>> = (0..d)
            .map(|kk| fwd(lv.u0, &shape, kk, h).iter().zip(&lv.test[kk]).map(|(a, b)| a - b).collect())
            .collect();
        apply_flux(&g, 1.0, &mut f, &mut tmp);
        for i in 0..d {
            for kk in 0..d {
                let c = lv.abar[i * d + kk];
                if c != 0.0 {
                    for (a, b) in f[i].iter_mut().zip(&g[kk]) {
                        *a -= c * b;
                    }
                }
            }
        }
        // eps a phibar_j grad phi_j
        let v: Vec<Vec<f64>> = (0..d)
            .map(|kk| {
                let mut out = vec![0.0; nodes];
                for j in 0..d {
                    for (o, (a, b)) in out.iter_mut().zip(phi[j].iter().zip(&p[kk * d + j])) {
                        *o += a * b;
                    }
                }
                out
            })
            .collect();
        apply_flux(&v, eps, &mut f, &mut tmp);
        if !opts.drop_sigma_terms {
            // -eps sigmabar_{ikj} D_k phi_j
            for i in 0..d {
                for kk in (0..d).filter(|&kk| kk != i) {
                    for j in 0..d {
                        let sb = tiler.level(&terms.sbar[(i * d + kk) * d + j], k);
                        for (a, (s, q)) in f[i].iter_mut().zip(sb.iter().zip(&p[kk * d + j])) {
                            *a -= eps * s * q;
                        }
                    }
                }
            }
            // eps a (D_k sigmatilde_l) D_l phi_j(. + e_k)
            let mut shifted = vec![0.0; nodes];
            let yv: Vec<Vec<f64>> = (0..d)
                .map(|kk| {
                    let mut out = vec![0.0; nodes];
                    let mut shift = vec![0isize; d];
                    shift[kk] = 1;
                    for li in 0..d {
                        for j in 0..d {
                            roll_into(&p[li * d + j], &mut shifted, &shape, &shift);
                            let ds = tiler.level(&terms.dst[(kk * d + li) * d + j], k);
                            for (o, (a, b)) in out.iter_mut().zip(ds.iter().zip(&shifted)) {
                                *o += a * b;
                            }
                        }
                    }
                    out
                })
                .collect();
            apply_flux(&yv, eps, &mut f, &mut tmp);
            // eps^2 a sigmatilde_l D_k D_l phi_j
            let zv: Vec<Vec<f64>> = (0..d)
                .map(|kk| {
                    let mut out = vec![0.0; nodes];
                    for li in 0..d {
                        for j in 0..d {
                            let dp = fwd(&p[li * d + j], &shape, kk, h);
                            for (o, (a, b)) in out.iter_mut().zip(st[li * d + j].iter().zip(&dp)) {
                                *o += a * b;
                            }
                        }
                    }
                    out
                })
                .collect();
            apply_flux(&zv, eps * eps, &mut f, &mut tmp);
            // -eps^2 sigmatilde_{i(d+1)j} d_t phi_j
            for i in 0..d {
                for j in 0..d {
                    for (a, (s, q)) in f[i].iter_mut().zip(st[i * d + j].iter().zip(&dt_test[j])) {
                        *a -= eps * eps * s * q;
                    }
                }
            }
        }
        let mut div_f = vec![0.0; nodes];
        for (i, fi) in f.iter().enumerate() {
            backward_diff_acc(fi, &mut div_f, &shape, i, 1.0 / h);
        }
        let mut r: Vec<f64> = lhs.iter().zip(&div_f).map(|(a, b)| a - b).collect();
        for j in 0..d {
            let s: f64 = (0..d).map(|li| terms.pi[(li * d + li) * d + j]).sum();
            if s != 0.0 {
                for (a, q) in r.iter_mut().zip(&dt_test[j]) {
                    *a += eps * s * q;
                }
            }
        }
        if let Some(mask) = &mask {
            for ((a, b), &m) in r.iter_mut().zip(div_f.iter_mut()).zip(mask) {
                if m {
                    *a = 0.0;
                    *b = 0.0;
                }
            }
        }
        w2 += weight * dot(&w, &w);
        for i in 0..d {
            let gw = fwd(&w, &shape, i, h);
            gw2 += weight * dot(&gw, &gw);
        }
        r_l2 += weight * dot(&r, &r);
        if r.iter().any(|&v| v != 0.0) {
            r_h += tau * neg.norm_sq(&r);
        }
        if div_f.iter().any(|&v| v != 0.0) {
            f_h += tau * neg.norm_sq(&div_f);
        }
        w_prev = w;
        Ok(())
    })?;
    let residual_abs = r_h.sqrt();
    let div_f_norm = f_h.sqrt();
    let residual = if residual_abs == 0.0 { 0.0 } else { residual_abs / div_f_norm };
    Ok(ExpansionReport {
        eps,
        seed: 0,
        n: grid.n,
        steps: grid.steps,
        err_l2: stats.err_l2,
        u0_l2: stats.u0_l2,
        w_l2: w2.sqrt(),
        grad_w_l2: gw2.sqrt(),
        residual_abs,
        residual_l2: r_l2.sqrt(),
        div_f_norm,
        residual,
        degenerate: grid.cutoff_is_trivial(),
        max_iterations: stats.max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample, EnsembleKind, EnsembleSpec};
    use crate::twoscale::CylinderProblem;

    fn cell_lattice(n: usize) -> Lattice {
        let h = 1.0 / n as f64;
        let tau = 8.0 * h * h;
        Lattice::with_tau(2, n, (1.0 / tau).round() as usize, 1.0, Some(tau)).unwrap()
    }

    fn problem(eps: f64, r0: f64, t_end: f64) -> CylinderProblem {
        CylinderProblem { d: 2, r0, t_end, eps, source: Source::Smooth { amplitude: 1.0 }, geometry: Geometry::Cylinder }
    }

    #[test]
    fn negative_norm_of_a_sine_mode() {
        let p = problem(0.25, 1.0, 0.1);
        let g = MacroGrid::new(&p, 0.125, 0.125).unwrap();
        let neg = NegativeNorm::new(&g);
        let r: Vec<f64> = (0..g.nodes())
            .map(|z| {
                let x = g.position(z);
                (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
            })
            .collect();
        let lam: f64 = 2.0 * 4.0 / (g.h * g.h) * (std::f64::consts::PI * g.h / 2.0).sin().powi(2);
        let l2: f64 = g.cell_volume() * dot(&r, &r);
        assert!((neg.norm_sq(&r) - l2 / lam).abs() < 1e-10 * l2 / lam);
    }

    #[test]
    fn constant_cell_has_zero_expansion() {
        let l = cell_lattice(8);
        let cell = CellData::solve(CoefficientField::constant(&l, 2.0), &CorrectorOptions::default(), true).unwrap();
        let g = MacroGrid::new(&problem(0.25, 2.0, 0.3), 0.125, l.tau()).unwrap();
        let rep = expansion(&cell, &g, &Source::Smooth { amplitude: 1.0 }, &ExpansionOptions::default()).unwrap();
        assert!(!rep.degenerate);
        assert_eq!(rep.err_l2, 0.0);
        assert_eq!(rep.w_l2, 0.0);
        assert_eq!(rep.residual_abs, 0.0);
        assert_eq!(rep.residual, 0.0);
        assert!(rep.u0_l2 > 0.0);
    }

    #[test]
    fn eps_one_is_flagged() {
        let l = cell_lattice(8);
        let spec = EnsembleSpec::two_phase(EnsembleKind::Checkerboard, 1.0, 4.0, Some(0.5));
        let cell = CellData::solve(sample(&spec, &l, 1).unwrap(), &CorrectorOptions::default(), true).unwrap();
        let g = MacroGrid::new(&problem(1.0, 2.0, 0.25), 0.125, l.tau()).unwrap();
        let rep = expansion(&cell, &g, &Source::Smooth { amplitude: 1.0 }, &ExpansionOptions::default()).unwrap();
        assert!(rep.degenerate);
        assert!(rep.err_l2 > 0.0 && rep.residual.is_finite());
    }

    #[test]
    fn missing_sigma_is_an_error() {
        let l = cell_lattice(8);
        let cell = CellData::solve(CoefficientField::constant(&l, 2.0), &CorrectorOptions::default(), false).unwrap();
        let g = MacroGrid::new(&problem(0.5, 1.0, 0.1), 0.125, l.tau()).unwrap();
        assert!(expansion(&cell, &g, &Source::Zero, &ExpansionOptions::default()).is_err());
    }

    #[test]
    fn tiler_checks_spacing() {
        let l = cell_lattice(8);
        let g = MacroGrid::new(&problem(0.5, 1.0, 0.1), 0.125, 0.5).unwrap();
        assert!(Tiler::new(&l, &g).is_err());
    }
}
