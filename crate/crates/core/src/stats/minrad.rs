//! Minimal radius `chi*` on a dyadic grid of scales.
//!
//! On the parabolic cube `Q_r` around a center (`r = R h`, `R` in lattice
//! units) we use the shifted quantities
//!
//! * `phibar_j = phi_j - mean(phi_j)`
//! * `sigmabar_{ikj} = sigma_{ikj} - mean(sigma_{ikj})` for spatial `i, k`
//! * `sigmatilde_{l(d+1)j} = sigma_{l(d+1)j} - mean - mean(grad) . (x - x_c)`
//!
//! and test `F1 + F2 <= theta` where
//! `F1 = r^-1 (mean |(phibar, sigmabar, grad sigmatilde)|^2)^(1/2)` and
//! `F2 = r^-2 (mean |sigmatilde|^2)^(1/2)`.

use serde::Serialize;

use crate::corrector::CorrectorSet;
use crate::error::{Error, Result};
use crate::fluxcor::FluxCorrector;
use crate::lattice::{BoxWindow, Lattice, ScalarField};

/// `{1, 2, 4, ..., n/4}` in lattice units (just `{1}` for `n < 8`).
pub fn radius_grid(n: usize) -> Vec<usize> {
    let mut out = vec![1];
    while out.last().unwrap() * 2 <= n / 4 {
        out.push(out.last().unwrap() * 2);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalRadiusSample {
    pub theta: f64,
    /// `chi*` in lattice units; the largest tested radius when censored.
    pub chi: f64,
    /// The bound failed at the largest tested radius.
    pub censored: bool,
    pub radii: Vec<usize>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl MinimalRadiusSample {
    /// Smallest grid radius from which on the bound holds, clamped below by 1.
    fn from_functionals(theta: f64, radii: Vec<usize>, first: Vec<f64>, second: Vec<f64>) -> Self {
        let mut chi = None;
        for idx in (0..radii.len()).rev() {
            if first[idx] + second[idx] <= theta {
                chi = Some(radii[idx]);
            } else {
                break;
            }
        }
        let censored = chi.is_none();
        let chi = chi.unwrap_or(*radii.last().unwrap()).max(1) as f64;
        Self { theta, chi, censored, radii, first, second }
    }
}

impl MinimalRadiusSample {
    /// `chi*` by checking every candidate `l` against all tested `R >= l`.
    pub fn brute_force_chi(&self) -> f64 {
        let ok: Vec<bool> = self.first.iter().zip(&self.second).map(|(a, b)| a + b <= self.theta).collect();
        for (idx, &rr) in self.radii.iter().enumerate() {
            if ok[idx..].iter().all(|&b| b) {
                return rr.max(1) as f64;
            }
        }
        *self.radii.last().unwrap() as f64
    }
}

/// Parabolic cube of radius `r`, one level thick when `r^2 < tau`.
pub(crate) fn cube(l: &Lattice, center: usize, r: f64) -> Result<BoxWindow> {
    if ((r * r) / l.tau() + 1e-9).floor() < 1.0 {
        l.spatial_box(center, r)
    } else {
        l.parabolic_box(center, r)
    }
}

/// Fields entering `chi*`, prepared once per sample.
pub struct RadiusFunctionals<'a> {
    lattice: Lattice,
    phi: Vec<&'a ScalarField>,
    sbar: Vec<&'a ScalarField>,
    st: Vec<&'a ScalarField>,
    /// `grad_st[q * d + m] = D_m^f st[q]`
    grad_st: Vec<ScalarField>,
}

impl<'a> RadiusFunctionals<'a> {
    pub fn new(set: &'a CorrectorSet, sigma: &'a FluxCorrector) -> Result<Self> {
        let lattice = *set.lattice();
        if sigma.lattice() != &lattice {
            return Err(Error::LatticeMismatch("correctors and sigma live on different lattices".into()));
        }
        let d = lattice.d();
        let mut sbar = Vec::new();
        let mut st = Vec::new();
        for j in 0..d {
            for i in 0..d {
                for k in (0..d).filter(|&k| k != i) {
                    sbar.push(sigma.get(i, k, j));
                }
                st.push(sigma.get(i, d, j));
            }
        }
        let grad_st = st.iter().flat_map(|s| (0..d).map(move |m| s.diff_f(m))).collect();
        Ok(Self { lattice, phi: set.phi.iter().collect(), sbar, st, grad_st })
    }

    /// `(F1, F2)` on the cube of radius `R h`.
    pub fn evaluate(&self, center: usize, radius: usize) -> Result<(f64, f64)> {
        let l = &self.lattice;
        let d = l.d();
        let h = l.h();
        let r = radius as f64 * h;
        let win = cube(l, center, r)?;
        let count = win.len() as f64;
        let mut m_phi = vec![0.0; self.phi.len()];
        let mut m_sbar = vec![0.0; self.sbar.len()];
        let mut m_st = vec![0.0; self.st.len()];
        let mut m_grad = vec![0.0; self.grad_st.len()];
        win.for_each(|s, _| {
            for (m, f) in m_phi.iter_mut().zip(&self.phi) {
                *m += f.values()[s];
            }
            for (m, f) in m_sbar.iter_mut().zip(&self.sbar) {
                *m += f.values()[s];
            }
            for (m, f) in m_st.iter_mut().zip(&self.st) {
                *m += f.values()[s];
            }
            for (m, f) in m_grad.iter_mut().zip(&self.grad_st) {
                *m += f.values()[s];
            }
        });
        for m in m_phi.iter_mut().chain(&mut m_sbar).chain(&mut m_st).chain(&mut m_grad) {
            *m /= count;
        }
        let (mut first, mut second) = (0.0, 0.0);
        win.for_each(|s, o| {
            for (m, f) in m_phi.iter().zip(&self.phi) {
                first += (f.values()[s] - m).powi(2);
            }
            for (m, f) in m_sbar.iter().zip(&self.sbar) {
                first += (f.values()[s] - m).powi(2);
            }
            for (q, f) in self.st.iter().enumerate() {
                let mut v = f.values()[s] - m_st[q];
                for mm in 0..d {
                    let mg = m_grad[q * d + mm];
                    v -= mg * o[mm] as f64 * h;
                    first += (self.grad_st[q * d + mm].values()[s] - mg).powi(2);
                }
                second += v * v;
            }
        });
        Ok(((first / count).sqrt() / r, (second / count).sqrt() / (r * r)))
    }

    /// `chi*` around `center`.
    pub fn sample(&self, center: usize, theta: f64) -> Result<MinimalRadiusSample> {
        if !(theta > 0.0) {
            return Err(Error::Config(format!("theta must be positive, got {theta}")));
        }
        let radii = radius_grid(self.lattice.n());
        let mut first = Vec::with_capacity(radii.len());
        let mut second = Vec::with_capacity(radii.len());
        for &rr in &radii {
            let (a, b) = self.evaluate(center, rr)?;
            first.push(a);
            second.push(b);
        }
        Ok(MinimalRadiusSample::from_functionals(theta, radii, first, second))
    }
}

/// `chi*` of one solved sample around `center`.
pub fn minimal_radius(set: &CorrectorSet, sigma: &FluxCorrector, theta: f64, center: usize) -> Result<MinimalRadiusSample> {
    RadiusFunctionals::new(set, sigma)?.sample(center, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::{effective, flux, solve_cell, CorrectorOptions};
    use crate::ensemble::{sample, CoefficientField, EnsembleSpec};
    use crate::fluxcor::solve_sigma;

    fn solved(a: &CoefficientField) -> (CorrectorSet, FluxCorrector) {
        let set = solve_cell(a, 0.0, &CorrectorOptions::default()).unwrap();
        let ab = effective(a, &set).unwrap();
        let s = solve_sigma(&flux(a, &set, &ab).unwrap()).unwrap();
        (set, s)
    }

    /// Direct evaluation with explicit coordinates and hand-written
    /// differences.
    fn brute_force(set: &CorrectorSet, sigma: &FluxCorrector, center: usize, theta: f64) -> f64 {
        let l = *set.lattice();
        let (n, nt, h, tau) = (l.n() as isize, l.n_t() as isize, l.h(), l.tau());
        let c = l.coords(center);
        let at = |f: &ScalarField, x: isize, y: isize, t: isize| {
            f.values()[l.index(&[x.rem_euclid(n) as usize, y.rem_euclid(n) as usize], t.rem_euclid(nt) as usize)]
        };
        let radii = radius_grid(l.n());
        let ok: Vec<bool> = radii
            .iter()
            .map(|&rr| {
                let r = rr as f64 * h;
                // a window wider than the period covers it once
                let span = |hw: isize, m: isize| if 2 * hw + 1 >= m { (-((m - 1) / 2), m - 1 - (m - 1) / 2) } else { (-hw, hw) };
                let (s0, s1) = span(rr as isize, n);
                let (t0, t1) = span((r * r / tau + 1e-9).floor() as isize, nt);
                let mut pts = Vec::new();
                for dt in t0..=t1 {
                    for dy in s0..=s1 {
                        for dx in s0..=s1 {
                            pts.push((dx, dy, dt));
                        }
                    }
                }
                let (cx, cy, ct) = (c[0] as isize, c[1] as isize, c[2] as isize);
                let cnt = pts.len() as f64;
                let avg = |g: &dyn Fn(isize, isize, isize) -> f64| pts.iter().map(|&(a, b, t)| g(a, b, t)).sum::<f64>() / cnt;
                let mut first = 0.0;
                let mut second = 0.0;
                for j in 0..2 {
                    let p = &set.phi[j];
                    let mp = avg(&|a, b, t| at(p, cx + a, cy + b, ct + t));
                    first += avg(&|a, b, t| (at(p, cx + a, cy + b, ct + t) - mp).powi(2));
                    for (i, k) in [(0, 1), (1, 0)] {
                        let s = sigma.get(i, k, j);
                        let m = avg(&|a, b, t| at(s, cx + a, cy + b, ct + t));
                        first += avg(&|a, b, t| (at(s, cx + a, cy + b, ct + t) - m).powi(2));
                    }
                    for li in 0..2 {
                        let s = sigma.get(li, 2, j);
                        let g0 = |a: isize, b: isize, t: isize| (at(s, cx + a + 1, cy + b, ct + t) - at(s, cx + a, cy + b, ct + t)) / h;
                        let g1 = |a: isize, b: isize, t: isize| (at(s, cx + a, cy + b + 1, ct + t) - at(s, cx + a, cy + b, ct + t)) / h;
                        let (m, m0, m1) = (avg(&|a, b, t| at(s, cx + a, cy + b, ct + t)), avg(&g0), avg(&g1));
                        first += avg(&|a, b, t| (g0(a, b, t) - m0).powi(2) + (g1(a, b, t) - m1).powi(2));
                        second += avg(&|a, b, t| {
                            (at(s, cx + a, cy + b, ct + t) - m - m0 * a as f64 * h - m1 * b as f64 * h).powi(2)
                        });
                    }
                }
                first.sqrt() / r + second.sqrt() / (r * r) <= theta
            })
            .collect();
        for (idx, &rr) in radii.iter().enumerate() {
            if ok[idx..].iter().all(|&b| b) {
                return rr.max(1) as f64;
            }
        }
        *radii.last().unwrap() as f64
    }

    #[test]
    fn grid_is_dyadic() {
        assert_eq!(radius_grid(64), vec![1, 2, 4, 8, 16]);
        assert_eq!(radius_grid(4), vec![1]);
    }

    #[test]
    fn constant_coefficients_give_one() {
        let l = Lattice::new(2, 16, 16, 16.0).unwrap();
        let (set, s) = solved(&CoefficientField::constant(&l, 2.0));
        let m = minimal_radius(&set, &s, 0.1, 0).unwrap();
        assert_eq!(m.chi, 1.0);
        assert!(!m.censored && m.first.iter().chain(&m.second).all(|&v| v == 0.0));
        assert!(minimal_radius(&set, &s, 0.0, 0).is_err());
    }

    #[test]
    fn matches_brute_force_and_is_monotone_in_theta() {
        let l = Lattice::new(2, 32, 32, 32.0).unwrap();
        let a = sample(&EnsembleSpec::gaussian(0.5, 2.0), &l, 3).unwrap();
        let (set, s) = solved(&a);
        let f = RadiusFunctionals::new(&set, &s).unwrap();
        let mut prev = f64::INFINITY;
        for theta in [0.02, 0.05, 0.1, 0.3, 1e6] {
            for center in [0, l.index(&[16, 5], 9)] {
                let m = f.sample(center, theta).unwrap();
                assert_eq!(m.chi, brute_force(&set, &s, center, theta), "theta {theta}");
                assert_eq!(m.chi, m.brute_force_chi());
                assert!(m.chi >= 1.0 && m.chi <= 8.0);
            }
            let m = f.sample(0, theta).unwrap();
            assert!(m.chi <= prev);
            prev = m.chi;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn joint_shift_invariance() {
        let l = Lattice::new(2, 16, 16, 16.0).unwrap();
        let a = sample(&EnsembleSpec::gaussian(0.5, 2.0), &l, 8).unwrap();
        let (set, s) = solved(&a);
        let shift = [3isize, -2, 5];
        let b = a.shift(&shift);
        let (set_b, s_b) = solved(&b);
        let z = l.index(&[4, 7], 2);
        let zb = l.offset_index(z, &[-shift[0], -shift[1], -shift[2]]);
        let m = minimal_radius(&set, &s, 0.1, z).unwrap();
        let mb = minimal_radius(&set_b, &s_b, 0.1, zb).unwrap();
        assert_eq!(m.chi, mb.chi);
        for (x, y) in m.first.iter().zip(&mb.first) {
            assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()));
        }
    }
}
