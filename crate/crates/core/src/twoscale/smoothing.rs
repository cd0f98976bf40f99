//! Discrete mollifiers `K_eps` (space) and `S_eps` (space-time).
//!
//! The spatial profile is `(1 - 4|y|^2)^4` on the half ball
//! `{|y| < 1/2, y_1 >= 0}`, the temporal profile `(1 - 16 s^2)^4` on
//! `0 <= s < 1/4`, both in units of `eps` and `eps^2`. Weights are
//! normalized after discretization so that they sum to one. The kernels
//! look only backwards (`f(x - y, t - s)` with `y_1, s >= 0`), so `S_eps`
//! never reads the future and is first order accurate in `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{shifted_acc, Lattice, ScalarField, Shape};

/// How `S_eps` treats times before the first level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBoundary {
    /// Wrap around the time period.
    #[default]
    Periodic,
    /// Treat earlier times as zero.
    Zero,
}

/// Normalized spatial weights `K f(x) = sum_m w_m f(x - m h)`.
#[derive(Debug, Clone)]
pub struct SpatialKernel {
    offsets: Vec<Vec<isize>>,
    weights: Vec<f64>,
}

impl SpatialKernel {
    pub fn new(d: usize, h: f64, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= h) {
            return Err(Error::Config(format!("eps = {eps} is below the grid spacing {h}")));
        }
        let reach = (0.5 * eps / h).ceil() as isize;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut m = vec![-reach; d];
        m[0] = 0;
        loop {
            let r2: f64 = m.iter().map(|&c| (c as f64 * h / eps).powi(2)).sum();
            if r2 < 0.25 {
                offsets.push(m.clone());
                weights.push((1.0 - 4.0 * r2).powi(4));
            }
            let mut a = 0;
            loop {
                m[a] += 1;
                if m[a] <= reach {
                    break;
                }
                m[a] = if a == 0 { 0 } else { -reach };
                a += 1;
                if a == d {
                    break;
                }
            }
            if a == d {
                break;
            }
        }
        normalize(&mut weights);
        Ok(Self { offsets, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest offset along any axis.
    pub fn reach(&self) -> usize {
        self.offsets.iter().flatten().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    /// `dst = K src` on a periodic array whose leading axes are spatial;
    /// trailing axes are left alone.
    pub fn apply(&self, src: &[f64], dst: &mut [f64], shape: &Shape) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        for (m, &w) in self.offsets.iter().zip(&self.weights) {
            shifted_acc(src, dst, shape, m, w);
        }
    }
}

/// Normalized backward weights `T f(t) = sum_m w_m f(t - m tau)`.
#[derive(Debug, Clone)]
pub struct TimeKernel {
    weights: Vec<f64>,
}

impl TimeKernel {
    pub fn new(tau: f64, eps: f64) -> Self {
        let mut weights = Vec::new();
        let mut m = 0usize;
        loop {
            let s = m as f64 * tau / (eps * eps);
            if s >= 0.25 {
                break;
            }
            weights.push((1.0 - 16.0 * s * s).powi(4));
            m += 1;
        }
        normalize(&mut weights);
        Self { weights }
    }

    /// `weights()[m]` multiplies the value `m` levels back.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

fn check_fits(l: &Lattice, eps: f64, boundary: Option<TimeBoundary>) -> Result<()> {
    if eps > l.length() {
        return Err(Error::Config(format!(
            "kernel of width {eps} does not fit the period {}",
            l.length()
        )));
    }
    if boundary == Some(TimeBoundary::Periodic) && 0.25 * eps * eps > 0.5 * l.period_t() {
        return Err(Error::Config(format!(
            "time kernel of length {} does not fit the period {}",
            0.25 * eps * eps,
            l.period_t()
        )));
    }
    Ok(())
}

/// `K_eps u`: spatial mollification at every time level.
pub fn smooth_k(u: &ScalarField, eps: f64) -> Result<ScalarField> {
    let l = u.lattice();
    check_fits(l, eps, None)?;
    let k = SpatialKernel::new(l.d(), l.h(), eps)?;
    let mut out = vec![0.0; l.sites()];
    k.apply(u.values(), &mut out, &l.shape());
    ScalarField::from_values(l, out)
}

/// `S_eps u`: spatial mollification followed by the backward time kernel.
pub fn smooth_s(u: &ScalarField, eps: f64, boundary: TimeBoundary) -> Result<ScalarField> {
    let l = *u.lattice();
    check_fits(&l, eps, Some(boundary))?;
    let ku = smooth_k(u, eps)?;
    let tk = TimeKernel::new(l.tau(), eps);
    let n_s = l.spatial_sites();
    let n_t = l.n_t();
    let mut out = vec![0.0; l.sites()];
    for t in 0..n_t {
        let dst = &mut out[t * n_s..(t + 1) * n_s];
        for (m, &w) in tk.weights().iter().enumerate() {
            let src_t = match boundary {
                TimeBoundary::Periodic => (t as isize - m as isize).rem_euclid(n_t as isize) as usize,
                TimeBoundary::Zero if m <= t => t - m,
                TimeBoundary::Zero => continue,
            };
            let src = &ku.values()[src_t * n_s..(src_t + 1) * n_s];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    ScalarField::from_values(&l, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wave(l: &Lattice) -> ScalarField {
        let period = l.period_t();
        ScalarField::from_fn(l, |x, t| (2.0 * PI * x[0]).sin() * (2.0 * PI * t / period).sin())
    }

    #[test]
    fn weights_sum_to_one() {
        for eps in [0.1, 0.25, 0.5] {
            let k = SpatialKernel::new(2, 0.02, eps).unwrap();
            assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(k.reach() as f64 * 0.02 < 0.5 * eps + 0.02);
            let t = TimeKernel::new(0.001, eps);
            assert!((t.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        assert_eq!(SpatialKernel::new(1, 0.1, 0.1).unwrap().len(), 1);
    }

    #[test]
    fn constants_are_fixed_and_small_eps_rejected() {
        let l = Lattice::with_tau(2, 16, 16, 1.0, Some(1.0 / 16.0)).unwrap();
        let c = ScalarField::constant(&l, 3.25);
        let s = smooth_s(&c, 0.5, TimeBoundary::Periodic).unwrap();
        assert!(s.values().iter().all(|&v| (v - 3.25).abs() < 1e-14));
        assert!(smooth_k(&c, 0.01).is_err());
        assert!(smooth_k(&c, 2.0).is_err());
    }

    #[test]
    fn max_norm_never_grows() {
        let l = Lattice::with_tau(2, 32, 16, 1.0, Some(1.0 / 64.0)).unwrap();
        let f = wave(&l);
        let s = smooth_s(&f, 0.25, TimeBoundary::Periodic).unwrap();
        assert!(s.norm_max() <= f.norm_max() + 1e-15);
    }

    #[test]
    fn k_commutes_with_time_shift() {
        let l = Lattice::with_tau(2, 16, 8, 1.0, Some(0.1)).unwrap();
        let f = ScalarField::from_fn(&l, |x, t| (x[0] * 7.0 + x[1] * 3.0 + t * 11.0).sin());
        let a = smooth_k(&f.shifted(&[0, 0, 3]), 0.3).unwrap();
        let b = smooth_k(&f, 0.3).unwrap().shifted(&[0, 0, 3]);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn zero_boundary_ignores_the_wrap() {
        let l = Lattice::with_tau(1, 16, 32, 1.0, Some(1.0 / 256.0)).unwrap();
        // nonzero only on the last level: zero extension must not carry it to t = 0
        let f = ScalarField::from_fn(&l, |_, t| if t > 30.5 / 256.0 { 1.0 } else { 0.0 });
        let p = smooth_s(&f, 0.5, TimeBoundary::Periodic).unwrap();
        let z = smooth_s(&f, 0.5, TimeBoundary::Zero).unwrap();
        assert!(p.values()[0] > 0.0);
        assert_eq!(z.values()[0], 0.0);
    }

    #[test]
    fn k_error_is_first_order() {
        let l = Lattice::with_tau(2, 128, 4, 1.0, Some(0.25)).unwrap();
        let f = ScalarField::from_fn(&l, |x, _| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let grad = f.grad_f().norm_rms();
        let mut errs = Vec::new();
        for eps in [0.25, 0.125, 0.0625] {
            let mut e = smooth_k(&f, eps).unwrap();
            e.add_scaled(-1.0, &f);
            errs.push(e.norm_rms() / (eps * grad));
        }
        for r in &errs {
            assert!(*r < 2.0 && *r > 0.01, "{errs:?}");
        }
    }
}
