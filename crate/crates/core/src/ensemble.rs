//! Random and deterministic coefficient fields `a(x, t)`.
//!
//! Every generator is a pure function of `(spec, lattice, seed)`. Random
//! draws come from ChaCha8 streams keyed by the seed, so samples are
//! reproducible across runs and platforms and can be produced in any order.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, ScalarField};
use crate::solver::FftNd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Constant,
    LaminateSpace,
    LaminateTime,
    Checkerboard,
    Gaussian,
}

fn default_mu() -> f64 {
    0.5
}

/// Description of a coefficient ensemble.
///
/// * `constant`: `phases[0] * I` everywhere (default value 1).
/// * `laminate_space`: layers across `x_1` of width `ell` (default `L/2`)
///   alternating between `phases[0]` and `phases[1]`.
/// * `laminate_time`: the same in time with layer duration `ell^2`
///   (default half the period).
/// * `checkerboard`: i.i.d. uniform choice among `phases` on space-time
///   blocks of side `ell` in space and `ell^2` in time (default `ell = h`).
/// * `gaussian`: squared-exponential Gaussian field of length `ell`
///   (time scale `ell^2`) mapped into `[mu, 1/mu]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<f64>,
    /// Full symmetric matrices instead of `a * I` (gaussian, `d = 2` only).
    #[serde(default)]
    pub anisotropic: bool,
}

impl EnsembleSpec {
    pub fn constant(value: f64) -> Self {
        let mu = value.min(1.0 / value).min(default_mu());
        Self { kind: EnsembleKind::Constant, mu, ell: None, phases: vec![value], anisotropic: false }
    }

    pub fn two_phase(kind: EnsembleKind, lo: f64, hi: f64, ell: Option<f64>) -> Self {
        let mu = lo.min(1.0 / hi);
        Self { kind, mu, ell, phases: vec![lo, hi], anisotropic: false }
    }

    pub fn gaussian(mu: f64, ell: f64) -> Self {
        Self { kind: EnsembleKind::Gaussian, mu, ell: Some(ell), phases: vec![], anisotropic: false }
    }

    fn phases_or_default(&self) -> Vec<f64> {
        match (self.kind, self.phases.is_empty()) {
            (EnsembleKind::Constant, true) => vec![1.0],
            (EnsembleKind::Gaussian, _) => vec![],
            (_, true) => vec![self.mu, 1.0 / self.mu],
            _ => self.phases.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Spec(format!("mu = {} must lie in (0, 1)", self.mu)));
        }
        if let Some(ell) = self.ell {
            if !(ell > 0.0 && ell.is_finite()) {
                return Err(Error::Spec(format!("ell = {ell} must be positive")));
            }
        }
        let (lo, hi) = (self.mu, 1.0 / self.mu);
        for &p in &self.phases_or_default() {
            if !(p >= lo * (1.0 - 1e-12) && p <= hi * (1.0 + 1e-12)) {
                return Err(Error::Spec(format!("phase value {p} outside [{lo}, {hi}]")));
            }
        }
        match self.kind {
            EnsembleKind::LaminateSpace | EnsembleKind::LaminateTime
                if self.phases_or_default().len() != 2 =>
            {
                Err(Error::Spec("laminates take exactly two phases".into()))
            }
            EnsembleKind::Gaussian if self.ell.is_none() => {
                Err(Error::Spec("gaussian ensemble needs a correlation length ell".into()))
            }
            EnsembleKind::Gaussian if !self.phases.is_empty() => {
                Err(Error::Spec("gaussian ensemble takes no phases".into()))
            }
            k if self.anisotropic && k != EnsembleKind::Gaussian => {
                Err(Error::Spec("anisotropic fields are only available for the gaussian kind".into()))
            }
            _ => Ok(()),
        }
    }

    /// True when the field is a deterministic function of position.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self.kind,
            EnsembleKind::Constant | EnsembleKind::LaminateSpace | EnsembleKind::LaminateTime
        )
    }

    /// Scalar coefficient at a continuum point, for every kind except
    /// `gaussian` (which only exists on a lattice). Laminates need `ell`;
    /// a checkerboard without `ell` uses `default_ell`.
    pub fn scalar_at(&self, seed: u64, x: &[f64], t: f64, default_ell: f64) -> Result<f64> {
        let phases = self.phases_or_default();
        match self.kind {
            EnsembleKind::Constant => Ok(phases[0]),
            EnsembleKind::LaminateSpace => {
                let ell = self.ell.ok_or_else(|| Error::Spec("laminate needs ell".into()))?;
                Ok(phases[((x[0] / ell).floor() as i64).rem_euclid(2) as usize])
            }
            EnsembleKind::LaminateTime => {
                let ell = self.ell.ok_or_else(|| Error::Spec("laminate needs ell".into()))?;
                Ok(phases[((t / (ell * ell)).floor() as i64).rem_euclid(2) as usize])
            }
            EnsembleKind::Checkerboard => {
                let ell = self.ell.unwrap_or(default_ell);
                let mut block = [0i64; 4];
                for (b, xi) in block.iter_mut().zip(x) {
                    *b = (xi / ell).floor() as i64;
                }
                block[3] = (t / (ell * ell)).floor() as i64;
                Ok(phases[block_choice(seed, &block, phases.len())])
            }
            EnsembleKind::Gaussian => {
                Err(Error::Spec("gaussian fields cannot be evaluated pointwise".into()))
            }
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn block_choice(seed: u64, block: &[i64; 4], count: usize) -> usize {
    let mut key = 0x5bd1_e995u64;
    for &b in block {
        key = splitmix(key ^ b as u64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng.gen_range(0..count)
}

/// Seed of sample `index` in a batch driven by `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

/// A `d x d` real matrix per site, stored densely and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    lattice: Lattice,
    mu: f64,
    entries: Vec<f64>,
}

impl CoefficientField {
    pub fn constant(lattice: &Lattice, value: f64) -> Self {
        Self::from_scalar(lattice, vec![value; lattice.sites()], value.min(1.0 / value))
            .expect("sizes match")
    }

    /// Isotropic field `a(z) I` from one value per site.
    pub fn from_scalar(lattice: &Lattice, values: Vec<f64>, mu: f64) -> Result<Self> {
        if values.len() != lattice.sites() {
            return Err(Error::LatticeMismatch(format!(
                "{} values for {} sites",
                values.len(),
                lattice.sites()
            )));
        }
        let d = lattice.d();
        let mut entries = vec![0.0; lattice.sites() * d * d];
        for (site, &v) in values.iter().enumerate() {
            for i in 0..d {
                entries[site * d * d + i * d + i] = v;
            }
        }
        Ok(Self { lattice: *lattice, mu, entries })
    }

    /// Dense entries, `d * d` per site in site order.
    pub fn from_entries(lattice: &Lattice, entries: Vec<f64>, mu: f64) -> Result<Self> {
        let d = lattice.d();
        if entries.len() != lattice.sites() * d * d {
            return Err(Error::LatticeMismatch(format!(
                "{} entries for {} sites of {d}x{d} matrices",
                entries.len(),
                lattice.sites()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        Ok(Self { lattice: *lattice, mu, entries })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Declared ellipticity constant.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, site: usize, i: usize, k: usize) -> f64 {
        let d = self.lattice.d();
        self.entries[site * d * d + i * d + k]
    }

    pub fn matrix(&self, site: usize) -> &[f64] {
        let dd = self.lattice.d() * self.lattice.d();
        &self.entries[site * dd..(site + 1) * dd]
    }

    /// Entry `(i, k)` as a scalar field.
    pub fn entry_field(&self, i: usize, k: usize) -> ScalarField {
        let values = (0..self.lattice.sites()).map(|s| self.get(s, i, k)).collect();
        ScalarField::from_raw(&self.lattice, values)
    }

    /// Mean of the diagonal entries over all sites.
    pub fn mean_diagonal(&self) -> f64 {
        let d = self.lattice.d();
        let sum: f64 = (0..self.lattice.sites())
            .map(|s| (0..d).map(|i| self.get(s, i, i)).sum::<f64>())
            .sum();
        sum / (d * self.lattice.sites()) as f64
    }

    /// Diagonal entry `(i, i)` averaged onto the faces between `z` and
    /// `z + h e_i`.
    pub fn face_diagonal(&self, i: usize) -> Vec<f64> {
        let n = self.lattice.sites();
        let mut shift = vec![0isize; self.lattice.d() + 1];
        shift[i] = 1;
        (0..n)
            .map(|s| {
                let up = self.lattice.offset_index(s, &shift);
                0.5 * (self.get(s, i, i) + self.get(up, i, i))
            })
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        let dd = self.lattice.d() * self.lattice.d();
        self.entries.chunks_exact(dd).all(|m| m == &self.entries[..dd])
    }

    /// Extreme eigenvalues of the symmetric parts over all sites.
    pub fn ellipticity_report(&self) -> (f64, f64) {
        let d = self.lattice.d();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in self.entries.chunks_exact(d * d) {
            let (a, b) = sym_eigen_range(m, d);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        (lo, hi)
    }

    /// `a(z + offsets)` with periodic wraparound (offsets per axis, time last).
    pub fn shift(&self, offsets: &[isize]) -> Self {
        let dd = self.lattice.d() * self.lattice.d();
        let mut entries = Vec::with_capacity(self.entries.len());
        for s in 0..self.lattice.sites() {
            let src = self.lattice.offset_index(s, offsets);
            entries.extend_from_slice(&self.entries[src * dd..(src + 1) * dd]);
        }
        Self { lattice: self.lattice, mu: self.mu, entries }
    }
}

fn sym_eigen_range(m: &[f64], d: usize) -> (f64, f64) {
    match d {
        1 => (m[0], m[0]),
        2 => {
            let s = Matrix2::new(m[0], 0.5 * (m[1] + m[2]), 0.5 * (m[1] + m[2]), m[3]);
            let e = s.symmetric_eigenvalues();
            (e.min(), e.max())
        }
        _ => {
            let a = DMatrix::from_row_slice(d, d, m);
            let s = (&a + a.transpose()) * 0.5;
            let e = s.symmetric_eigenvalues();
            (e.min(), e.max())
        }
    }
}

/// Draws a coefficient field. Identical arguments give bit-identical output.
pub fn sample(spec: &EnsembleSpec, lattice: &Lattice, seed: u64) -> Result<CoefficientField> {
    spec.validate()?;
    let d = lattice.d();
    let sites = lattice.sites();
    let h = lattice.h();
    let center = |s: usize| {
        let (x, t) = lattice.position(s);
        let mut c = [0.0; 3];
        for i in 0..d {
            c[i] = x[i] + 0.5 * h;
        }
        (c, t + 0.5 * lattice.tau())
    };
    match spec.kind {
        EnsembleKind::Gaussian => return gaussian(spec, lattice, seed),
        EnsembleKind::Checkerboard => {
            let ell = spec.ell.unwrap_or(h);
            check_commensurate(lattice.length(), ell, "spatial period")?;
            check_commensurate(lattice.period_t(), ell * ell, "time period")?;
        }
        _ => {}
    }
    let mut spec = spec.clone();
    match spec.kind {
        EnsembleKind::LaminateSpace if spec.ell.is_none() => spec.ell = Some(0.5 * lattice.length()),
        EnsembleKind::LaminateTime if spec.ell.is_none() => {
            spec.ell = Some((0.5 * lattice.period_t()).sqrt())
        }
        _ => {}
    }
    let values = (0..sites)
        .map(|s| {
            let (x, t) = center(s);
            spec.scalar_at(seed, &x[..d], t, h)
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientField::from_scalar(lattice, values, spec.mu)
}

fn check_commensurate(period: f64, block: f64, what: &str) -> Result<()> {
    let ratio = period / block;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
        return Err(Error::Spec(format!(
            "{what} {period} is not a whole number of blocks of size {block}"
        )));
    }
    Ok(())
}

fn tanh_map(mu: f64, g: f64) -> f64 {
    mu + (1.0 / mu - mu) * 0.5 * (1.0 + g.tanh())
}

/// Unit-variance stationary Gaussian field on the lattice torus with
/// covariance `exp(-|x|^2 / (2 ell^2) - t^2 / (2 ell^4))`, periodized.
pub fn gaussian_field(lattice: &Lattice, ell: f64, seed: u64, stream: u64) -> ScalarField {
    let shape = lattice.shape();
    let fft = FftNd::new(&shape);
    let d = lattice.d();
    let wrap = |c: usize, m: usize, step: f64| {
        let k = c.min(m - c) as f64;
        k * step
    };
    let mut cov: Vec<Complex64> = (0..lattice.sites())
        .map(|s| {
            let c = lattice.coords(s);
            let mut r2 = 0.0;
            for i in 0..d {
                r2 += wrap(c[i], lattice.n(), lattice.h()).powi(2);
            }
            let t = wrap(c[d], lattice.n_t(), lattice.tau());
            Complex64::new((-r2 / (2.0 * ell * ell) - t * t / (2.0 * ell.powi(4))).exp(), 0.0)
        })
        .collect();
    fft.forward(&mut cov);
    let lambda: Vec<f64> = cov.iter().map(|c| c.re.max(0.0)).collect();
    let variance = lambda.iter().sum::<f64>() / lambda.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut buf: Vec<Complex64> = (0..lattice.sites())
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    fft.forward(&mut buf);
    for (b, l) in buf.iter_mut().zip(&lambda) {
        *b *= l.sqrt();
    }
    fft.inverse(&mut buf);
    let scale = 1.0 / variance.sqrt();
    ScalarField::from_raw(lattice, buf.iter().map(|b| b.re * scale).collect())
}

fn gaussian(spec: &EnsembleSpec, lattice: &Lattice, seed: u64) -> Result<CoefficientField> {
    let ell = spec.ell.expect("validated");
    let mu = spec.mu;
    if !spec.anisotropic {
        let g = gaussian_field(lattice, ell, seed, 0);
        let values = g.values().iter().map(|&x| tanh_map(mu, x)).collect();
        return CoefficientField::from_scalar(lattice, values, mu);
    }
    if lattice.d() != 2 {
        return Err(Error::Spec("anisotropic gaussian fields require d = 2".into()));
    }
    let l1 = gaussian_field(lattice, ell, seed, 0);
    let l2 = gaussian_field(lattice, ell, seed, 1);
    let th = gaussian_field(lattice, ell, seed, 2);
    let mut entries = Vec::with_capacity(4 * lattice.sites());
    for s in 0..lattice.sites() {
        let a = tanh_map(mu, l1.values()[s]);
        let b = tanh_map(mu, l2.values()[s]);
        let angle = 0.5 * PI * (1.0 + th.values()[s].tanh());
        let (sn, cs) = angle.sin_cos();
        let off = (a - b) * cs * sn;
        entries.extend_from_slice(&[a * cs * cs + b * sn * sn, off, off, a * sn * sn + b * cs * cs]);
    }
    CoefficientField::from_entries(lattice, entries, mu)
}
