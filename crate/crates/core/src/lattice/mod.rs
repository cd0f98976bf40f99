//! Periodized space-time lattices and the discrete calculus on them.
//!
//! A [`Lattice`] carries `d` spatial axes with `n` points each (spacing
//! `h = L / n`) and one time axis with `n_t` points (spacing `tau`, by
//! default `h^2`). Every axis wraps around.
//!
//! Flat storage is time-major: all spatial sites of the first time level,
//! then the next level, and so on. Within a level the first spatial axis
//! varies fastest. Binary dumps use the same order.
//!
//! Difference operators follow one fixed staggering: gradients are forward
//! differences, divergences and time derivatives are backward differences.
//! With this choice `div_b` is exactly the negative adjoint of `grad_f`, and
//! `lap_st` equals the sum over all `d + 1` axes of backward-of-forward
//! differences.

mod field;
mod io;
mod stencil;

pub use field::{ScalarField, StField, VectorField};
pub use io::{read_phom, write_phom, PhomHeader, PHOM_MAGIC, PHOM_VERSION};
pub use stencil::Shape;
pub(crate) use stencil::{backward_diff_acc, forward_diff_into, roll_into, shifted_acc};

use serde::Serialize;

use crate::error::{Error, Result};

/// Upper bound on the number of stored sites; keeps index arithmetic far
/// from overflow and allocations within reach of a workstation.
const MAX_SITES: usize = 1 << 31;

/// A periodized `(d+1)`-dimensional space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lattice {
    d: usize,
    n: usize,
    n_t: usize,
    length: f64,
    h: f64,
    tau: f64,
}

impl Lattice {
    /// Lattice with the parabolic default `tau = h^2`.
    pub fn new(d: usize, n: usize, n_t: usize, length: f64) -> Result<Self> {
        Self::with_tau(d, n, n_t, length, None)
    }

    pub fn with_tau(
        d: usize,
        n: usize,
        n_t: usize,
        length: f64,
        tau: Option<f64>,
    ) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("dimension d = {d} must be 1, 2 or 3")));
        }
        if n < 2 {
            return Err(Error::Config(format!("n = {n} must be at least 2")));
        }
        if n_t < 2 {
            return Err(Error::Config(format!("n_t = {n_t} must be at least 2")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Config(format!("period L = {length} must be positive")));
        }
        let sites = n
            .checked_pow(d as u32)
            .and_then(|s| s.checked_mul(n_t))
            .filter(|&s| s <= MAX_SITES)
            .ok_or_else(|| Error::Config(format!("lattice {n}^{d} x {n_t} is too large")))?;
        debug_assert!(sites > 0);
        let h = length / n as f64;
        let tau = match tau {
            Some(t) if t.is_finite() && t > 0.0 => t,
            Some(t) => return Err(Error::Config(format!("tau = {t} must be positive"))),
            None => h * h,
        };
        Ok(Self { d, n, n_t, length, h, tau })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Spatial period `L`.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Temporal period `n_t * tau`.
    pub fn period_t(&self) -> f64 {
        self.n_t as f64 * self.tau
    }

    pub fn spatial_sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn sites(&self) -> usize {
        self.spatial_sites() * self.n_t
    }

    /// Spacing along `axis`; axis `d` is time.
    pub fn spacing(&self, axis: usize) -> f64 {
        if axis < self.d {
            self.h
        } else {
            self.tau
        }
    }

    /// Number of points along `axis`; axis `d` is time.
    pub fn extent(&self, axis: usize) -> usize {
        if axis < self.d {
            self.n
        } else {
            self.n_t
        }
    }

    /// Shape of the full space-time array (`d + 1` axes).
    pub fn shape(&self) -> Shape {
        let mut ext = vec![self.n; self.d];
        ext.push(self.n_t);
        Shape::new(&ext)
    }

    /// Shape of a single time level (`d` axes).
    pub fn spatial_shape(&self) -> Shape {
        Shape::new(&vec![self.n; self.d])
    }

    /// Flat index of the site with spatial indices `x` at time level `t`.
    pub fn index(&self, x: &[usize], t: usize) -> usize {
        debug_assert_eq!(x.len(), self.d);
        let mut idx = t % self.n_t;
        for i in (0..self.d).rev() {
            idx = idx * self.n + x[i] % self.n;
        }
        idx
    }

    /// Inverse of [`Lattice::index`]: axis coordinates, time last.
    pub fn coords(&self, mut idx: usize) -> [usize; 4] {
        let mut c = [0usize; 4];
        for slot in c.iter_mut().take(self.d) {
            *slot = idx % self.n;
            idx /= self.n;
        }
        c[self.d] = idx;
        c
    }

    /// Index of the site displaced by `offsets` (one entry per axis, time
    /// last) with periodic wraparound.
    pub fn offset_index(&self, idx: usize, offsets: &[isize]) -> usize {
        let c = self.coords(idx);
        let mut out = [0usize; 4];
        for a in 0..=self.d {
            let m = self.extent(a) as isize;
            let o = offsets.get(a).copied().unwrap_or(0);
            out[a] = (c[a] as isize + o).rem_euclid(m) as usize;
        }
        self.index(&out[..self.d], out[self.d])
    }

    /// Physical position of a site: spatial coordinates `idx * h`, time `t * tau`.
    pub fn position(&self, idx: usize) -> ([f64; 3], f64) {
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for i in 0..self.d {
            x[i] = c[i] as f64 * self.h;
        }
        (x, c[self.d] as f64 * self.tau)
    }

    pub(crate) fn check_same(&self, other: &Lattice) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::LatticeMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Discrete parabolic cube of radius `r` around `center`: spatial
    /// half-width `floor(r/h)` sites, temporal half-width `floor(r^2/tau)`
    /// levels, clamped to one full period per axis.
    pub fn parabolic_box(&self, center: usize, r: f64) -> Result<BoxWindow> {
        let m = (r / self.h + 1e-9).floor() as usize;
        let m_t = (r * r / self.tau + 1e-9).floor() as usize;
        if m < 1 || m_t < 1 {
            return Err(Error::Config(format!(
                "radius {r} spans less than one site (h = {}, tau = {})",
                self.h, self.tau
            )));
        }
        let mut half = vec![m; self.d];
        half.push(m_t);
        Ok(BoxWindow::new(self, center, &half))
    }

    /// Purely spatial ball-like cube of radius `r` at the time level of
    /// `center` (one level thick).
    pub fn spatial_box(&self, center: usize, r: f64) -> Result<BoxWindow> {
        let m = (r / self.h + 1e-9).floor() as usize;
        if m < 1 {
            return Err(Error::Config(format!(
                "radius {r} spans less than one site (h = {})",
                self.h
            )));
        }
        let mut half = vec![m; self.d];
        half.push(0);
        Ok(BoxWindow::new(self, center, &half))
    }
}

/// A rectangular window of sites with per-axis signed offsets from its
/// center, wrapping periodically and never visiting a site twice.
#[derive(Debug, Clone)]
pub struct BoxWindow {
    /// Per axis (time last): `(wrapped coordinate, signed offset)`.
    axes: Vec<Vec<(usize, isize)>>,
    lattice: Lattice,
}

impl BoxWindow {
    fn new(lattice: &Lattice, center: usize, half: &[usize]) -> Self {
        let c = lattice.coords(center);
        let axes = (0..=lattice.d())
            .map(|a| {
                let m = lattice.extent(a);
                let hw = half[a];
                let range: Vec<isize> = if 2 * hw + 1 >= m {
                    // whole axis, offsets centred as symmetrically as possible
                    let lo = -((m as isize - 1) / 2);
                    (lo..lo + m as isize).collect()
                } else {
                    (-(hw as isize)..=hw as isize).collect()
                };
                range
                    .into_iter()
                    .map(|o| (((c[a] as isize + o).rem_euclid(m as isize)) as usize, o))
                    .collect()
            })
            .collect();
        Self { axes, lattice: *lattice }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calls `f(site, offsets)` for every site; offsets are in lattice
    /// units, one per axis with time last.
    pub fn for_each(&self, mut f: impl FnMut(usize, &[isize])) {
        let rank = self.axes.len();
        let mut pos = vec![0usize; rank];
        let mut offs = vec![0isize; rank];
        let mut x = [0usize; 3];
        let d = self.lattice.d();
        loop {
            for a in 0..rank {
                offs[a] = self.axes[a][pos[a]].1;
            }
            for i in 0..d {
                x[i] = self.axes[i][pos[i]].0;
            }
            let idx = self.lattice.index(&x[..d], self.axes[d][pos[d]].0);
            f(idx, &offs);
            let mut a = 0;
            loop {
                pos[a] += 1;
                if pos[a] < self.axes[a].len() {
                    break;
                }
                pos[a] = 0;
                a += 1;
                if a == rank {
                    return;
                }
            }
        }
    }

    /// Arithmetic mean of `values` over the window.
    pub fn mean(&self, values: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each(|i, _| s += values[i]);
        s / self.len() as f64
    }
}
