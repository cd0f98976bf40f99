use std::f64::consts::PI;

use num_complex::Complex64;

use super::fft::{separable_sum, FftNd};
use super::{check_compatible, LinearOperator};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, ScalarField, Shape};

/// Symbol of the forward difference on a periodic axis of `m` points.
pub(crate) fn forward_symbol(m: usize, spacing: f64) -> Vec<Complex64> {
    (0..m)
        .map(|k| (Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64) - 1.0) / spacing)
        .collect()
}

/// Symbol of the backward difference.
pub(crate) fn backward_symbol(m: usize, spacing: f64) -> Vec<Complex64> {
    (0..m)
        .map(|k| (1.0 - Complex64::from_polar(1.0, -2.0 * PI * k as f64 / m as f64)) / spacing)
        .collect()
}

/// Symbol of the centred second difference, `-(4/s^2) sin^2(pi k / m)`.
pub(crate) fn second_symbol(m: usize, spacing: f64) -> Vec<Complex64> {
    (0..m)
        .map(|k| {
            let s = (PI * k as f64 / m as f64).sin();
            Complex64::new(-4.0 * s * s / (spacing * spacing), 0.0)
        })
        .collect()
}

/// A real operator that is diagonal in the discrete Fourier basis.
#[derive(Debug)]
pub struct FourierMultiplier {
    fft: FftNd,
    symbol: Vec<Complex64>,
    nullspace: bool,
}

impl FourierMultiplier {
    /// Multiplier with the given symbol (indexed like the flat array).
    pub fn new(shape: &Shape, symbol: Vec<Complex64>) -> Self {
        assert_eq!(symbol.len(), shape.len());
        Self { fft: FftNd::new(shape), symbol, nullspace: false }
    }

    /// Pseudo-inverse of the multiplier with symbol `symbol`: zero modes map
    /// to zero, which preserves the mean-zero subspace.
    pub fn inverse_of(shape: &Shape, symbol: Vec<Complex64>) -> Self {
        let mut nullspace = false;
        let inv = symbol
            .into_iter()
            .map(|s| {
                if s.norm() == 0.0 {
                    nullspace = true;
                    Complex64::default()
                } else {
                    1.0 / s
                }
            })
            .collect();
        let mut m = Self::new(shape, inv);
        m.nullspace = nullspace;
        m
    }

    /// Symbol built from the per-axis wave numbers of each flat index.
    pub fn symbol_from_fn(shape: &Shape, f: impl Fn(&[usize]) -> Complex64) -> Vec<Complex64> {
        let rank = shape.rank();
        let mut k = vec![0usize; rank];
        let mut out = Vec::with_capacity(shape.len());
        for _ in 0..shape.len() {
            out.push(f(&k));
            for a in 0..rank {
                k[a] += 1;
                if k[a] < shape.extent(a) {
                    break;
                }
                k[a] = 0;
            }
        }
        out
    }

    pub fn apply_in_place(&self, values: &mut [f64]) {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.symbol) {
            *b *= s;
        }
        self.fft.inverse(&mut buf);
        for (v, b) in values.iter_mut().zip(&buf) {
            *v = b.re;
        }
    }
}

impl LinearOperator for FourierMultiplier {
    fn len(&self) -> usize {
        self.symbol.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.apply_in_place(y);
    }

    fn has_constant_nullspace(&self) -> bool {
        self.nullspace
    }
}

/// Reusable inverse of `lap_st` on mean-zero fields of one lattice.
#[derive(Debug)]
pub struct SpectralPoisson {
    lattice: Lattice,
    inverse: FourierMultiplier,
}

impl SpectralPoisson {
    pub fn new(lattice: &Lattice) -> Self {
        let shape = lattice.shape();
        let per_axis: Vec<_> = (0..=lattice.d())
            .map(|a| second_symbol(lattice.extent(a), lattice.spacing(a)))
            .collect();
        let symbol = separable_sum(&shape, &per_axis);
        Self { lattice: *lattice, inverse: FourierMultiplier::inverse_of(&shape, symbol) }
    }

    /// The unique mean-zero `u` with `lap_st(u) = rhs`.
    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.lattice.check_same(rhs.lattice())?;
        check_compatible(rhs.values())?;
        let mut v = rhs.values().to_vec();
        self.inverse.apply_in_place(&mut v);
        Ok(ScalarField::from_raw(&self.lattice, v))
    }
}

/// Inverts the space-time Laplacian on mean-zero right-hand sides.
pub fn spectral_poisson(rhs: &ScalarField) -> Result<ScalarField> {
    SpectralPoisson::new(rhs.lattice()).solve(rhs)
}

/// Exact inverse of the constant-coefficient operator
/// `beta + D_t^b - a0 * (spatial second differences)`; for `beta = 0` the
/// constant mode is sent to zero.
pub fn parabolic_preconditioner(
    lattice: &Lattice,
    beta: f64,
    a0: f64,
) -> Result<FourierMultiplier> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta = {beta} must be non-negative")));
    }
    if !(a0 > 0.0 && a0.is_finite()) {
        return Err(Error::Config(format!("a0 = {a0} must be positive")));
    }
    let d = lattice.d();
    let mut per_axis: Vec<Vec<Complex64>> = (0..d)
        .map(|_| second_symbol(lattice.n(), lattice.h()).into_iter().map(|s| -a0 * s).collect())
        .collect();
    per_axis.push(
        backward_symbol(lattice.n_t(), lattice.tau())
            .into_iter()
            .map(|s| s + beta)
            .collect(),
    );
    let shape = lattice.shape();
    let symbol = separable_sum(&shape, &per_axis);
    Ok(FourierMultiplier::inverse_of(&shape, symbol))
}
