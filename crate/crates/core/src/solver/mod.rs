//! Linear solvers: conjugate gradient, BiCGStab and discrete-Fourier
//! inversion of constant-coefficient operators.

mod fft;
mod krylov;
mod spectral;

pub use fft::FftNd;
pub use krylov::{bicgstab, bicgstab_slices, cg, cg_slices};
pub use spectral::{
    parabolic_preconditioner, spectral_poisson, FourierMultiplier, SpectralPoisson,
};
pub(crate) use spectral::{backward_symbol, forward_symbol};

use std::fmt;

use serde::Serialize;

/// A linear map on flat arrays of site values.
pub trait LinearOperator: Sync {
    /// Number of unknowns.
    fn len(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn is_symmetric(&self) -> bool {
        false
    }

    /// Constants span the kernel; right-hand sides must then have zero mean
    /// and solutions are returned in the mean-zero gauge.
    fn has_constant_nullspace(&self) -> bool {
        false
    }
}

/// The identity map, mostly useful in tests.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn len(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations, relative residual {:.3e}",
            if self.converged { "converged" } else { "not converged" },
            self.iterations,
            self.relative_residual
        )
    }
}

/// Default relative tolerance for every iterative solve.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to `10 * sqrt(unknowns)`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, max_iter: None }
    }

    pub(crate) fn max_iter_for(&self, len: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| (10.0 * (len as f64).sqrt()).ceil() as usize)
            .max(1)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn remove_mean(a: &mut [f64]) {
    let m = a.iter().sum::<f64>() / a.len() as f64;
    a.iter_mut().for_each(|v| *v -= m);
}

/// Relative tolerance for the zero-mean compatibility test, measured
/// against the Euclidean norm of the right-hand side.
pub(crate) const COMPAT_TOL: f64 = 1e-12;

pub(crate) fn check_compatible(b: &[f64]) -> crate::Result<()> {
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let allowed = COMPAT_TOL * norm(b);
    if mean.abs() > allowed {
        Err(crate::Error::Compatibility { mean, allowed })
    } else {
        Ok(())
    }
}
