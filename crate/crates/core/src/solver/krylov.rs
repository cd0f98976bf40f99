use super::{check_compatible, dot, norm, remove_mean, LinearOperator, SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::lattice::ScalarField;

fn check_len(op: &dyn LinearOperator, b: &ScalarField) -> Result<()> {
    if op.len() != b.values().len() {
        return Err(Error::LatticeMismatch(format!(
            "operator of size {} applied to {} values",
            op.len(),
            b.values().len()
        )));
    }
    Ok(())
}

/// Conjugate gradient for symmetric positive (semi)definite operators.
pub fn cg(
    op: &dyn LinearOperator,
    b: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveReport)> {
    check_len(op, b)?;
    let mut x = vec![0.0; b.values().len()];
    let report = cg_slices(op, b.values(), &mut x, opts, None)?;
    Ok((ScalarField::from_raw(b.lattice(), x), report))
}

/// BiCGStab with optional right preconditioner.
pub fn bicgstab(
    op: &dyn LinearOperator,
    b: &ScalarField,
    opts: &SolveOptions,
    precond: Option<&dyn LinearOperator>,
) -> Result<(ScalarField, SolveReport)> {
    check_len(op, b)?;
    let mut x = vec![0.0; b.values().len()];
    let report = bicgstab_slices(op, b.values(), &mut x, opts, precond)?;
    Ok((ScalarField::from_raw(b.lattice(), x), report))
}

fn true_residual(op: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm(r)
}

/// Preconditioned CG on raw arrays; `x` carries the initial guess.
pub fn cg_slices(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    opts: &SolveOptions,
    precond: Option<&dyn LinearOperator>,
) -> Result<SolveReport> {
    let n = b.len();
    let nullspace = op.has_constant_nullspace();
    let mut rhs;
    let b = if nullspace {
        check_compatible(b)?;
        rhs = b.to_vec();
        remove_mean(&mut rhs);
        &rhs[..]
    } else {
        b
    };
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport { iterations: 0, relative_residual: 0.0, converged: true });
    }
    let max_iter = opts.max_iter_for(n);
    let target = 0.5 * opts.tol * bnorm;

    let mut r = vec![0.0; n];
    let mut rnorm = true_residual(op, b, x, &mut r);
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut it = 0;
    let precondition = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    while rnorm > target && it < max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        rnorm = norm(&r);
        if rnorm <= target {
            break;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if nullspace {
        remove_mean(x);
    }
    let rel = true_residual(op, b, x, &mut r) / bnorm;
    Ok(SolveReport { iterations: it, relative_residual: rel, converged: rel <= opts.tol })
}

/// Right-preconditioned BiCGStab on raw arrays; `x` carries the initial
/// guess. Restarts from the current iterate when the recursive residual
/// drifts away from the true one.
pub fn bicgstab_slices(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    opts: &SolveOptions,
    precond: Option<&dyn LinearOperator>,
) -> Result<SolveReport> {
    let n = b.len();
    let nullspace = op.has_constant_nullspace();
    let mut rhs;
    let b = if nullspace {
        check_compatible(b)?;
        rhs = b.to_vec();
        remove_mean(&mut rhs);
        &rhs[..]
    } else {
        b
    };
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport { iterations: 0, relative_residual: 0.0, converged: true });
    }
    let max_iter = opts.max_iter_for(n);
    // iterate a little below the requested tolerance so that the true
    // residual, which accumulates rounding differently, still meets it
    let target = 0.5 * opts.tol * bnorm;
    let precondition = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };

    let mut r = vec![0.0; n];
    let mut r_hat = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut it = 0;

    let mut rnorm = true_residual(op, b, x, &mut r);
    'restart: while rnorm > target && it < max_iter {
        r_hat.copy_from_slice(&r);
        p.iter_mut().for_each(|v| *v = 0.0);
        v.iter_mut().for_each(|v| *v = 0.0);
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        while it < max_iter {
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || !rho_new.is_finite() {
                rnorm = true_residual(op, b, x, &mut r);
                continue 'restart;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precondition(&p, &mut p_hat);
            op.apply(&p_hat, &mut v);
            let rv = dot(&r_hat, &v);
            if rv == 0.0 || !rv.is_finite() {
                it += 1;
                rnorm = true_residual(op, b, x, &mut r);
                continue 'restart;
            }
            alpha = rho / rv;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            it += 1;
            if norm(&s) <= target {
                for i in 0..n {
                    x[i] += alpha * p_hat[i];
                }
                break;
            }
            precondition(&s, &mut s_hat);
            op.apply(&s_hat, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * p_hat[i] + omega * s_hat[i];
                r[i] = s[i] - omega * t[i];
            }
            if omega == 0.0 {
                rnorm = true_residual(op, b, x, &mut r);
                continue 'restart;
            }
            if norm(&r) <= target {
                break;
            }
        }
        rnorm = true_residual(op, b, x, &mut r);
        if rnorm <= opts.tol * bnorm {
            break;
        }
    }
    if nullspace {
        remove_mean(x);
    }
    let rel = true_residual(op, b, x, &mut r) / bnorm;
    Ok(SolveReport { iterations: it, relative_residual: rel, converged: rel <= opts.tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::solver::{spectral_poisson, Identity};

    /// `-lap_st` restricted to mean-zero fields.
    struct NegLap(Lattice);

    impl LinearOperator for NegLap {
        fn len(&self) -> usize {
            self.0.sites()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            let f = ScalarField::from_raw(&self.0, x.to_vec()).lap_st();
            for (yi, fi) in y.iter_mut().zip(f.values()) {
                *yi = -fi;
            }
        }
        fn is_symmetric(&self) -> bool {
            true
        }
        fn has_constant_nullspace(&self) -> bool {
            true
        }
    }

    #[test]
    fn zero_rhs_gives_zero_in_zero_iterations() {
        let l = Lattice::new(2, 4, 4, 1.0).unwrap();
        let b = ScalarField::zeros(&l);
        let (x, rep) = cg(&NegLap(l), &b, &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert_eq!(x.norm_max(), 0.0);
        let (x, rep) = bicgstab(&NegLap(l), &b, &SolveOptions::default(), None).unwrap();
        assert_eq!((rep.iterations, x.norm_max()), (0, 0.0));
    }

    #[test]
    fn identity_in_one_iteration() {
        let l = Lattice::new(1, 8, 3, 1.0).unwrap();
        let b = ScalarField::from_fn(&l, |x, t| x[0] + 2.0 * t + 0.1);
        let (x, rep) = cg(&Identity(l.sites()), &b, &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (a, c) in x.values().iter().zip(b.values()) {
            assert!((a - c).abs() < 1e-14);
        }
        let (x, rep) = bicgstab(&Identity(l.sites()), &b, &SolveOptions::default(), None).unwrap();
        assert!(rep.converged && rep.iterations == 1);
        assert!(x.values().iter().zip(b.values()).all(|(a, c)| (a - c).abs() < 1e-14));
    }

    #[test]
    fn cg_matches_spectral_inverse_on_single_mode() {
        let l = Lattice::with_tau(2, 16, 8, 1.0, Some(0.1)).unwrap();
        let period = l.period_t();
        let b = ScalarField::from_fn(&l, |x, t| {
            (2.0 * std::f64::consts::PI * (2.0 * x[0] - x[1]) + 6.0 * std::f64::consts::PI * t / period).sin()
        });
        let (x, rep) = cg(&NegLap(l), &b, &SolveOptions::default()).unwrap();
        assert!(rep.converged, "{rep}");
        let mut neg = b.clone();
        neg.scale(-1.0);
        let oracle = spectral_poisson(&neg).unwrap();
        let err = x.values().iter().zip(oracle.values()).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        assert!(err <= 1e-9 * oracle.norm_max(), "{err}");
        let (y, rep) = bicgstab(&NegLap(l), &b, &SolveOptions::default(), None).unwrap();
        assert!(rep.converged);
        let err = y.values().iter().zip(oracle.values()).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        assert!(err <= 1e-9 * oracle.norm_max());
    }

    #[test]
    fn nonzero_mean_rhs_is_rejected_with_nullspace() {
        let l = Lattice::new(1, 8, 4, 1.0).unwrap();
        let b = ScalarField::constant(&l, 1.0);
        assert!(matches!(
            cg(&NegLap(l), &b, &SolveOptions::default()),
            Err(Error::Compatibility { .. })
        ));
        assert!(bicgstab(&NegLap(l), &b, &SolveOptions::default(), None).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let l = Lattice::new(2, 16, 16, 1.0).unwrap();
        let b = ScalarField::from_fn(&l, |x, t| (x[0] * 9.0).sin() * (t * 40.0).cos());
        let mut b = b;
        b.project_mean_zero();
        let opts = SolveOptions { tol: 1e-12, max_iter: Some(2) };
        let (_, rep) = cg(&NegLap(l), &b, &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
    }
}
