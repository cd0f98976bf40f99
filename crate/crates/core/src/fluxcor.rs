//! Extended flux correctors `sigma`, built by space-time Poisson inversion.
//!
//! With `psi_{i'j} = lap_st^{-1} q_{i'j}` and `b_{k'i'j} = D_{k'}^f psi_{i'j}`
//! we set `sigma_{k'i'j} = b_{k'i'j} - b_{i'k'j}`. Indices `k', i'` run over
//! all `d + 1` axes with time last.

use rayon::prelude::*;
use serde::Serialize;

use crate::corrector::{CorrectorSet, FluxField};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, ScalarField};
use crate::solver::{check_compatible, SpectralPoisson};

#[derive(Debug, Clone)]
pub struct FluxCorrector {
    d: usize,
    /// `fields[(j * (d+1) + k) * (d+1) + i]` is `sigma_{k i j}`.
    fields: Vec<ScalarField>,
}

impl FluxCorrector {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lattice(&self) -> &Lattice {
        self.fields[0].lattice()
    }

    fn slot(&self, k: usize, i: usize, j: usize) -> usize {
        let e = self.d + 1;
        (j * e + k) * e + i
    }

    /// `sigma_{k i j}` with `k, i` in `0..=d` (time is `d`) and `j` in `0..d`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> &ScalarField {
        &self.fields[self.slot(k, i, j)]
    }

    pub fn get_mut(&mut self, k: usize, i: usize, j: usize) -> &mut ScalarField {
        let s = self.slot(k, i, j);
        &mut self.fields[s]
    }

    /// Largest `|sigma_{kij} + sigma_{ikj}|` over all entries.
    pub fn skew_defect(&self) -> f64 {
        let e = self.d + 1;
        let mut worst = 0.0f64;
        for j in 0..self.d {
            for k in 0..e {
                for i in 0..=k {
                    let a = self.get(k, i, j).values();
                    let b = self.get(i, k, j).values();
                    for (x, y) in a.iter().zip(b) {
                        worst = worst.max((x + y).abs());
                    }
                }
            }
        }
        worst
    }

    /// The time row `sigma_{(d+1) i j}`, `i` over the spatial axes.
    pub fn time_row(&self, j: usize) -> Vec<&ScalarField> {
        (0..self.d).map(|i| self.get(self.d, i, j)).collect()
    }
}

/// Builds `sigma` from the flux of a converged corrector solve.
pub fn solve_sigma(q: &FluxField) -> Result<FluxCorrector> {
    let l = *q.lattice();
    let d = l.d();
    let e = d + 1;
    let poisson = SpectralPoisson::new(&l);
    for qj in &q.q {
        for c in qj.components() {
            check_compatible(c.values())?;
        }
    }
    // b[j][i'][k'] = D_{k'}^f psi_{i'j}
    let b: Vec<Vec<Vec<ScalarField>>> = q
        .q
        .par_iter()
        .map(|qj| {
            qj.components()
                .iter()
                .map(|c| {
                    let mut rhs = c.clone();
                    rhs.project_mean_zero();
                    let psi = poisson.solve(&rhs)?;
                    Ok((0..e).map(|k| psi.diff_f(k)).collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut fields = Vec::with_capacity(d * e * e);
    for bj in &b {
        for k in 0..e {
            for i in 0..e {
                let v = bj[i][k].values().iter().zip(bj[k][i].values()).map(|(x, y)| x - y).collect();
                fields.push(ScalarField::from_raw(&l, v));
            }
        }
    }
    Ok(FluxCorrector { d, fields })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    /// `lap_st sigma_{k'ij} = D_{k'}^f q_{ij} - D_i^f q_{k'j}`, relative to `||D q||`.
    pub laplacian: f64,
    /// `sum_{k'} D_{k'}^b sigma_{k'ij} = q_{ij}`, relative to `||q||`.
    pub divergence: f64,
    /// `sum_i D_i^b sigma_{(d+1)ij} = mean(phi_j) - phi_j`, relative to `||phi||`.
    pub time_row: f64,
    /// Largest `|sigma_{k'ij} + sigma_{ik'j}|`.
    pub skew: f64,
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

fn sq_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn sq(a: &ScalarField) -> f64 {
    a.values().iter().map(|x| x * x).sum()
}

/// Residuals of the three defining identities of `sigma`.
pub fn verify_identities(sigma: &FluxCorrector, q: &FluxField, set: &CorrectorSet) -> IdentityReport {
    let d = sigma.d;
    let e = d + 1;
    let (mut lap_num, mut lap_den) = (0.0, 0.0);
    let (mut div_num, mut div_den) = (0.0, 0.0);
    let (mut row_num, mut row_den) = (0.0, 0.0);
    for j in 0..d {
        let qj = &q.q[j];
        let dq: Vec<Vec<ScalarField>> =
            (0..e).map(|i| (0..e).map(|k| qj.component(i).diff_f(k)).collect()).collect();
        for k in 0..e {
            for i in 0..e {
                let mut target = dq[i][k].clone();
                target.add_scaled(-1.0, &dq[k][i]);
                lap_num += sq_diff(&sigma.get(k, i, j).lap_st(), &target);
                lap_den += sq(&target);
            }
        }
        for i in 0..e {
            let mut div = ScalarField::zeros(sigma.lattice());
            for k in 0..e {
                div.add_scaled(1.0, &sigma.get(k, i, j).diff_b(k));
            }
            div_num += sq_diff(&div, qj.component(i));
            div_den += sq(qj.component(i));
        }
        let mut row = ScalarField::zeros(sigma.lattice());
        for i in 0..d {
            row.add_scaled(1.0, &sigma.get(d, i, j).diff_b(i));
        }
        let phi = &set.phi[j];
        let target = phi.map(|v| phi.mean() - v);
        row_num += sq_diff(&row, &target);
        row_den += sq(phi);
    }
    IdentityReport {
        laplacian: rel(lap_num, lap_den),
        divergence: rel(div_num, div_den),
        time_row: rel(row_num, row_den),
        skew: sigma.skew_defect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRow {
    pub r: f64,
    /// Mean of the squared increments over offsets and components.
    pub mean_square: f64,
    pub count: usize,
}

impl GrowthRow {
    pub fn rms(&self) -> f64 {
        self.mean_square.sqrt()
    }
}

/// Offsets `+-r e_i` in space and, when `r^2` fits in half the period,
/// `+-r^2` in time, as lattice steps.
pub fn growth_offsets(l: &Lattice, r: f64) -> Result<Vec<Vec<isize>>> {
    if !(r > 0.0) || r > 0.5 * l.length() + 1e-12 {
        return Err(Error::Config(format!(
            "radius {r} outside (0, {}] (half the torus)",
            0.5 * l.length()
        )));
    }
    let d = l.d();
    let steps = (r / l.h()).round() as isize;
    let mut out = Vec::new();
    for i in 0..d {
        for s in [steps, -steps] {
            let mut o = vec![0isize; d + 1];
            o[i] = s;
            out.push(o);
        }
    }
    if r * r <= 0.5 * l.period_t() + 1e-12 {
        let st = (r * r / l.tau()).round() as isize;
        if st > 0 {
            for s in [st, -st] {
                let mut o = vec![0isize; d + 1];
                o[d] = s;
                out.push(o);
            }
        }
    }
    Ok(out)
}

/// Increments of `Q_unit`-box averages of the time-row fields between
/// `center + z` and `center` for `|z| = r`.
pub fn growth_profile(
    row: &[&ScalarField],
    radii: &[f64],
    center: usize,
    unit: f64,
) -> Result<Vec<GrowthRow>> {
    let l = *row.first().ok_or_else(|| Error::Config("empty sigma row".into()))?.lattice();
    l.parabolic_box(center, unit)?;
    radii
        .iter()
        .map(|&r| {
            let offsets = growth_offsets(&l, r)?;
            let mut total = 0.0;
            let mut count = 0;
            for f in row {
                let base = f.box_average(center, unit)?;
                for o in &offsets {
                    let z = l.offset_index(center, o);
                    total += (f.box_average(z, unit)? - base).powi(2);
                    count += 1;
                }
            }
            Ok(GrowthRow { r, mean_square: total / count as f64, count })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::{effective, flux, solve_cell, CorrectorOptions};
    use crate::ensemble::{sample, CoefficientField, EnsembleKind, EnsembleSpec};

    fn solved(a: &CoefficientField) -> (CorrectorSet, FluxField, FluxCorrector) {
        let set = solve_cell(a, 0.0, &CorrectorOptions::default()).unwrap();
        let ab = effective(a, &set).unwrap();
        let q = flux(a, &set, &ab).unwrap();
        let s = solve_sigma(&q).unwrap();
        (set, q, s)
    }

    #[test]
    fn zero_flux_gives_zero_sigma() {
        let l = Lattice::new(2, 8, 8, 1.0).unwrap();
        let (set, q, s) = solved(&CoefficientField::constant(&l, 2.0));
        for j in 0..2 {
            for k in 0..3 {
                for i in 0..3 {
                    assert_eq!(s.get(k, i, j).norm_max(), 0.0);
                }
            }
        }
        let rep = verify_identities(&s, &q, &set);
        assert_eq!((rep.laplacian, rep.divergence, rep.time_row, rep.skew), (0.0, 0.0, 0.0, 0.0));
        let g = growth_profile(&s.time_row(0), &[0.25], 0, 0.125).unwrap();
        assert_eq!(g[0].mean_square, 0.0);
    }

    #[test]
    fn checkerboard_identities_hold() {
        let l = Lattice::new(2, 32, 32, 1.0).unwrap();
        let spec = EnsembleSpec::two_phase(EnsembleKind::Checkerboard, 0.5, 2.0, None);
        let a = sample(&spec, &l, 21).unwrap();
        let (set, q, mut s) = solved(&a);
        assert_eq!(s.skew_defect(), 0.0);
        let rep = verify_identities(&s, &q, &set);
        assert!(rep.divergence <= 1e-8, "{rep:?}");
        assert!(rep.time_row <= 1e-8, "{rep:?}");
        assert!(rep.laplacian <= 1e-8, "{rep:?}");
        for j in 0..2 {
            for k in 0..3 {
                for i in 0..3 {
                    assert!(s.get(k, i, j).mean().abs() < 1e-12);
                }
            }
        }
        s.get_mut(0, 1, 0).values_mut()[17] += 1.0;
        assert!(verify_identities(&s, &q, &set).divergence > 1e-3);
    }

    #[test]
    fn growth_radius_is_validated() {
        let l = Lattice::new(2, 16, 16, 1.0).unwrap();
        assert!(growth_offsets(&l, 0.6).is_err());
        assert!(growth_offsets(&l, 0.0).is_err());
        let o = growth_offsets(&l, 0.25).unwrap();
        // r^2 exceeds half the period here, so only spatial offsets
        assert_eq!(o.len(), 4);
        let o = growth_offsets(&l, 0.125).unwrap();
        assert_eq!(o.len(), 6);
        assert_eq!(o[4], vec![0, 0, 4]);
    }

    #[test]
    fn nonzero_mean_flux_is_rejected() {
        let l = Lattice::new(1, 8, 4, 1.0).unwrap();
        let c = ScalarField::constant(&l, 1.0);
        let q = FluxField {
            q: vec![crate::lattice::StField::from_components(&l, vec![c.clone(), c]).unwrap()],
        };
        assert!(matches!(solve_sigma(&q), Err(Error::Compatibility { .. })));
    }
}
