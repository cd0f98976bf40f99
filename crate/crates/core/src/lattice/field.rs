use super::stencil::{backward_diff_acc, central_second_acc, forward_diff_into, roll_into};
use super::Lattice;
use crate::error::{Error, Result};

/// One real value per lattice site.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    lattice: Lattice,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(lattice: &Lattice) -> Self {
        Self::constant(lattice, 0.0)
    }

    pub fn constant(lattice: &Lattice, c: f64) -> Self {
        Self { lattice: *lattice, values: vec![c; lattice.sites()] }
    }

    pub fn from_values(lattice: &Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.sites() {
            return Err(Error::LatticeMismatch(format!(
                "{} values for {} sites",
                values.len(),
                lattice.sites()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite value at site {i}")));
        }
        Ok(Self { lattice: *lattice, values })
    }

    /// Skips the finiteness scan; for values produced by our own kernels.
    pub(crate) fn from_raw(lattice: &Lattice, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), lattice.sites());
        Self { lattice: *lattice, values }
    }

    /// Samples `f(x, t)` at every site's physical position.
    pub fn from_fn(lattice: &Lattice, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let d = lattice.d();
        let values = (0..lattice.sites())
            .map(|i| {
                let (x, t) = lattice.position(i);
                f(&x[..d], t)
            })
            .collect();
        Self { lattice: *lattice, values }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Root mean square, i.e. `(mean |u|^2)^{1/2}`.
    pub fn norm_rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn norm_max(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain site sum of `u * v`.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// Subtracts the mean in place.
    pub fn project_mean_zero(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }

    pub fn add_scaled(&mut self, a: f64, other: &ScalarField) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.lattice, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Forward difference along `axis` (time is axis `d`).
    pub fn diff_f(&self, axis: usize) -> Self {
        let mut out = vec![0.0; self.values.len()];
        let inv = 1.0 / self.lattice.spacing(axis);
        forward_diff_into(&self.values, &mut out, &self.lattice.shape(), axis, inv);
        Self::from_raw(&self.lattice, out)
    }

    /// Backward difference along `axis` (time is axis `d`).
    pub fn diff_b(&self, axis: usize) -> Self {
        let mut out = vec![0.0; self.values.len()];
        let inv = 1.0 / self.lattice.spacing(axis);
        backward_diff_acc(&self.values, &mut out, &self.lattice.shape(), axis, inv);
        Self::from_raw(&self.lattice, out)
    }

    /// Forward spatial gradient.
    pub fn grad_f(&self) -> VectorField {
        VectorField {
            lattice: self.lattice,
            comps: (0..self.lattice.d()).map(|i| self.diff_f(i)).collect(),
        }
    }

    /// Backward time difference `(u(t) - u(t - tau)) / tau`, periodic in time.
    pub fn dt_b(&self) -> Self {
        self.diff_b(self.lattice.d())
    }

    /// Space-time Laplacian with physical spacings `h` (space) and `tau` (time).
    pub fn lap_st(&self) -> Self {
        let shape = self.lattice.shape();
        let mut out = vec![0.0; self.values.len()];
        for axis in 0..=self.lattice.d() {
            let s = self.lattice.spacing(axis);
            central_second_acc(&self.values, &mut out, &shape, axis, 1.0 / (s * s));
        }
        Self::from_raw(&self.lattice, out)
    }

    /// Spatial Laplacian (no time part).
    pub fn lap_x(&self) -> Self {
        let shape = self.lattice.shape();
        let mut out = vec![0.0; self.values.len()];
        let s = self.lattice.h();
        for axis in 0..self.lattice.d() {
            central_second_acc(&self.values, &mut out, &shape, axis, 1.0 / (s * s));
        }
        Self::from_raw(&self.lattice, out)
    }

    /// Average over the discrete parabolic cube `Q_r(center)`.
    pub fn box_average(&self, center: usize, r: f64) -> Result<f64> {
        Ok(self.lattice.parabolic_box(center, r)?.mean(&self.values))
    }

    /// Periodic shift: the result at `z` is the input at `z + offsets`.
    pub fn shifted(&self, offsets: &[isize]) -> Self {
        let mut out = vec![0.0; self.values.len()];
        roll_into(&self.values, &mut out, &self.lattice.shape(), offsets);
        Self::from_raw(&self.lattice, out)
    }
}

macro_rules! component_field {
    ($name:ident, $count:expr, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            lattice: Lattice,
            comps: Vec<ScalarField>,
        }

        impl $name {
            pub fn zeros(lattice: &Lattice) -> Self {
                let count: fn(&Lattice) -> usize = $count;
                Self {
                    lattice: *lattice,
                    comps: (0..count(lattice)).map(|_| ScalarField::zeros(lattice)).collect(),
                }
            }

            pub fn from_components(lattice: &Lattice, comps: Vec<ScalarField>) -> Result<Self> {
                let count: fn(&Lattice) -> usize = $count;
                if comps.len() != count(lattice) {
                    return Err(Error::LatticeMismatch(format!(
                        "{} components, expected {}",
                        comps.len(),
                        count(lattice)
                    )));
                }
                for c in &comps {
                    lattice.check_same(c.lattice())?;
                }
                Ok(Self { lattice: *lattice, comps })
            }

            pub fn lattice(&self) -> &Lattice {
                &self.lattice
            }

            pub fn component(&self, i: usize) -> &ScalarField {
                &self.comps[i]
            }

            pub fn component_mut(&mut self, i: usize) -> &mut ScalarField {
                &mut self.comps[i]
            }

            pub fn components(&self) -> &[ScalarField] {
                &self.comps
            }

            pub fn into_components(self) -> Vec<ScalarField> {
                self.comps
            }

            /// `(mean over sites of |v|^2)^{1/2}`.
            pub fn norm_rms(&self) -> f64 {
                self.comps.iter().map(|c| c.norm_rms().powi(2)).sum::<f64>().sqrt()
            }

            /// Plain site sum of `v . w`.
            pub fn dot(&self, other: &Self) -> f64 {
                self.comps.iter().zip(&other.comps).map(|(a, b)| a.dot(b)).sum()
            }
        }
    };
}

component_field!(VectorField, |l| l.d(), "`d` spatial components per site.");
component_field!(
    StField,
    |l| l.d() + 1,
    "`d + 1` components per site; the last slot is the time direction."
);

impl VectorField {
    /// Backward spatial divergence, the negative adjoint of [`ScalarField::grad_f`].
    pub fn div_b(&self) -> ScalarField {
        let shape = self.lattice.shape();
        let inv = 1.0 / self.lattice.h();
        let mut out = vec![0.0; self.lattice.sites()];
        for (i, c) in self.comps.iter().enumerate() {
            backward_diff_acc(c.values(), &mut out, &shape, i, inv);
        }
        ScalarField::from_raw(&self.lattice, out)
    }
}

impl StField {
    /// Backward space-time divergence `sum_i D_i^b q_i + D_t^b q_{d+1}`.
    pub fn div_b(&self) -> ScalarField {
        let shape = self.lattice.shape();
        let mut out = vec![0.0; self.lattice.sites()];
        for (a, c) in self.comps.iter().enumerate() {
            let inv = 1.0 / self.lattice.spacing(a);
            backward_diff_acc(c.values(), &mut out, &shape, a, inv);
        }
        ScalarField::from_raw(&self.lattice, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pseudo_random(lat: &Lattice, seed: u64) -> ScalarField {
        let mut s = seed;
        let vals = (0..lat.sites())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        ScalarField::from_raw(lat, vals)
    }

    #[test]
    fn constants_are_annihilated() {
        let l = Lattice::new(2, 6, 5, 1.0).unwrap();
        let c = ScalarField::constant(&l, 3.5);
        assert_eq!(c.grad_f().norm_rms(), 0.0);
        assert_eq!(c.dt_b().norm_max(), 0.0);
        assert_eq!(c.lap_st().norm_max(), 0.0);
        let v = VectorField::from_components(&l, vec![c.clone(), c.clone()]).unwrap();
        assert_eq!(v.div_b().norm_max(), 0.0);
        assert_eq!(c.mean(), 3.5);
    }

    #[test]
    fn forward_gradient_of_sine_is_second_order_at_midpoints() {
        let n = 64;
        let l = Lattice::new(1, n, 2, 1.0).unwrap();
        let u = ScalarField::from_fn(&l, |x, _| (2.0 * PI * x[0]).sin());
        let g = u.grad_f();
        let h = l.h();
        // |(sin(a+h)-sin a)/h - k cos(a + h/2)| = k |cos(a+h/2)| (1 - sinc(kh/2)) <= k (kh)^2/24
        let k = 2.0 * PI;
        let bound = k * (k * h).powi(2) / 24.0;
        let mut worst = 0.0f64;
        for i in 0..l.sites() {
            let (x, _) = l.position(i);
            let exact = k * (k * (x[0] + h / 2.0)).cos();
            worst = worst.max((g.component(0).values()[i] - exact).abs());
        }
        assert!(worst <= bound * (1.0 + 1e-9), "{worst} > {bound}");
        assert!(worst >= 0.5 * bound);
    }

    #[test]
    fn divergence_symbol_matches_discrete_fourier_oracle() {
        // v = cos(2 pi k x / L) e_1; D^b v = Re[(1 - e^{-i theta}) / h * e^{i theta x/h}]
        let (n, k) = (16usize, 3.0);
        let l = Lattice::new(2, n, 2, 2.0).unwrap();
        let theta = 2.0 * PI * k / n as f64;
        let v0 = ScalarField::from_fn(&l, |x, _| (2.0 * PI * k * x[0] / l.length()).cos());
        let v = VectorField::from_components(&l, vec![v0, ScalarField::zeros(&l)]).unwrap();
        let div = v.div_b();
        for i in 0..l.sites() {
            let c = l.coords(i);
            let phase = theta * c[0] as f64;
            // (1 - e^{-i th}) e^{i ph} real part
            let expect = ((phase).cos() - (phase - theta).cos()) / l.h();
            assert!((div.values()[i] - expect).abs() < 1e-12);
        }
        // magnitude of the symbol is (2/h) sin(theta/2); rms of a sampled sinusoid is amp/sqrt 2
        let amp = div.norm_rms() * 2f64.sqrt();
        assert!((amp - 2.0 / l.h() * (theta / 2.0).sin()).abs() < 1e-9);
    }

    #[test]
    fn time_difference_telescopes_and_is_first_order() {
        let l = Lattice::new(1, 2, 100, 1.0).unwrap();
        let period = l.period_t();
        let u = ScalarField::from_fn(&l, |_, t| (2.0 * PI * t / period).sin());
        let du = u.dt_b();
        assert!(du.values().iter().sum::<f64>().abs() < 1e-9);
        let w = 2.0 * PI / period;
        let mut worst = 0.0f64;
        for i in 0..l.sites() {
            let (_, t) = l.position(i);
            worst = worst.max((du.values()[i] - w * (w * t).cos()).abs());
        }
        // Taylor remainder: |D^b u - u'| <= tau/2 max|u''|
        assert!(worst <= 0.5 * l.tau() * w * w * 1.0001);
    }

    #[test]
    fn lap_st_plane_wave_eigenvalue() {
        let l = Lattice::with_tau(2, 8, 12, 1.0, Some(0.05)).unwrap();
        let (k1, k2, m) = (1.0, 3.0, 2.0);
        let period = l.period_t();
        let u = ScalarField::from_fn(&l, |x, t| {
            (2.0 * PI * (k1 * x[0] + k2 * x[1]) / l.length() + 2.0 * PI * m * t / period).cos()
        });
        let lam = -4.0 / l.h().powi(2)
            * ((PI * k1 * l.h() / l.length()).sin().powi(2)
                + (PI * k2 * l.h() / l.length()).sin().powi(2))
            - 4.0 / l.tau().powi(2) * (PI * m * l.tau() / period).sin().powi(2);
        let lu = u.lap_st();
        for (a, b) in lu.values().iter().zip(u.values()) {
            assert!((a - lam * b).abs() < 1e-8 * lam.abs());
        }
        assert!(lu.mean().abs() < 1e-10);
    }

    #[test]
    fn box_average_of_delta() {
        let l = Lattice::new(2, 8, 8, 8.0).unwrap();
        let mut u = ScalarField::zeros(&l);
        let site = l.index(&[3, 4], 5);
        u.values_mut()[site] = 2.7;
        let got = u.box_average(site, l.h()).unwrap();
        // enumeration oracle: 3 x 3 spatial x 3 temporal sites
        let mut count = 0;
        for i in 0..l.sites() {
            let c = l.coords(i);
            let close = |a: usize, b: usize, m: usize| {
                let d = (a as isize - b as isize).rem_euclid(m as isize) as usize;
                d <= 1 || d == m - 1
            };
            if close(c[0], 3, 8) && close(c[1], 4, 8) && close(c[2], 5, 8) {
                count += 1;
            }
        }
        assert_eq!(count, 27);
        assert!((got - 2.7 / count as f64).abs() < 1e-15);
        let c = ScalarField::constant(&l, 1.25);
        assert_eq!(c.box_average(0, 2.0).unwrap(), 1.25);
        let r = pseudo_random(&l, 5);
        assert!((r.box_average(0, 100.0).unwrap() - r.mean()).abs() < 1e-15);
    }

    #[test]
    fn lap_st_is_divergence_of_forward_gradient() {
        let l = Lattice::with_tau(3, 5, 6, 1.0, Some(0.07)).unwrap();
        let u = pseudo_random(&l, 9);
        let mut q = StField::zeros(&l);
        for a in 0..=3 {
            *q.component_mut(a) = u.diff_f(a);
        }
        let lhs = q.div_b();
        let rhs = u.lap_st();
        let scale = rhs.norm_max();
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn summation_by_parts(seed in any::<u64>(), d in 1usize..=3, n in 2usize..6) {
                let l = Lattice::new(d, n, 3, 1.3).unwrap();
                let u = pseudo_random(&l, seed);
                let comps = (0..d).map(|i| pseudo_random(&l, seed ^ (i as u64 + 77))).collect();
                let v = VectorField::from_components(&l, comps).unwrap();
                let a = v.div_b().dot(&u);
                let b = v.dot(&u.grad_f());
                let scale = v.div_b().norm_rms() * u.norm_rms() * l.sites() as f64 + 1e-300;
                prop_assert!((a + b).abs() <= 1e-12 * scale);
            }

            #[test]
            fn differences_commute_with_shifts(seed in any::<u64>(), s0 in -5isize..5, s1 in -5isize..5, st in -5isize..5) {
                let l = Lattice::new(2, 5, 4, 1.0).unwrap();
                let u = pseudo_random(&l, seed);
                let shift = [s0, s1, st];
                prop_assert_eq!(u.lap_st().shifted(&shift), u.shifted(&shift).lap_st());
                prop_assert_eq!(u.dt_b().shifted(&shift), u.shifted(&shift).dt_b());
                prop_assert_eq!(u.grad_f().component(1).shifted(&shift), u.shifted(&shift).grad_f().component(1).clone());
            }
        }
    }
}
