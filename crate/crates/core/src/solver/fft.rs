use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::lattice::Shape;

/// Multi-dimensional complex FFT over a periodic [`Shape`].
///
/// The forward transform uses `exp(-2 pi i k x / m)` along every axis; the
/// inverse is normalized so that `inverse(forward(u)) = u`.
pub struct FftNd {
    shape: Shape,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("shape", &self.shape).finish()
    }
}

impl FftNd {
    pub fn new(shape: &Shape) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.extents().iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inverse = shape.extents().iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        Self { shape: shape.clone(), forward, inverse }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.shape.len());
        let mut buf = Vec::new();
        let mut scratch = Vec::new();
        for (axis, plan) in plans.iter().enumerate() {
            let m = self.shape.extent(axis);
            if m == 1 {
                continue;
            }
            let s = self.shape.stride(axis);
            scratch.resize(plan.get_inplace_scratch_len(), Complex64::default());
            if s == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // gather each block's s interleaved lines into contiguous rows
            buf.resize(m * s, Complex64::default());
            for block in data.chunks_exact_mut(m * s) {
                for c in 0..m {
                    for j in 0..s {
                        buf[j * m + c] = block[c * s + j];
                    }
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for c in 0..m {
                    for j in 0..s {
                        block[c * s + j] = buf[j * m + c];
                    }
                }
            }
        }
    }
}

/// Fills `out[idx] = sum_a per_axis[a][k_a(idx)]` over the whole shape.
pub(crate) fn separable_sum(shape: &Shape, per_axis: &[Vec<Complex64>]) -> Vec<Complex64> {
    let rank = shape.rank();
    let mut out = Vec::with_capacity(shape.len());
    let mut k = vec![0usize; rank];
    for _ in 0..shape.len() {
        let mut v = Complex64::default();
        for a in 0..rank {
            v += per_axis[a][k[a]];
        }
        out.push(v);
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dft() {
        let shape = Shape::new(&[3, 4, 2]);
        let data: Vec<Complex64> = (0..24)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let mut fast = data.clone();
        FftNd::new(&shape).forward(&mut fast);
        for k0 in 0..3 {
            for k1 in 0..4 {
                for k2 in 0..2 {
                    let mut acc = Complex64::default();
                    for x0 in 0..3 {
                        for x1 in 0..4 {
                            for x2 in 0..2 {
                                let ph = -2.0
                                    * std::f64::consts::PI
                                    * ((k0 * x0) as f64 / 3.0 + (k1 * x1) as f64 / 4.0 + (k2 * x2) as f64 / 2.0);
                                acc += data[x0 + 3 * x1 + 12 * x2] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    assert!((acc - fast[k0 + 3 * k1 + 12 * k2]).norm() < 1e-12);
                }
            }
        }
        let plan = FftNd::new(&shape);
        plan.inverse(&mut fast);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
