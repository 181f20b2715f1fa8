//! N-dimensional FFT helpers on uniform periodic grids (axis 0 slowest).

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Signed frequency of index `j` on an `m`-point axis; `None` marks the Nyquist index.
pub fn signed_freq(j: usize, m: usize) -> Option<i64> {
    if 2 * j < m {
        Some(j as i64)
    } else if 2 * j == m {
        None
    } else {
        Some(j as i64 - m as i64)
    }
}

/// Frequency used for interpolation: Nyquist maps to `-m/2`.
pub fn interp_freq(j: usize, m: usize) -> i64 {
    signed_freq(j, m).unwrap_or(-(m as i64) / 2)
}

/// Multi-index of flat index `idx` on an `m^dim` grid.
pub fn unflatten(mut idx: usize, dim: usize, m: usize) -> Vec<usize> {
    let mut out = vec![0; dim];
    for a in (0..dim).rev() {
        out[a] = idx % m;
        idx /= m;
    }
    out
}

pub fn flatten(multi: &[usize], m: usize) -> usize {
    multi.iter().fold(0, |acc, &j| acc * m + j)
}

/// Reusable planned transforms for an `m^dim` grid.
pub struct GridFft {
    dim: usize,
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl GridFft {
    pub fn new(dim: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { dim, m, forward: planner.plan_fft_forward(m), inverse: planner.plan_fft_inverse(m) }
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        let total = self.len();
        assert_eq!(data.len(), total);
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = m.pow((self.dim - 1 - axis) as u32);
            let block = stride * m;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[start + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[start + k * stride] = *v;
                    }
                }
            }
        }
    }

    /// Forward transform normalized so that coefficients are the interpolant's amplitudes.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    /// Inverse of `forward_real`, returning the real part.
    pub fn inverse_real(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut coeffs, &self.inverse);
        coeffs.into_iter().map(|c| c.re).collect()
    }

    pub fn forward_complex(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    pub fn inverse_complex(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
    }
}

/// Pairwise (tree) summation for reproducible reductions.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_2d() {
        let fft = GridFft::new(2, 6);
        let vals: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = fft.inverse_real(fft.forward_real(&vals));
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn single_mode_coefficient() {
        let m = 8;
        let fft = GridFft::new(2, m);
        let vals: Vec<f64> = (0..m * m)
            .map(|i| {
                let j = unflatten(i, 2, m);
                (2.0 * std::f64::consts::PI * j[1] as f64 / m as f64).cos()
            })
            .collect();
        let c = fft.forward_real(&vals);
        assert!((c[flatten(&[0, 1], m)].re - 0.5).abs() < 1e-14);
        assert!((c[flatten(&[0, m - 1], m)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn frequencies() {
        assert_eq!(signed_freq(3, 8), Some(3));
        assert_eq!(signed_freq(4, 8), None);
        assert_eq!(signed_freq(5, 8), Some(-3));
        assert_eq!(signed_freq(2, 5), Some(2));
        assert_eq!(signed_freq(3, 5), Some(-2));
        assert_eq!(flatten(&unflatten(37, 3, 5), 5), 37);
    }
}
