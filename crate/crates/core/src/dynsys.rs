//! Torus shift dynamics `T(y)w = y + w mod 1` on `[0,1)^N` and band-limited
//! stochastic fields with spectral flow derivatives.

use crate::error::{Error, Result};
use crate::spectral::{flatten, interp_freq, signed_freq, unflatten, GridFft};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Default relative Frobenius tolerance on the curl in [`stoch_potential`].
pub const CURL_TOL: f64 = 1e-8;

/// Reduce a coordinate to `[0,1)`.
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Discretized torus dynamical system: dimension `N`, `M` grid points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TorusDynamics {
    dim: usize,
    resolution: usize,
}

impl TorusDynamics {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution == 0 {
            return Err(Error::Invalid(format!("torus needs positive dim and resolution, got ({dim}, {resolution})")));
        }
        Ok(Self { dim, resolution })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn grid_len(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    /// Coordinates of grid point `idx` (`w_j = j/M`).
    pub fn grid_point(&self, idx: usize) -> Vec<f64> {
        let m = self.resolution as f64;
        unflatten(idx, self.dim, self.resolution).into_iter().map(|j| j as f64 / m).collect()
    }

    /// `T(y)w`; the seed of `w` is propagated.
    pub fn act(&self, y: &[f64], w: &OmegaSample) -> OmegaSample {
        assert_eq!(y.len(), self.dim, "shift dimension");
        assert_eq!(w.coords.len(), self.dim, "sample dimension");
        let coords = y.iter().zip(&w.coords).map(|(a, b)| wrap(a + b)).collect();
        OmegaSample { coords, seed: w.seed }
    }

    /// Image of every grid index under the grid-aligned shift `shift/M`.
    pub fn grid_shift_permutation(&self, shift: &[usize]) -> Vec<usize> {
        let m = self.resolution;
        let y: Vec<f64> = shift.iter().map(|&s| s as f64 / m as f64).collect();
        (0..self.grid_len())
            .map(|idx| {
                let w = OmegaSample { coords: self.grid_point(idx), seed: 0 };
                let img = self.act(&y, &w);
                let multi: Vec<usize> =
                    img.coords.iter().map(|c| ((c * m as f64).round() as usize) % m).collect();
                flatten(&multi, m)
            })
            .collect()
    }
}

/// A point of the torus with its RNG provenance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OmegaSample {
    coords: Vec<f64>,
    seed: u64,
}

impl OmegaSample {
    /// Wraps coordinates into `[0,1)`.
    pub fn new(coords: Vec<f64>, seed: u64) -> Self {
        Self { coords: coords.into_iter().map(wrap).collect(), seed }
    }

    /// Uniform draw from the Haar measure, determined by `seed`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { coords: (0..dim).map(|_| rng.random::<f64>()).collect(), seed }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Debug, Clone)]
struct Mode {
    freq: Vec<f64>,
    coeff: Complex64,
}

/// Real field on the discrete torus, interpolated by its trigonometric polynomial.
#[derive(Debug, Clone)]
pub struct StochasticField {
    dyn_sys: TorusDynamics,
    values: Arc<Vec<f64>>,
    mean: f64,
    modes: Arc<Vec<Mode>>,
}

impl StochasticField {
    pub fn from_values(dyn_sys: TorusDynamics, values: Vec<f64>) -> Result<Self> {
        if values.len() != dyn_sys.grid_len() {
            return Err(Error::DimensionMismatch { expected: dyn_sys.grid_len(), got: values.len() });
        }
        let fft = GridFft::new(dyn_sys.dim, dyn_sys.resolution);
        let coeffs = fft.forward_real(&values);
        Ok(Self::assemble(dyn_sys, values, &coeffs))
    }

    fn assemble(dyn_sys: TorusDynamics, values: Vec<f64>, coeffs: &[Complex64]) -> Self {
        let mean = crate::spectral::pairwise_sum(&values) / values.len() as f64;
        let cmax = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let thr = 1e-14 * cmax;
        let m = dyn_sys.resolution;
        let modes = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > thr)
            .map(|(idx, c)| Mode {
                freq: unflatten(idx, dyn_sys.dim, m).into_iter().map(|j| interp_freq(j, m) as f64).collect(),
                coeff: *c,
            })
            .collect();
        Self { dyn_sys, values: Arc::new(values), mean, modes: Arc::new(modes) }
    }

    pub fn from_fn(dyn_sys: TorusDynamics, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..dyn_sys.grid_len()).map(|i| f(&dyn_sys.grid_point(i))).collect();
        Self::from_values(dyn_sys, values).expect("grid length matches by construction")
    }

    pub fn constant(dyn_sys: TorusDynamics, c: f64) -> Self {
        Self::from_values(dyn_sys, vec![c; dyn_sys.grid_len()]).expect("grid length matches by construction")
    }

    pub fn dynamics(&self) -> TorusDynamics {
        self.dyn_sys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored grid mean, equal to the Haar integral of the interpolant.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Root-mean-square over the grid.
    pub fn rms(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        (crate::spectral::pairwise_sum(&sq) / sq.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of retained Fourier modes.
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Largest absolute signed frequency among retained modes.
    pub fn bandwidth(&self) -> usize {
        self.modes.iter().flat_map(|m| m.freq.iter()).fold(0.0f64, |a, &k| a.max(k.abs())) as usize
    }

    /// Evaluate the trigonometric interpolant at an arbitrary torus point.
    pub fn eval(&self, w: &[f64]) -> f64 {
        debug_assert_eq!(w.len(), self.dyn_sys.dim);
        let mut acc = 0.0;
        for mode in self.modes.iter() {
            let phase: f64 = 2.0 * PI * mode.freq.iter().zip(w).map(|(k, x)| k * x).sum::<f64>();
            let (s, c) = phase.sin_cos();
            acc += mode.coeff.re * c - mode.coeff.im * s;
        }
        acc
    }

    pub fn eval_sample(&self, w: &OmegaSample) -> f64 {
        self.eval(w.coords())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_values(self.dyn_sys, self.values.iter().map(|&v| f(v)).collect()).expect("same grid")
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dyn_sys != other.dyn_sys {
            return Err(Error::Invalid("fields live on different torus grids".into()));
        }
        let vals = self.values.iter().zip(other.values.iter()).map(|(&a, &b)| f(a, b)).collect();
        Self::from_values(self.dyn_sys, vals)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Raw little-endian serialization with a one-line header `(N, M, mean)`.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "({}, {}, {:e})", self.dyn_sys.dim, self.dyn_sys.resolution, self.mean)?;
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let inner = header.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("bad field header {header:?}")));
        }
        let parse_usize =
            |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("bad header entry {s:?}: {e}")));
        let dyn_sys = TorusDynamics::new(parse_usize(parts[0])?, parse_usize(parts[1])?)?;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != 8 * dyn_sys.grid_len() {
            return Err(Error::Format(format!("expected {} bytes, got {}", 8 * dyn_sys.grid_len(), buf.len())));
        }
        let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Self::from_values(dyn_sys, values)
    }
}

fn spectral_apply(field: &StochasticField, symbol: impl Fn(&[Option<i64>]) -> Complex64) -> StochasticField {
    let d = field.dyn_sys;
    let fft = GridFft::new(d.dim, d.resolution);
    let mut coeffs = fft.forward_real(&field.values);
    for (idx, c) in coeffs.iter_mut().enumerate() {
        let k: Vec<Option<i64>> =
            unflatten(idx, d.dim, d.resolution).into_iter().map(|j| signed_freq(j, d.resolution)).collect();
        *c *= symbol(&k);
    }
    let values = fft.inverse_real(coeffs.clone());
    StochasticField::assemble(d, values, &coeffs)
}

fn derivative_symbol(k: &[Option<i64>], axis: usize) -> Complex64 {
    match k[axis] {
        Some(ki) => Complex64::new(0.0, 2.0 * PI * ki as f64),
        None => Complex64::new(0.0, 0.0),
    }
}

/// Spectral derivative along the flow direction `e_axis`.
pub fn stoch_derivative(field: &StochasticField, axis: usize) -> Result<StochasticField> {
    let dim = field.dyn_sys.dim;
    if axis >= dim {
        return Err(Error::InvalidAxis { axis, dim });
    }
    Ok(spectral_apply(field, |k| derivative_symbol(k, axis)))
}

/// Stochastic gradient `(D_1 f, ..., D_N f)`.
pub fn stoch_gradient(field: &StochasticField) -> Vec<StochasticField> {
    (0..field.dyn_sys.dim).map(|i| spectral_apply(field, |k| derivative_symbol(k, i))).collect()
}

/// Stochastic divergence of a vector field.
pub fn stoch_divergence(v: &[StochasticField]) -> Result<StochasticField> {
    let first = v.first().ok_or(Error::Invalid("empty vector field".into()))?;
    let dim = first.dyn_sys.dim;
    if v.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    let mut acc = stoch_derivative(first, 0)?;
    for (i, vi) in v.iter().enumerate().skip(1) {
        acc = acc.add(&stoch_derivative(vi, i)?)?;
    }
    Ok(acc)
}

fn five_point(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Max over `ys` and axes of `|d/dy_i f(T(y)w) - (D_i f)(T(y)w)|`; the left side
/// is a fourth-order finite difference along the orbit.
pub fn realization_consistency(field: &StochasticField, w: &OmegaSample, ys: &[Vec<f64>]) -> Result<f64> {
    let d = field.dyn_sys;
    let grads = stoch_gradient(field);
    let h = 2e-4;
    let mut worst = 0.0f64;
    for y in ys {
        if y.len() != d.dim {
            return Err(Error::DimensionMismatch { expected: d.dim, got: y.len() });
        }
        let base = d.act(y, w);
        for (i, gi) in grads.iter().enumerate() {
            let along = |s: f64| {
                let mut ys = y.clone();
                ys[i] += s;
                field.eval_sample(&d.act(&ys, w))
            };
            let fd = five_point(along, h);
            worst = worst.max((fd - gi.eval_sample(&base)).abs());
        }
    }
    Ok(worst)
}

/// Projection onto invariant functions: the constant field equal to the mean.
pub fn invariant_projection(field: &StochasticField) -> StochasticField {
    StochasticField::constant(field.dyn_sys, field.mean)
}

/// Recover a mean-zero potential `u` with `D u = v` (spectral Poisson solve).
pub fn stoch_potential(v: &[StochasticField]) -> Result<StochasticField> {
    stoch_potential_tol(v, CURL_TOL)
}

pub fn stoch_potential_tol(v: &[StochasticField], tol: f64) -> Result<StochasticField> {
    let first = v.first().ok_or(Error::Invalid("empty vector field".into()))?;
    let d = first.dyn_sys;
    if v.len() != d.dim {
        return Err(Error::DimensionMismatch { expected: d.dim, got: v.len() });
    }
    if v.iter().any(|c| c.dyn_sys != d) {
        return Err(Error::Invalid("components live on different torus grids".into()));
    }
    let scale = v.iter().map(|c| c.rms()).fold(0.0, f64::max).max(1.0);
    for (i, c) in v.iter().enumerate() {
        if c.mean.abs() > 1e-12 * scale {
            return Err(Error::NotInGradientRange { component: i, mean: c.mean });
        }
    }
    let jac: Vec<Vec<StochasticField>> = v.iter().map(stoch_gradient).collect();
    let mut jac_sq = 0.0;
    let mut curl_sq = 0.0;
    for i in 0..d.dim {
        for j in 0..d.dim {
            jac_sq += jac[j][i].rms().powi(2);
            if i < j {
                let c = jac[j][i].sub(&jac[i][j])?;
                curl_sq += 2.0 * c.rms().powi(2);
            }
        }
    }
    if jac_sq > 0.0 {
        let residual = (curl_sq / jac_sq).sqrt();
        if residual > tol {
            return Err(Error::CurlNotFree { residual, tol });
        }
    }
    let fft = GridFft::new(d.dim, d.resolution);
    let vhat: Vec<Vec<Complex64>> = v.iter().map(|c| fft.forward_real(&c.values)).collect();
    let mut uhat = vec![Complex64::new(0.0, 0.0); d.grid_len()];
    for (idx, u) in uhat.iter_mut().enumerate() {
        let k: Vec<Option<i64>> =
            unflatten(idx, d.dim, d.resolution).into_iter().map(|j| signed_freq(j, d.resolution)).collect();
        let mut div = Complex64::new(0.0, 0.0);
        let mut lap = 0.0;
        for (i, vh) in vhat.iter().enumerate() {
            let s = derivative_symbol(&k, i);
            div += s * vh[idx];
            lap += s.norm_sqr();
        }
        if lap > 0.0 {
            *u = -div / lap;
        }
    }
    let values = fft.inverse_real(uhat.clone());
    Ok(StochasticField::assemble(d, values, &uhat))
}

/// Orbit average `(1/K) sum_{k<K} f(T(k d) w)`.
pub fn birkhoff_average(field: &StochasticField, direction: &[f64], k: usize, w: &OmegaSample) -> Result<f64> {
    if k == 0 {
        return Err(Error::EmptySample);
    }
    let d = field.dyn_sys;
    if direction.len() != d.dim {
        return Err(Error::DimensionMismatch { expected: d.dim, got: direction.len() });
    }
    let vals: Vec<f64> = (0..k)
        .map(|n| {
            let y: Vec<f64> = direction.iter().map(|c| wrap(c * n as f64)).collect();
            field.eval_sample(&d.act(&y, w))
        })
        .collect();
    Ok(crate::spectral::pairwise_sum(&vals) / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(m: usize) -> TorusDynamics {
        TorusDynamics::new(2, m).unwrap()
    }

    #[test]
    fn act_examples() {
        let d = torus(8);
        let w = OmegaSample::new(vec![0.3, 0.7], 1);
        assert_eq!(d.act(&[0.0, 0.0], &w).coords(), &[0.3, 0.7]);
        let w = OmegaSample::new(vec![0.5, 0.5], 1);
        assert_eq!(d.act(&[0.25, 0.0], &w).coords(), &[0.75, 0.5]);
        let w = OmegaSample::new(vec![0.2, 0.3], 9);
        let r = d.act(&[0.9, 0.9], &w);
        assert!((r.coords()[0] - 0.1).abs() < 1e-15 && (r.coords()[1] - 0.2).abs() < 1e-15);
        assert_eq!(r.seed(), 9);
    }

    #[test]
    fn wrap_stays_half_open() {
        assert_eq!(wrap(-1e-17), 0.0);
        assert_eq!(wrap(1.0), 0.0);
        assert!(wrap(-0.25) == 0.75);
    }

    #[test]
    fn derivative_examples() {
        let d = torus(32);
        let c = StochasticField::constant(d, 3.0);
        assert!(stoch_derivative(&c, 0).unwrap().max_abs() < 1e-14);
        let s = StochasticField::from_fn(d, |w| (2.0 * PI * w[0]).sin());
        let d1 = stoch_derivative(&s, 0).unwrap();
        let h = 1e-5;
        for idx in [0usize, 5, 77, 300] {
            let w = d.grid_point(idx);
            let fd = ((2.0 * PI * (w[0] + h)).sin() - (2.0 * PI * (w[0] - h)).sin()) / (2.0 * h);
            assert!((d1.values()[idx] - fd).abs() < 1e-7);
        }
        assert!(stoch_derivative(&s, 1).unwrap().max_abs() < 1e-13);
        assert!(matches!(stoch_derivative(&s, 2), Err(Error::InvalidAxis { .. })));
    }

    #[test]
    fn interpolant_matches_off_grid() {
        let d = torus(16);
        let f = |w: &[f64]| (2.0 * PI * w[0]).sin() * (4.0 * PI * w[1]).cos() + 0.5;
        let s = StochasticField::from_fn(d, f);
        for w in [[0.123, 0.456], [0.9, 0.01]] {
            assert!((s.eval(&w) - f(&w)).abs() < 1e-13);
        }
        assert_eq!(s.mode_count(), 5);
        assert_eq!(s.bandwidth(), 2);
    }

    #[test]
    fn projection_examples() {
        let d = torus(16);
        let f = StochasticField::from_fn(d, |w| 2.0 + (2.0 * PI * w[0]).cos() * (2.0 * PI * w[1]).cos());
        let p = invariant_projection(&f);
        assert!(p.values().iter().all(|v| (v - 2.0).abs() < 1e-14));
        let z = invariant_projection(&StochasticField::from_fn(d, |w| (2.0 * PI * w[0]).sin()));
        assert!(z.max_abs() < 1e-15);
    }

    #[test]
    fn potential_examples() {
        let d = torus(32);
        let zero = StochasticField::constant(d, 0.0);
        assert!(stoch_potential(&[zero.clone(), zero.clone()]).unwrap().max_abs() == 0.0);
        let v1 = StochasticField::from_fn(d, |w| 2.0 * PI * (2.0 * PI * w[0]).cos());
        let u = stoch_potential(&[v1, zero.clone()]).unwrap();
        let target = StochasticField::from_fn(d, |w| (2.0 * PI * w[0]).sin());
        assert!(u.sub(&target).unwrap().max_abs() < 1e-12);
        let g = StochasticField::from_fn(d, |w| 2.0 * PI * (2.0 * PI * (w[0] + w[1])).cos());
        let u = stoch_potential(&[g.clone(), g]).unwrap();
        let target = StochasticField::from_fn(d, |w| (2.0 * PI * (w[0] + w[1])).sin());
        assert!(u.sub(&target).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn potential_errors() {
        let d = torus(16);
        let one = StochasticField::constant(d, 1.0);
        let zero = StochasticField::constant(d, 0.0);
        assert!(matches!(stoch_potential(&[one, zero.clone()]), Err(Error::NotInGradientRange { component: 0, .. })));
        let rot = StochasticField::from_fn(d, |w| (2.0 * PI * w[1]).sin());
        assert!(matches!(stoch_potential(&[rot, zero]), Err(Error::CurlNotFree { .. })));
    }

    #[test]
    fn birkhoff_examples() {
        let d = torus(16);
        let dir = [2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0];
        let w = OmegaSample::new(vec![0.1, 0.2], 0);
        let c = StochasticField::constant(d, 4.5);
        assert!((birkhoff_average(&c, &dir, 17, &w).unwrap() - 4.5).abs() < 1e-14);
        let s = StochasticField::from_fn(d, |w| (2.0 * PI * w[0]).sin());
        assert!(birkhoff_average(&s, &dir, 10_000, &w).unwrap().abs() <= 0.02);
        let s2 = StochasticField::from_fn(d, |w| 2.0 + (2.0 * PI * w[0]).cos());
        assert!((birkhoff_average(&s2, &dir, 10_000, &w).unwrap() - 2.0).abs() <= 0.02);
        assert!(matches!(birkhoff_average(&s, &dir, 0, &w), Err(Error::EmptySample)));
    }

    #[test]
    fn raw_roundtrip() {
        let d = torus(8);
        let f = StochasticField::from_fn(d, |w| w[0] - 2.0 * w[1]);
        let mut buf = Vec::new();
        f.write_raw(&mut buf).unwrap();
        assert!(buf.starts_with(b"(2, 8, "));
        let g = StochasticField::read_raw(&buf[..]).unwrap();
        assert_eq!(f.values(), g.values());
    }

    #[test]
    fn sample_determinism() {
        let a = OmegaSample::random(3, 42);
        let b = OmegaSample::random(3, 42);
        assert_eq!(a, b);
        assert!(a.coords().iter().all(|&c| (0.0..1.0).contains(&c)));
        assert_ne!(a, OmegaSample::random(3, 43));
    }
}
