//! Cell problems for the correctors: a periodic MAC grid on the unit cell `Y`
//! and a spectral grid on the torus `Omega`. Both minimize
//! `<(E + e(w)) : a : (E + e(w))>` over mean-zero divergence-free `w`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{pcg, SolveStats, Tolerance};
use crate::spectral::{signed_freq, GridFft};
use crate::tensor::{Sym2, Voigt};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// A solved unit-strain problem: the corrector and the averaged stress `<W (E + s(w))>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub field: Vec<f64>,
    pub stress: Sym2,
    pub stats: SolveStats,
}

fn cell_tolerance() -> Tolerance {
    Tolerance { rel: 1e-13, abs: 1e-15, max_iter: 10_000 }
}

fn check_elliptic(w: &[Voigt]) -> Result<f64> {
    let mut lo = f64::INFINITY;
    for v in w {
        lo = lo.min(v.bounds().0);
    }
    if !(lo > 0.0) {
        return Err(Error::NotElliptic(format!("cell tensor has eigenvalue {lo:e}")));
    }
    Ok(w.iter().map(|v| 0.25 * v.0[5]).sum::<f64>() / w.len() as f64)
}

/// Periodic staggered grid with `k x k` cells on `Y = [0,1)^2`.
/// `u[j*k+i]` sits at `(i h, (j+1/2) h)` and `v[j*k+i]` at `((i+1/2) h, j h)`.
#[derive(Debug, Clone)]
pub struct PeriodicCell {
    k: usize,
    h: f64,
    w: Vec<Voigt>,
    mu: f64,
    fft: GridFftHandle,
}

#[derive(Clone)]
struct GridFftHandle(std::sync::Arc<GridFft>);

impl std::fmt::Debug for GridFftHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("GridFft")
    }
}

impl PeriodicCell {
    pub fn new(k: usize, w: Vec<Voigt>) -> Result<Self> {
        if k < 2 || w.len() != k * k {
            return Err(Error::DimensionMismatch { expected: k * k, got: w.len() });
        }
        let mu = check_elliptic(&w)?;
        Ok(Self { k, h: 1.0 / k as f64, w, mu, fft: GridFftHandle(std::sync::Arc::new(GridFft::new(2, k))) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        2 * self.k * self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn iu(&self, i: usize, j: usize) -> usize {
        (j % self.k) * self.k + i % self.k
    }

    fn iv(&self, i: usize, j: usize) -> usize {
        self.k * self.k + (j % self.k) * self.k + i % self.k
    }

    fn shear(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let k = self.k;
        let dudy = x[self.iu(i, j)] - x[self.iu(i, j + k - 1)];
        let dvdx = x[self.iv(i, j)] - x[self.iv(i + k - 1, j)];
        0.5 * (dudy + dvdx) / self.h
    }

    fn corners(&self, x: &[f64], i: usize, j: usize) -> [Sym2; 4] {
        let e11 = (x[self.iu(i + 1, j)] - x[self.iu(i, j)]) / self.h;
        let e22 = (x[self.iv(i, j + 1)] - x[self.iv(i, j)]) / self.h;
        [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)].map(|(a, b)| [e11, e22, self.shear(x, a, b)])
    }

    /// Corner strains of every cell including the macro strain `e`.
    fn total_strains(&self, x: Option<&[f64]>, e: &Sym2) -> Vec<[Sym2; 4]> {
        let k = self.k;
        let mut out = Vec::with_capacity(k * k);
        for j in 0..k {
            for i in 0..k {
                let mut c = x.map_or([[0.0; 3]; 4], |x| self.corners(x, i, j));
                for s in c.iter_mut() {
                    for a in 0..3 {
                        s[a] += e[a];
                    }
                }
                out.push(c);
            }
        }
        out
    }

    /// `out = e^*(W (E + s(x)))`, the gradient of half the energy.
    pub fn stress_adjoint(&self, x: Option<&[f64]>, e: &Sym2, out: &mut [f64]) {
        let k = self.k;
        let h = self.h;
        let q = 0.25 * h * h;
        out.iter_mut().for_each(|v| *v = 0.0);
        let strains = self.total_strains(x, e);
        for j in 0..k {
            for i in 0..k {
                let c = j * k + i;
                for (n, s) in strains[c].iter().enumerate() {
                    let ws = self.w[c].apply(s);
                    let (s11, s22, t) = (q * ws[0] / h, q * ws[1] / h, 0.5 * q * ws[2] / h);
                    out[self.iu(i + 1, j)] += s11;
                    out[self.iu(i, j)] -= s11;
                    out[self.iv(i, j + 1)] += s22;
                    out[self.iv(i, j)] -= s22;
                    let (ni, nj) = (i + n % 2, j + n / 2);
                    out[self.iu(ni, nj)] += t;
                    out[self.iu(ni, nj + k - 1)] -= t;
                    out[self.iv(ni, nj)] += t;
                    out[self.iv(ni + k - 1, nj)] -= t;
                }
            }
        }
    }

    pub fn energy(&self, x: &[f64], e: &Sym2) -> f64 {
        let q = 0.25 * self.h * self.h;
        self.total_strains(Some(x), e).iter().zip(&self.w).map(|(c, w)| c.iter().map(|s| q * w.energy(s, s)).sum::<f64>()).sum()
    }

    /// `<W (E + s(x))>` as `(sigma11, sigma22, 2 sigma12)`.
    pub fn mean_stress(&self, x: Option<&[f64]>, e: &Sym2) -> Sym2 {
        let mut acc = [0.0; 3];
        let n = (4 * self.k * self.k) as f64;
        for (c, w) in self.total_strains(x, e).iter().zip(&self.w) {
            for s in c {
                let ws = w.apply(s);
                for a in 0..3 {
                    acc[a] += ws[a] / n;
                }
            }
        }
        acc
    }

    /// Largest pointwise divergence.
    pub fn max_div(&self, x: &[f64]) -> f64 {
        let k = self.k;
        let mut m = 0.0f64;
        for j in 0..k {
            for i in 0..k {
                let d = (x[self.iu(i + 1, j)] - x[self.iu(i, j)] + x[self.iv(i, j + 1)] - x[self.iv(i, j)]) / self.h;
                m = m.max(d.abs());
            }
        }
        m
    }

    fn spectral(&self, x: &[f64], filter: impl Fn(Complex64, Complex64, Complex64, Complex64, f64) -> (Complex64, Complex64)) -> Vec<f64> {
        let k = self.k;
        let n = k * k;
        let fu = self.fft.0.forward_real(&x[..n]);
        let fv = self.fft.0.forward_real(&x[n..]);
        let mut ou = vec![Complex64::new(0.0, 0.0); n];
        let mut ov = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..k {
            for i in 0..k {
                let idx = j * k + i;
                let tx = TWO_PI * i as f64 / k as f64;
                let ty = TWO_PI * j as f64 / k as f64;
                let dx = (Complex64::new(tx.cos(), tx.sin()) - 1.0) / self.h;
                let dy = (Complex64::new(ty.cos(), ty.sin()) - 1.0) / self.h;
                let lap = dx.norm_sqr() + dy.norm_sqr();
                let (a, b) = filter(fu[idx], fv[idx], dx, dy, lap);
                ou[idx] = a;
                ov[idx] = b;
            }
        }
        let mut out = self.fft.0.inverse_real(ou);
        out.extend(self.fft.0.inverse_real(ov));
        out
    }

    /// Orthogonal projection onto mean-zero discretely divergence-free fields.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.spectral(x, |u, v, dx, dy, lap| {
            if lap == 0.0 {
                return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            }
            let div = dx * u + dy * v;
            (u - dx.conj() * div / lap, v - dy.conj() * div / lap)
        })
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mu = self.mu;
        self.spectral(r, |u, v, dx, dy, lap| {
            if lap == 0.0 {
                return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            }
            let (u, v) = (u / (mu * lap), v / (mu * lap));
            let div = dx * u + dy * v;
            (u - dx.conj() * div / lap, v - dy.conj() * div / lap)
        })
    }

    /// Minimizer for macro strain `e`.
    pub fn solve(&self, e: &Sym2) -> Result<CellSolution> {
        let n = self.len();
        let mut b = vec![0.0; n];
        self.stress_adjoint(None, e, &mut b);
        b.iter_mut().for_each(|v| *v = -*v);
        let b = self.project(&b);
        let mut x = vec![0.0; n];
        let mut op = |x: &[f64], y: &mut [f64]| {
            self.stress_adjoint(Some(x), &[0.0; 3], y);
            y.copy_from_slice(&self.project(y));
        };
        let mut pre = |r: &[f64], z: &mut [f64]| z.copy_from_slice(&self.precondition(r));
        let stats = pcg("periodic cell", &mut op, &mut pre, &b, &mut x, cell_tolerance())?;
        let x = self.project(&x);
        let div = self.max_div(&x);
        if div > 1e-10 {
            return Err(Error::Divergence(div));
        }
        Ok(CellSolution { stress: self.mean_stress(Some(&x), e), field: x, stats })
    }
}

/// Spectral grid with `m^2` points on the torus; fields are `(a, b)` stacked,
/// point `(i0, i1)` at flat index `i0 * m + i1`.
#[derive(Debug, Clone)]
pub struct OmegaCell {
    m: usize,
    w: Vec<Voigt>,
    mu: f64,
    fft: GridFftHandle,
}

impl OmegaCell {
    pub fn new(m: usize, w: Vec<Voigt>) -> Result<Self> {
        if m < 2 || w.len() != m * m {
            return Err(Error::DimensionMismatch { expected: m * m, got: w.len() });
        }
        let mu = check_elliptic(&w)?;
        Ok(Self { m, w, mu, fft: GridFftHandle(std::sync::Arc::new(GridFft::new(2, m))) })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        2 * self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(k0, k1)` in units of `2 pi`, `None` when either is a Nyquist index.
    fn wavevector(&self, idx: usize) -> Option<[f64; 2]> {
        let m = self.m;
        Some([signed_freq(idx / m, m)? as f64, signed_freq(idx % m, m)? as f64])
    }

    fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let mut c = self.fft.0.forward_real(f);
        for (idx, v) in c.iter_mut().enumerate() {
            *v = match self.wavevector(idx) {
                Some(k) => *v * Complex64::new(0.0, TWO_PI * k[axis]),
                None => Complex64::new(0.0, 0.0),
            };
        }
        self.fft.0.inverse_real(c)
    }

    /// Strains `(D0 a, D1 b, (D1 a + D0 b) / 2)` per point.
    pub fn strains(&self, x: &[f64]) -> Vec<Sym2> {
        let n = self.m * self.m;
        let (a, b) = x.split_at(n);
        let a0 = self.derivative(a, 0);
        let a1 = self.derivative(a, 1);
        let b0 = self.derivative(b, 0);
        let b1 = self.derivative(b, 1);
        (0..n).map(|p| [a0[p], b1[p], 0.5 * (a1[p] + b0[p])]).collect()
    }

    fn total(&self, x: Option<&[f64]>, e: &Sym2) -> Vec<Sym2> {
        let n = self.m * self.m;
        match x {
            Some(x) => self.strains(x).into_iter().map(|s| [s[0] + e[0], s[1] + e[1], s[2] + e[2]]).collect(),
            None => vec![*e; n],
        }
    }

    pub fn stress_adjoint(&self, x: Option<&[f64]>, e: &Sym2, out: &mut [f64]) {
        let n = self.m * self.m;
        let s = self.total(x, e);
        let tau: Vec<Sym2> = s.iter().zip(&self.w).map(|(s, w)| w.apply(s).map(|v| v / n as f64)).collect();
        let t0: Vec<f64> = tau.iter().map(|t| t[0]).collect();
        let t1: Vec<f64> = tau.iter().map(|t| t[1]).collect();
        let t2: Vec<f64> = tau.iter().map(|t| t[2]).collect();
        let d0t0 = self.derivative(&t0, 0);
        let d1t2 = self.derivative(&t2, 1);
        let d1t1 = self.derivative(&t1, 1);
        let d0t2 = self.derivative(&t2, 0);
        for p in 0..n {
            out[p] = -d0t0[p] - 0.5 * d1t2[p];
            out[n + p] = -d1t1[p] - 0.5 * d0t2[p];
        }
    }

    pub fn energy(&self, x: &[f64], e: &Sym2) -> f64 {
        let n = (self.m * self.m) as f64;
        self.total(Some(x), e).iter().zip(&self.w).map(|(s, w)| w.energy(s, s) / n).sum()
    }

    pub fn mean_stress(&self, x: Option<&[f64]>, e: &Sym2) -> Sym2 {
        let n = (self.m * self.m) as f64;
        let mut acc = [0.0; 3];
        for (s, w) in self.total(x, e).iter().zip(&self.w) {
            let ws = w.apply(s);
            for a in 0..3 {
                acc[a] += ws[a] / n;
            }
        }
        acc
    }

    pub fn max_div(&self, x: &[f64]) -> f64 {
        let n = self.m * self.m;
        let d0 = self.derivative(&x[..n], 0);
        let d1 = self.derivative(&x[n..], 1);
        d0.iter().zip(&d1).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()))
    }

    fn spectral(&self, x: &[f64], scale: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.m * self.m;
        let mut fa = self.fft.0.forward_real(&x[..n]);
        let mut fb = self.fft.0.forward_real(&x[n..]);
        for idx in 0..n {
            match self.wavevector(idx) {
                Some(k) if k != [0.0, 0.0] => {
                    let k2 = k[0] * k[0] + k[1] * k[1];
                    let s = scale(TWO_PI * TWO_PI * k2);
                    let (a, b) = (fa[idx] * s, fb[idx] * s);
                    let dot = a * k[0] + b * k[1];
                    fa[idx] = a - dot * (k[0] / k2);
                    fb[idx] = b - dot * (k[1] / k2);
                }
                _ => {
                    fa[idx] = Complex64::new(0.0, 0.0);
                    fb[idx] = Complex64::new(0.0, 0.0);
                }
            }
        }
        let mut out = self.fft.0.inverse_real(fa);
        out.extend(self.fft.0.inverse_real(fb));
        out
    }

    /// Projection onto band-limited, mean-zero, divergence-free fields.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.spectral(x, |_| 1.0)
    }

    pub fn solve(&self, e: &Sym2) -> Result<CellSolution> {
        let n = self.len();
        let mut b = vec![0.0; n];
        self.stress_adjoint(None, e, &mut b);
        b.iter_mut().for_each(|v| *v = -*v);
        let b = self.project(&b);
        let mut x = vec![0.0; n];
        let mu = self.mu;
        let mut op = |x: &[f64], y: &mut [f64]| {
            self.stress_adjoint(Some(x), &[0.0; 3], y);
            y.copy_from_slice(&self.project(y));
        };
        let mut pre = |r: &[f64], z: &mut [f64]| z.copy_from_slice(&self.spectral(r, |l| 1.0 / (mu * l)));
        let stats = pcg("omega cell", &mut op, &mut pre, &b, &mut x, cell_tolerance())?;
        let x = self.project(&x);
        let div = self.max_div(&x);
        if div > 1e-10 {
            return Err(Error::Divergence(div));
        }
        Ok(CellSolution { stress: self.mean_stress(Some(&x), e), field: x, stats })
    }
}

/// Unit strains `(1,0,0)`, `(0,1,0)`, `(0,0,1)` in `(e11, e22, e12)` coordinates.
pub const UNIT_STRAINS: [Sym2; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Homogenized energy matrix from the three unit-strain stresses (columns).
pub fn voigt_from_columns(cols: &[Sym2; 3]) -> Voigt {
    let mut m = [[0.0; 3]; 3];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..3 {
            m[i][j] = c[i];
        }
    }
    Voigt::from_matrix(&m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(mu: f64) -> Voigt {
        Voigt([2.0 * mu, 0.0, 0.0, 2.0 * mu, 0.0, 4.0 * mu])
    }

    #[test]
    fn constant_tensor_gives_zero_correctors() {
        let cell = PeriodicCell::new(8, vec![iso(1.3); 64]).unwrap();
        for e in UNIT_STRAINS {
            let s = cell.solve(&e).unwrap();
            assert!(s.field.iter().all(|v| v.abs() < 1e-13));
            let direct = iso(1.3).apply(&e);
            assert!(s.stress.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let om = OmegaCell::new(8, vec![iso(0.7); 64]).unwrap();
        let s = om.solve(&[0.3, -0.1, 0.2]).unwrap();
        assert!(s.field.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn zero_strain_gives_zero() {
        let w: Vec<Voigt> = (0..64).map(|c| iso(if c % 8 < 4 { 1.0 } else { 5.0 })).collect();
        let s = PeriodicCell::new(8, w).unwrap().solve(&[0.0; 3]).unwrap();
        assert!(s.field.iter().all(|v| *v == 0.0) && s.stress == [0.0; 3]);
    }

    #[test]
    fn laminate_shear_matches_harmonic_mean() {
        // Layers normal to x: the shear stress is constant across layers, so the
        // effective modulus is the harmonic mean over node columns; the two
        // interface columns see the average of both phases.
        let (m1, m2) = (1.0, 4.0);
        let w: Vec<Voigt> = (0..256).map(|c| iso(if c % 16 < 8 { m1 } else { m2 })).collect();
        let cell = PeriodicCell::new(16, w).unwrap();
        let s = cell.solve(&[0.0, 0.0, 1.0]).unwrap();
        let harmonic = 16.0 / (7.0 / m1 + 7.0 / m2 + 2.0 / (0.5 * (m1 + m2)));
        assert!((s.stress[2] - 4.0 * harmonic).abs() < 1e-9 * harmonic, "{:?}", s.stress);
        assert!(cell.max_div(&s.field) < 1e-10);
    }

    #[test]
    fn projections_are_idempotent() {
        let w: Vec<Voigt> = (0..64).map(|c| iso(1.0 + (c % 5) as f64)).collect();
        let cell = PeriodicCell::new(8, w.clone()).unwrap();
        let x: Vec<f64> = (0..cell.len()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let p = cell.project(&x);
        let pp = cell.project(&p);
        assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(cell.max_div(&p) < 1e-10);
        let om = OmegaCell::new(8, w).unwrap();
        let p = om.project(&x);
        assert!(om.max_div(&p) < 1e-10);
        let pp = om.project(&p);
        assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn adjoint_matches_energy_gradient() {
        let w: Vec<Voigt> = (0..36).map(|c| Voigt([2.0 + (c % 3) as f64, 0.4, 0.1, 3.0, -0.2, 5.0])).collect();
        let cell = PeriodicCell::new(6, w.clone()).unwrap();
        let om = OmegaCell::new(6, w).unwrap();
        let e = [0.2, -0.3, 0.5];
        let x: Vec<f64> = (0..cell.len()).map(|i| ((i * 13 % 7) as f64 * 0.3).cos()).collect();
        let d: Vec<f64> = (0..cell.len()).map(|i| ((i * 5 % 9) as f64 * 0.2).sin()).collect();
        for (energy, grad) in [
            (Box::new(|z: &[f64]| cell.energy(z, &e)) as Box<dyn Fn(&[f64]) -> f64>, {
                let mut g = vec![0.0; cell.len()];
                cell.stress_adjoint(Some(&x), &e, &mut g);
                g
            }),
            (Box::new(|z: &[f64]| om.energy(z, &e)), {
                let mut g = vec![0.0; om.len()];
                om.stress_adjoint(Some(&x), &e, &mut g);
                g
            }),
        ] {
            let t = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - t * b).collect();
            let fd = (energy(&xp) - energy(&xm)) / (2.0 * t);
            let an = 2.0 * crate::linalg::dot(&grad, &d);
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{fd} {an}");
        }
    }
}
