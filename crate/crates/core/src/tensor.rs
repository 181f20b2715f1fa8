//! Fourth-order tensors in two dimensions with the minor/major symmetries.

use crate::error::{Error, Result};

/// Strain or stress components `(s11, s22, s12)`.
pub type Sym2 = [f64; 3];

/// Energy matrix `W` with `s^T W s = e : a : e` for `s = (e11, e22, e12)`,
/// stored as `(w00, w01, w02, w11, w12, w22)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Voigt(pub [f64; 6]);

impl Voigt {
    pub const ZERO: Voigt = Voigt([0.0; 6]);

    pub fn apply(&self, s: &Sym2) -> Sym2 {
        let w = &self.0;
        [
            w[0] * s[0] + w[1] * s[1] + w[2] * s[2],
            w[1] * s[0] + w[3] * s[1] + w[4] * s[2],
            w[2] * s[0] + w[4] * s[1] + w[5] * s[2],
        ]
    }

    pub fn energy(&self, s: &Sym2, t: &Sym2) -> f64 {
        let ws = self.apply(s);
        ws[0] * t[0] + ws[1] * t[1] + ws[2] * t[2]
    }

    pub fn scaled(&self, c: f64) -> Voigt {
        Voigt(self.0.map(|v| c * v))
    }

    pub fn add(&self, o: &Voigt) -> Voigt {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(o.0) {
            *a += b;
        }
        Voigt(out)
    }

    /// Matrix with columns `W e_k`, rows indexing `(s11, s22, s12)`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let w = &self.0;
        [[w[0], w[1], w[2]], [w[1], w[3], w[4]], [w[2], w[4], w[5]]]
    }

    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Voigt {
        Voigt([m[0][0], 0.5 * (m[0][1] + m[1][0]), 0.5 * (m[0][2] + m[2][0]), m[1][1], 0.5 * (m[1][2] + m[2][1]), m[2][2]])
    }

    /// Back to the full tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        let w = &self.0;
        let mut a = [[[[0.0; 2]; 2]; 2]; 2];
        let set = |a: &mut [[[[f64; 2]; 2]; 2]; 2], i: usize, j: usize, k: usize, l: usize, v: f64| {
            for (p, q) in [(i, j), (j, i)] {
                for (r, s) in [(k, l), (l, k)] {
                    a[p][q][r][s] = v;
                    a[r][s][p][q] = v;
                }
            }
        };
        set(&mut a, 0, 0, 0, 0, w[0]);
        set(&mut a, 0, 0, 1, 1, w[1]);
        set(&mut a, 0, 0, 0, 1, 0.5 * w[2]);
        set(&mut a, 1, 1, 1, 1, w[3]);
        set(&mut a, 1, 1, 0, 1, 0.5 * w[4]);
        set(&mut a, 0, 1, 0, 1, 0.25 * w[5]);
        Tensor4(a)
    }

    /// Eigenvalue bounds of the quadratic form against the Frobenius norm of the strain.
    pub fn bounds(&self) -> (f64, f64) {
        let w = &self.0;
        let r = std::f64::consts::SQRT_2;
        let m = [[w[0], w[1], w[2] / r], [w[1], w[3], w[4] / r], [w[2] / r, w[4] / r, w[5] / 2.0]];
        let ev = sym3_eigenvalues(&m);
        (ev[0], ev[2])
    }
}

/// `a_{ijkl}`, indices zero-based.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor4(pub [[[[f64; 2]; 2]; 2]; 2]);

impl Tensor4 {
    /// `mu (d_ik d_jl + d_il d_jk) + lambda d_ij d_kl`.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut a = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        a[i][j][k][l] = mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k)) + lambda * d(i, j) * d(k, l);
                    }
                }
            }
        }
        Tensor4(a)
    }

    /// Orthotropic tensor from `a1111, a2222, a1122, a1212`.
    pub fn orthotropic(c1111: f64, c2222: f64, c1122: f64, c1212: f64) -> Self {
        Voigt([c1111, c1122, 0.0, c2222, 0.0, 4.0 * c1212]).to_tensor()
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.0[i][j][k][l]
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut a = self.0;
        a.iter_mut().flatten().flatten().flatten().for_each(|v| *v *= c);
        Tensor4(a)
    }

    /// Largest violation of `a_ijkl = a_jikl = a_ijlk = a_klij`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let v = self.0[i][j][k][l];
                        worst = worst
                            .max((v - self.0[j][i][k][l]).abs())
                            .max((v - self.0[i][j][l][k]).abs())
                            .max((v - self.0[k][l][i][j]).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn to_voigt(&self) -> Voigt {
        let a = &self.0;
        Voigt([a[0][0][0][0], a[0][0][1][1], 2.0 * a[0][0][0][1], a[1][1][1][1], 2.0 * a[1][1][0][1], 4.0 * a[0][1][0][1]])
    }

    /// `sum_{ijkl} a_ijkl e_kl t_ij` for full 2x2 matrices.
    pub fn contract(&self, e: &[[f64; 2]; 2], t: &[[f64; 2]; 2]) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        acc += self.0[i][j][k][l] * e[k][l] * t[i][j];
                    }
                }
            }
        }
        acc
    }

    /// Ellipticity bounds `(c1, c2)` with `c1 |e|^2 <= e:a:e <= c2 |e|^2`.
    pub fn bounds(&self) -> (f64, f64) {
        self.to_voigt().bounds()
    }

    pub fn validate(&self) -> Result<(f64, f64)> {
        let defect = self.symmetry_defect();
        let scale = self.0.iter().flatten().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if defect > 1e-12 * scale {
            return Err(Error::NotElliptic(format!("symmetry defect {defect:e}")));
        }
        let (c1, c2) = self.bounds();
        if !(c1 > 0.0) {
            return Err(Error::NotElliptic(format!("smallest eigenvalue {c1:e}")));
        }
        Ok((c1, c2))
    }
}

/// `sigma_ij = a_ijkl e_kl` for a symmetric 2x2 strain.
pub fn stress(a: &Tensor4, e: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let asym = (e[0][1] - e[1][0]).abs();
    if asym > 1e-14 * (e[0][1].abs() + e[1][0].abs()).max(1e-300) && asym > 0.0 {
        return Err(Error::AsymmetricStrain(asym));
    }
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    s[i][j] += a.0[i][j][k][l] * e[k][l];
                }
            }
        }
    }
    Ok(s)
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order.
pub fn sym3_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 <= 1e-300 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.total_cmp(b));
        return e;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_stress_is_two_mu_e() {
        let a = Tensor4::isotropic(0.0, 1.5);
        let e = [[0.3, -0.2], [-0.2, 0.7]];
        let s = stress(&a, &e).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[i][j] - 3.0 * e[i][j]).abs() < 1e-15);
            }
        }
        assert_eq!(stress(&a, &[[0.0; 2]; 2]).unwrap(), [[0.0; 2]; 2]);
        assert!(stress(&a, &[[0.0, 1.0], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn scalar_multiple_of_identity() {
        let lam = 2.5;
        let a = Tensor4::isotropic(0.0, lam / 2.0);
        let (c1, c2) = a.bounds();
        assert!((c1 - lam).abs() < 1e-12 && (c2 - lam).abs() < 1e-12);
        let s = stress(&a, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(s, [[lam, 0.0], [0.0, lam]]);
    }

    #[test]
    fn voigt_roundtrip_and_energy() {
        let a = Tensor4::orthotropic(3.0, 2.0, 0.5, 0.7);
        assert!(a.symmetry_defect() < 1e-15);
        let w = a.to_voigt();
        assert_eq!(w.to_tensor(), a);
        let e = [[0.2, 0.4], [0.4, -0.1]];
        let s = [0.2, -0.1, 0.4];
        assert!((w.energy(&s, &s) - a.contract(&e, &e)).abs() < 1e-14);
        assert!(a.validate().is_ok());
        assert!(Tensor4::isotropic(-2.0, 0.5).validate().is_err());
    }

    #[test]
    fn eigenvalues_of_diagonal_and_dense() {
        let e = sym3_eigenvalues(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(e, [1.0, 2.0, 3.0]);
        let e = sym3_eigenvalues(&[[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]]);
        let r = 2f64.sqrt();
        assert!((e[0] - (2.0 - r)).abs() < 1e-12 && (e[1] - 2.0).abs() < 1e-12 && (e[2] - (2.0 + r)).abs() < 1e-12);
    }
}
