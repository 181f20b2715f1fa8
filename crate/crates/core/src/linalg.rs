//! Matrix-free Krylov solvers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Stopping rule: `||r|| <= max(rel * ||b||, abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self { rel, abs: 0.0, max_iter: 10_000 }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Preconditioned conjugate gradients for a symmetric positive (semi)definite operator.
pub fn pcg(
    name: &'static str,
    op: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: Tolerance,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm(b);
    let target = (tol.rel * bnorm).max(tol.abs);
    let mut r = vec![0.0; n];
    op(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rn = norm(&r);
    if rn <= target || bnorm == 0.0 && rn == 0.0 {
        return Ok(SolveStats { iterations: 0, residual: if bnorm > 0.0 { rn / bnorm } else { rn } });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=tol.max_iter {
        op(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NoConvergence { solver: name, iterations: it, residual: rn / bnorm.max(1e-300) });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rn = norm(&r);
        if rn <= target {
            return Ok(SolveStats { iterations: it, residual: rn / bnorm.max(1e-300) });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence { solver: name, iterations: tol.max_iter, residual: rn / bnorm.max(1e-300) })
}

/// Right-preconditioned BiCGSTAB for nonsymmetric operators.
pub fn bicgstab(
    name: &'static str,
    op: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: Tolerance,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm(b);
    let target = (tol.rel * bnorm).max(tol.abs);
    let mut r = vec![0.0; n];
    op(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rn = norm(&r);
    if rn <= target {
        return Ok(SolveStats { iterations: 0, residual: if bnorm > 0.0 { rn / bnorm } else { rn } });
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=tol.max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut phat);
        op(&phat, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            break;
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= target {
            axpy(alpha, &phat, x);
            op(x, &mut t);
            let true_res: Vec<f64> = b.iter().zip(&t).map(|(bi, ti)| bi - ti).collect();
            return Ok(SolveStats { iterations: it, residual: norm(&true_res) / bnorm.max(1e-300) });
        }
        precond(&s, &mut shat);
        op(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        rn = norm(&r);
        if rn <= target {
            return Ok(SolveStats { iterations: it, residual: rn / bnorm.max(1e-300) });
        }
    }
    Err(Error::NoConvergence { solver: name, iterations: tol.max_iter, residual: rn / bnorm.max(1e-300) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(x: &[f64], y: &mut [f64], skew: f64) {
        let n = x.len();
        for i in 0..n {
            let l = if i > 0 { x[i - 1] } else { 0.0 };
            let r = if i + 1 < n { x[i + 1] } else { 0.0 };
            y[i] = 2.5 * x[i] - (1.0 + skew) * l - (1.0 - skew) * r;
        }
    }

    #[test]
    fn cg_solves_spd() {
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; 50];
        let st = pcg("cg", &mut |a, y| tridiag(a, y, 0.0), &mut |r, z| z.copy_from_slice(r), &b, &mut x, Tolerance::relative(1e-12)).unwrap();
        let mut ax = vec![0.0; 50];
        tridiag(&x, &mut ax, 0.0);
        assert!(ax.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(st.iterations <= 50);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut x = vec![0.0; 40];
        bicgstab("bicg", &mut |a, y| tridiag(a, y, 0.4), &mut |r, z| z.copy_from_slice(r), &b, &mut x, Tolerance::relative(1e-12)).unwrap();
        let mut ax = vec![0.0; 40];
        tridiag(&x, &mut ax, 0.4);
        assert!(ax.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
