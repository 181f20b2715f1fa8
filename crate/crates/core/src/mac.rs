//! Staggered (MAC) grid on a rectangle: face velocities, cell pressures,
//! the corner-quadrature viscous form, skew-symmetric convection and
//! fast-transform preconditioners.
//!
//! Layout: `u[j*(nx+1)+i]` lives at `(x0 + i hx, y0 + (j+1/2) hy)`,
//! `v[j*nx+i]` at `(x0 + (i+1/2) hx, y0 + j hy)`, cells at `j*nx+i`, nodes at
//! `j*(nx+1)+i`. A velocity vector stores `u` then `v`.

use std::sync::Arc;

use rustdct::{DctPlanner, Dst1, TransformType2And3};

use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::tensor::{Sym2, Voigt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacGrid {
    pub nx: usize,
    pub ny: usize,
    pub lo: [f64; 2],
    pub h: [f64; 2],
}

impl MacGrid {
    pub fn new(domain: &BoxDomain, nx: usize, ny: usize) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: domain.dim() });
        }
        if nx < 2 || ny < 2 {
            return Err(Error::Invalid(format!("grid {nx}x{ny} too small")));
        }
        Ok(Self { nx, ny, lo: [domain.lo()[0], domain.lo()[1]], h: [domain.len(0) / nx as f64, domain.len(1) / ny as f64] })
    }

    pub fn unit(n: usize) -> Self {
        Self::new(&BoxDomain::unit(2), n, n).expect("unit grid")
    }

    pub fn nu(&self) -> usize {
        (self.nx + 1) * self.ny
    }
    pub fn nv(&self) -> usize {
        self.nx * (self.ny + 1)
    }
    pub fn nvel(&self) -> usize {
        self.nu() + self.nv()
    }
    pub fn ncell(&self) -> usize {
        self.nx * self.ny
    }
    pub fn nnode(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
    pub fn cell_area(&self) -> f64 {
        self.h[0] * self.h[1]
    }
    pub fn iu(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    pub fn iv(&self, i: usize, j: usize) -> usize {
        self.nu() + j * self.nx + i
    }
    pub fn ic(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    pub fn inode(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    pub fn u_pos(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lo[0] + i as f64 * self.h[0], self.lo[1] + (j as f64 + 0.5) * self.h[1]]
    }
    pub fn v_pos(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lo[0] + (i as f64 + 0.5) * self.h[0], self.lo[1] + j as f64 * self.h[1]]
    }
    pub fn cell_pos(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lo[0] + (i as f64 + 0.5) * self.h[0], self.lo[1] + (j as f64 + 0.5) * self.h[1]]
    }
    pub fn node_pos(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lo[0] + i as f64 * self.h[0], self.lo[1] + j as f64 * self.h[1]]
    }

    /// Position of velocity unknown `k` and its component (0 = u, 1 = v).
    pub fn face(&self, k: usize) -> ([f64; 2], usize) {
        if k < self.nu() {
            (self.u_pos(k % (self.nx + 1), k / (self.nx + 1)), 0)
        } else {
            let k = k - self.nu();
            (self.v_pos(k % self.nx, k / self.nx), 1)
        }
    }

    /// Cells on either side of face `k` (one may be absent at the wall).
    pub fn face_cells(&self, k: usize) -> [Option<usize>; 2] {
        let (nx, ny) = (self.nx, self.ny);
        if k < self.nu() {
            let (i, j) = (k % (nx + 1), k / (nx + 1));
            [(i > 0).then(|| self.ic(i - 1, j)), (i < nx).then(|| self.ic(i, j))]
        } else {
            let k = k - self.nu();
            let (i, j) = (k % nx, k / nx);
            [(j > 0).then(|| self.ic(i, j - 1)), (j < ny).then(|| self.ic(i, j))]
        }
    }

    /// Normal-velocity faces on the wall.
    pub fn is_wall(&self, k: usize) -> bool {
        if k < self.nu() {
            let i = k % (self.nx + 1);
            i == 0 || i == self.nx
        } else {
            let j = (k - self.nu()) / self.nx;
            j == 0 || j == self.ny
        }
    }

    pub fn zero_walls(&self, x: &mut [f64]) {
        let nx = self.nx;
        for j in 0..self.ny {
            x[self.iu(0, j)] = 0.0;
            x[self.iu(nx, j)] = 0.0;
        }
        for i in 0..nx {
            x[self.iv(i, 0)] = 0.0;
            x[self.iv(i, self.ny)] = 0.0;
        }
    }

    /// Sample a vector field at face centres.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        (0..self.nvel())
            .map(|k| {
                let (p, c) = self.face(k);
                f(p)[c]
            })
            .collect()
    }

    /// Exactly divergence-free velocity from nodal stream-function values.
    pub fn from_stream(&self, psi: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let nodes: Vec<f64> = (0..self.nnode()).map(|n| psi(self.node_pos(n % (nx + 1), n / (nx + 1)))).collect();
        let mut x = vec![0.0; self.nvel()];
        for j in 0..ny {
            for i in 0..=nx {
                x[self.iu(i, j)] = (nodes[self.inode(i, j + 1)] - nodes[self.inode(i, j)]) / self.h[1];
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                x[self.iv(i, j)] = -(nodes[self.inode(i + 1, j)] - nodes[self.inode(i, j)]) / self.h[0];
            }
        }
        x
    }
}

/// Treatment of the tangential ghost values when differencing across a wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallRule {
    /// Ghost equals minus the interior value (velocity zero on the wall).
    NoSlip,
    /// One-sided differences; used to evaluate strains of arbitrary fields.
    Extrapolate,
}

/// Integrated divergence per cell.
pub fn divergence(g: &MacGrid, x: &[f64], out: &mut [f64]) {
    let (hx, hy) = (g.h[0], g.h[1]);
    for j in 0..g.ny {
        for i in 0..g.nx {
            out[g.ic(i, j)] = hy * (x[g.iu(i + 1, j)] - x[g.iu(i, j)]) + hx * (x[g.iv(i, j + 1)] - x[g.iv(i, j)]);
        }
    }
}

/// Transpose of [`divergence`] restricted to interior faces.
pub fn divergence_t(g: &MacGrid, q: &[f64], out: &mut [f64]) {
    let (hx, hy) = (g.h[0], g.h[1]);
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..g.ny {
        for i in 1..g.nx {
            out[g.iu(i, j)] = hy * (q[g.ic(i - 1, j)] - q[g.ic(i, j)]);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            out[g.iv(i, j)] = hx * (q[g.ic(i, j - 1)] - q[g.ic(i, j)]);
        }
    }
}

/// Largest pointwise divergence.
pub fn max_divergence(g: &MacGrid, x: &[f64]) -> f64 {
    let mut d = vec![0.0; g.ncell()];
    divergence(g, x, &mut d);
    d.iter().fold(0.0f64, |m, v| m.max(v.abs())) / g.cell_area()
}

/// Shear strain `e12` at every node.
pub fn node_shear(g: &MacGrid, x: &[f64], rule: WallRule) -> Vec<f64> {
    let (nx, ny, hx, hy) = (g.nx, g.ny, g.h[0], g.h[1]);
    let mut out = vec![0.0; g.nnode()];
    for j in 0..=ny {
        for i in 0..=nx {
            let dudy = if j == 0 {
                match rule {
                    WallRule::NoSlip => 2.0 * x[g.iu(i, 0)] / hy,
                    WallRule::Extrapolate => (x[g.iu(i, 1)] - x[g.iu(i, 0)]) / hy,
                }
            } else if j == ny {
                match rule {
                    WallRule::NoSlip => -2.0 * x[g.iu(i, ny - 1)] / hy,
                    WallRule::Extrapolate => (x[g.iu(i, ny - 1)] - x[g.iu(i, ny - 2)]) / hy,
                }
            } else {
                (x[g.iu(i, j)] - x[g.iu(i, j - 1)]) / hy
            };
            let dvdx = if i == 0 {
                match rule {
                    WallRule::NoSlip => 2.0 * x[g.iv(0, j)] / hx,
                    WallRule::Extrapolate => (x[g.iv(1, j)] - x[g.iv(0, j)]) / hx,
                }
            } else if i == nx {
                match rule {
                    WallRule::NoSlip => -2.0 * x[g.iv(nx - 1, j)] / hx,
                    WallRule::Extrapolate => (x[g.iv(nx - 1, j)] - x[g.iv(nx - 2, j)]) / hx,
                }
            } else {
                (x[g.iv(i, j)] - x[g.iv(i - 1, j)]) / hx
            };
            out[g.inode(i, j)] = 0.5 * (dudy + dvdx);
        }
    }
    out
}

/// Strain at the four corners of cell `(i, j)`: `(e11, e22, e12_corner)`.
fn corner_strains(g: &MacGrid, x: &[f64], shear: &[f64], i: usize, j: usize) -> [Sym2; 4] {
    let e11 = (x[g.iu(i + 1, j)] - x[g.iu(i, j)]) / g.h[0];
    let e22 = (x[g.iv(i, j + 1)] - x[g.iv(i, j)]) / g.h[1];
    [
        [e11, e22, shear[g.inode(i, j)]],
        [e11, e22, shear[g.inode(i + 1, j)]],
        [e11, e22, shear[g.inode(i, j + 1)]],
        [e11, e22, shear[g.inode(i + 1, j + 1)]],
    ]
}

/// Cell-centred strain `(e11, e22, e12)`; the shear is the mean of the corner values.
pub fn cell_strain(g: &MacGrid, x: &[f64], rule: WallRule) -> Vec<Sym2> {
    let shear = node_shear(g, x, rule);
    let mut out = Vec::with_capacity(g.ncell());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = corner_strains(g, x, &shear, i, j);
            out.push([c[0][0], c[0][1], 0.25 * (c[0][2] + c[1][2] + c[2][2] + c[3][2])]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvFace {
    pub minus: Option<usize>,
    pub plus: Option<usize>,
    pub flux: f64,
}

/// The viscous bilinear form with per-cell energy matrices, corner quadrature.
#[derive(Debug, Clone)]
pub struct Viscous {
    pub grid: MacGrid,
    pub w: Vec<Voigt>,
}

impl Viscous {
    pub fn new(grid: MacGrid, w: Vec<Voigt>) -> Result<Self> {
        if w.len() != grid.ncell() {
            return Err(Error::DimensionMismatch { expected: grid.ncell(), got: w.len() });
        }
        Ok(Self { grid, w })
    }

    /// `sum_cells sum_corners hx hy / 4 * s(x)^T W s(y)`, optionally restricted to a cell mask.
    pub fn bilinear(&self, x: &[f64], y: &[f64], rule: WallRule, mask: Option<&[bool]>) -> f64 {
        let g = &self.grid;
        let sx = node_shear(g, x, rule);
        let sy = node_shear(g, y, rule);
        let q = 0.25 * g.cell_area();
        let mut acc = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.ic(i, j);
                if mask.is_some_and(|m| !m[c]) {
                    continue;
                }
                let a = corner_strains(g, x, &sx, i, j);
                let b = corner_strains(g, y, &sy, i, j);
                acc += q * a.iter().zip(&b).map(|(s, t)| self.w[c].energy(s, t)).sum::<f64>();
            }
        }
        acc
    }

    /// `out = A x` for the no-slip form; wall entries are zero.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny, hx, hy) = (g.nx, g.ny, g.h[0], g.h[1]);
        let shear = node_shear(g, x, WallRule::NoSlip);
        let q = 0.25 * g.cell_area();
        let mut tau = vec![0.0; g.nnode()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..ny {
            for i in 0..nx {
                let c = g.ic(i, j);
                let corners = corner_strains(g, x, &shear, i, j);
                let nodes = [g.inode(i, j), g.inode(i + 1, j), g.inode(i, j + 1), g.inode(i + 1, j + 1)];
                let (mut s11, mut s22) = (0.0, 0.0);
                for (s, &n) in corners.iter().zip(&nodes) {
                    let ws = self.w[c].apply(s);
                    s11 += q * ws[0];
                    s22 += q * ws[1];
                    tau[n] += q * ws[2];
                }
                out[g.iu(i + 1, j)] += s11 / hx;
                out[g.iu(i, j)] -= s11 / hx;
                out[g.iv(i, j + 1)] += s22 / hy;
                out[g.iv(i, j)] -= s22 / hy;
            }
        }
        for j in 0..=ny {
            for i in 0..=nx {
                let c = 0.5 * tau[g.inode(i, j)];
                let cy = c / hy;
                if j == 0 {
                    out[g.iu(i, 0)] += 2.0 * cy;
                } else if j == ny {
                    out[g.iu(i, ny - 1)] -= 2.0 * cy;
                } else {
                    out[g.iu(i, j)] += cy;
                    out[g.iu(i, j - 1)] -= cy;
                }
                let cx = c / hx;
                if i == 0 {
                    out[g.iv(0, j)] += 2.0 * cx;
                } else if i == nx {
                    out[g.iv(nx - 1, j)] -= 2.0 * cx;
                } else {
                    out[g.iv(i, j)] += cx;
                    out[g.iv(i - 1, j)] -= cx;
                }
            }
        }
        g.zero_walls(out);
    }

    /// Momentum exchanged across every control-volume face, evaluated once per
    /// face from the adjacent cell or node stress. `minus` loses and `plus`
    /// gains `flux`; wall faces have a single owner.
    pub fn cv_faces(&self, x: &[f64]) -> Vec<CvFace> {
        let g = &self.grid;
        let (nx, ny, hx, hy) = (g.nx, g.ny, g.h[0], g.h[1]);
        let shear = node_shear(g, x, WallRule::NoSlip);
        let q = 0.25 * g.cell_area();
        let interior = |k: usize| (!g.is_wall(k)).then_some(k);
        let mut out = Vec::new();
        let mut tau = vec![0.0; g.nnode()];
        for j in 0..ny {
            for i in 0..nx {
                let c = g.ic(i, j);
                let nodes = [g.inode(i, j), g.inode(i + 1, j), g.inode(i, j + 1), g.inode(i + 1, j + 1)];
                let (mut s11, mut s22) = (0.0, 0.0);
                for (s, &n) in corner_strains(g, x, &shear, i, j).iter().zip(&nodes) {
                    let ws = self.w[c].apply(s);
                    s11 += q * ws[0];
                    s22 += q * ws[1];
                    tau[n] += q * ws[2];
                }
                out.push(CvFace { minus: interior(g.iu(i, j)), plus: interior(g.iu(i + 1, j)), flux: s11 / hx });
                out.push(CvFace { minus: interior(g.iv(i, j)), plus: interior(g.iv(i, j + 1)), flux: s22 / hy });
            }
        }
        for j in 0..=ny {
            for i in 0..=nx {
                let c = 0.5 * tau[g.inode(i, j)];
                let (minus, plus, f) = if j == 0 {
                    (None, Some(g.iu(i, 0)), 2.0 * c / hy)
                } else if j == ny {
                    (Some(g.iu(i, ny - 1)), None, 2.0 * c / hy)
                } else {
                    (Some(g.iu(i, j - 1)), Some(g.iu(i, j)), c / hy)
                };
                out.push(CvFace { minus: minus.and_then(interior), plus: plus.and_then(interior), flux: f });
                let (minus, plus, f) = if i == 0 {
                    (None, Some(g.iv(0, j)), 2.0 * c / hx)
                } else if i == nx {
                    (Some(g.iv(nx - 1, j)), None, 2.0 * c / hx)
                } else {
                    (Some(g.iv(i - 1, j)), Some(g.iv(i, j)), c / hx)
                };
                out.push(CvFace { minus: minus.and_then(interior), plus: plus.and_then(interior), flux: f });
            }
        }
        out
    }

    /// Mean of `W00`, `W22` and `W11` over the cells.
    pub fn mean_diag(&self) -> [f64; 3] {
        let n = self.w.len() as f64;
        let mut m = [0.0; 3];
        for w in &self.w {
            m[0] += w.0[0] / n;
            m[1] += w.0[3] / n;
            m[2] += w.0[5] / n;
        }
        m
    }
}

/// Skew-symmetric central convection `C(a) x` with advecting velocity `a`.
pub fn convection(g: &MacGrid, a: &[f64], x: &[f64], out: &mut [f64]) {
    let (nx, ny, hx, hy) = (g.nx, g.ny, g.h[0], g.h[1]);
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..ny {
        for i in 1..nx {
            let p = g.iu(i, j);
            let fe = 0.5 * hy * (a[g.iu(i, j)] + a[g.iu(i + 1, j)]);
            let fw = -0.5 * hy * (a[g.iu(i - 1, j)] + a[g.iu(i, j)]);
            let fnn = 0.5 * hx * (a[g.iv(i - 1, j + 1)] + a[g.iv(i, j + 1)]);
            let fs = -0.5 * hx * (a[g.iv(i - 1, j)] + a[g.iv(i, j)]);
            let mut acc = fe * x[g.iu(i + 1, j)] + fw * x[g.iu(i - 1, j)];
            if j + 1 < ny {
                acc += fnn * x[g.iu(i, j + 1)];
            }
            if j > 0 {
                acc += fs * x[g.iu(i, j - 1)];
            }
            out[p] = 0.5 * acc;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let p = g.iv(i, j);
            let fnn = 0.5 * hx * (a[g.iv(i, j)] + a[g.iv(i, j + 1)]);
            let fs = -0.5 * hx * (a[g.iv(i, j - 1)] + a[g.iv(i, j)]);
            let fe = 0.5 * hy * (a[g.iu(i + 1, j - 1)] + a[g.iu(i + 1, j)]);
            let fw = -0.5 * hy * (a[g.iu(i, j - 1)] + a[g.iu(i, j)]);
            let mut acc = fnn * x[g.iv(i, j + 1)] + fs * x[g.iv(i, j - 1)];
            if i + 1 < nx {
                acc += fe * x[g.iv(i + 1, j)];
            }
            if i > 0 {
                acc += fw * x[g.iv(i - 1, j)];
            }
            out[p] = 0.5 * acc;
        }
    }
}

enum Line {
    Even(Arc<dyn TransformType2And3<f64>>),
    Dst1(Arc<dyn Dst1<f64>>),
}

#[derive(Clone, Copy)]
enum Op {
    Dct2,
    Dct3,
    Dst1,
    Dst2,
    Dst3,
}

impl Line {
    fn run(&self, op: Op, buf: &mut [f64]) {
        match (self, op) {
            (Line::Even(p), Op::Dct2) => p.process_dct2(buf),
            (Line::Even(p), Op::Dct3) => p.process_dct3(buf),
            (Line::Even(p), Op::Dst2) => p.process_dst2(buf),
            (Line::Even(p), Op::Dst3) => p.process_dst3(buf),
            (Line::Dst1(p), Op::Dst1) => p.process_dst1(buf),
            _ => unreachable!("transform kind mismatch"),
        }
    }
}

/// Apply a 1-D transform along x (rows of length `ncol`) or y (columns of length `nrow`).
fn along(data: &mut [f64], nrow: usize, ncol: usize, axis: usize, line: &Line, op: Op) {
    if axis == 0 {
        data.chunks_mut(ncol).for_each(|row| line.run(op, row));
    } else {
        let mut col = vec![0.0; nrow];
        for i in 0..ncol {
            for j in 0..nrow {
                col[j] = data[j * ncol + i];
            }
            line.run(op, &mut col);
            for j in 0..nrow {
                data[j * ncol + i] = col[j];
            }
        }
    }
}

/// Exact inverse of the constant-coefficient pressure operator `D M^-1 D^T`
/// with Neumann walls, on the mean-zero subspace.
pub struct PressurePrecond {
    nx: usize,
    ny: usize,
    lam: Vec<f64>,
    px: Line,
    py: Line,
}

impl PressurePrecond {
    /// `inv_rho` is the representative reciprocal density.
    pub fn new(g: &MacGrid, inv_rho: f64) -> Self {
        let mut planner = DctPlanner::new();
        let (nx, ny, hx, hy) = (g.nx, g.ny, g.h[0], g.h[1]);
        let mut lam = vec![0.0; nx * ny];
        for l in 0..ny {
            for k in 0..nx {
                let ax = 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / nx as f64).cos();
                let ay = 2.0 - 2.0 * (std::f64::consts::PI * l as f64 / ny as f64).cos();
                lam[l * nx + k] = inv_rho * ((hy / hx) * ax + (hx / hy) * ay);
            }
        }
        Self { nx, ny, lam, px: Line::Even(planner.plan_dct2(nx)), py: Line::Even(planner.plan_dct2(ny)) }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        z.copy_from_slice(r);
        along(z, ny, nx, 0, &self.px, Op::Dct2);
        along(z, ny, nx, 1, &self.py, Op::Dct2);
        let s = 4.0 / (nx * ny) as f64;
        for (zi, l) in z.iter_mut().zip(&self.lam) {
            *zi = if *l > 0.0 { s * *zi / l } else { 0.0 };
        }
        along(z, ny, nx, 0, &self.px, Op::Dct3);
        along(z, ny, nx, 1, &self.py, Op::Dct3);
    }
}

/// Block-diagonal inverse for `m/dt + A` with constant representative
/// coefficients: DST-I along the normal direction and DST-II along the
/// tangential one (ghost reflection at the walls).
pub struct VelocityPrecond {
    grid: MacGrid,
    lam_u: Vec<f64>,
    lam_v: Vec<f64>,
    dst1_x: Line,
    dst2_y: Line,
    dst1_y: Line,
    dst2_x: Line,
}

impl VelocityPrecond {
    /// `mass` is the representative face mass divided by the time step; `diag` as from [`Viscous::mean_diag`].
    pub fn new(g: &MacGrid, mass: f64, diag: [f64; 3]) -> Self {
        let mut planner = DctPlanner::new();
        let (nx, ny, hx, hy) = (g.nx, g.ny, g.h[0], g.h[1]);
        let pi = std::f64::consts::PI;
        let eig = |k: usize, n: usize| 2.0 - 2.0 * (pi * (k + 1) as f64 / n as f64).cos();
        let mut lam_u = vec![0.0; (nx - 1) * ny];
        for l in 0..ny {
            for k in 0..nx - 1 {
                lam_u[l * (nx - 1) + k] = mass + diag[0] * (hy / hx) * eig(k, nx) + 0.25 * diag[2] * (hx / hy) * eig(l, ny);
            }
        }
        let mut lam_v = vec![0.0; nx * (ny - 1)];
        for l in 0..ny - 1 {
            for k in 0..nx {
                lam_v[l * nx + k] = mass + diag[1] * (hx / hy) * eig(l, ny) + 0.25 * diag[2] * (hy / hx) * eig(k, nx);
            }
        }
        Self {
            grid: *g,
            lam_u,
            lam_v,
            dst1_x: Line::Dst1(planner.plan_dst1(nx - 1)),
            dst2_y: Line::Even(planner.plan_dst2(ny)),
            dst1_y: Line::Dst1(planner.plan_dst1(ny - 1)),
            dst2_x: Line::Even(planner.plan_dst2(nx)),
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        z.iter_mut().for_each(|v| *v = 0.0);

        let mut bu: Vec<f64> = (0..ny).flat_map(|j| (1..nx).map(move |i| (i, j))).map(|(i, j)| r[g.iu(i, j)]).collect();
        along(&mut bu, ny, nx - 1, 0, &self.dst1_x, Op::Dst1);
        along(&mut bu, ny, nx - 1, 1, &self.dst2_y, Op::Dst2);
        let su = (2.0 / nx as f64) * (2.0 / ny as f64);
        bu.iter_mut().zip(&self.lam_u).for_each(|(b, l)| *b *= su / l);
        along(&mut bu, ny, nx - 1, 0, &self.dst1_x, Op::Dst1);
        along(&mut bu, ny, nx - 1, 1, &self.dst2_y, Op::Dst3);
        for j in 0..ny {
            for i in 1..nx {
                z[g.iu(i, j)] = bu[j * (nx - 1) + i - 1];
            }
        }

        let mut bv: Vec<f64> = (1..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| r[g.iv(i, j)]).collect();
        along(&mut bv, ny - 1, nx, 1, &self.dst1_y, Op::Dst1);
        along(&mut bv, ny - 1, nx, 0, &self.dst2_x, Op::Dst2);
        let sv = (2.0 / ny as f64) * (2.0 / nx as f64);
        bv.iter_mut().zip(&self.lam_v).for_each(|(b, l)| *b *= sv / l);
        along(&mut bv, ny - 1, nx, 1, &self.dst1_y, Op::Dst1);
        along(&mut bv, ny - 1, nx, 0, &self.dst2_x, Op::Dst3);
        for j in 1..ny {
            for i in 0..nx {
                z[g.iv(i, j)] = bv[(j - 1) * nx + i];
            }
        }
    }
}
