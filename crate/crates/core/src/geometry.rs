//! Periodic fissure/matrix cell decomposition and its `eps^2` scaling onto `Q`.

use crate::dynsys::wrap;
use crate::error::{Error, Result};
use crate::spectral::{flatten, unflatten};
use std::collections::VecDeque;
use std::sync::Arc;

/// Minimum quadrature points per periodic cell per axis.
pub const MIN_POINTS_PER_CELL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    /// Fissure phase `Y_1`.
    Fissure,
    /// Matrix phase `Y_2`.
    Matrix,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::Fissure => 1,
            Phase::Matrix => 2,
        }
    }

    pub fn from_index(m: usize) -> Result<Self> {
        match m {
            1 => Ok(Phase::Fissure),
            2 => Ok(Phase::Matrix),
            _ => Err(Error::Invalid(format!("phase index must be 1 or 2, got {m}"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Phase::Fissure => Phase::Matrix,
            Phase::Matrix => Phase::Fissure,
        }
    }

    /// Zero-based slot for per-phase arrays.
    pub fn slot(self) -> usize {
        self.index() - 1
    }
}

/// Axis-aligned box in `R^N`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Invalid("box corners must have equal positive dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Invalid(format!("degenerate box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        Self { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn len(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.len(a)).product()
    }

    /// Membership in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Midpoint grid with `res` points per axis, axis 0 slowest.
    pub fn midpoints(&self, res: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
        let total = res.pow(self.dim() as u32);
        (0..total).map(move |idx| {
            unflatten(idx, self.dim(), res)
                .into_iter()
                .enumerate()
                .map(|(a, j)| self.lo[a] + (j as f64 + 0.5) * self.len(a) / res as f64)
                .collect()
        })
    }
}

/// Indicator of `Y_1` on a uniform `K^N` raster of the unit cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellDecomposition {
    dim: usize,
    k: usize,
    fissure: Vec<bool>,
}

impl CellDecomposition {
    pub fn from_raster(dim: usize, k: usize, fissure: Vec<bool>) -> Result<Self> {
        if dim == 0 || k == 0 {
            return Err(Error::Invalid("cell raster needs positive dim and K".into()));
        }
        if fissure.len() != k.pow(dim as u32) {
            return Err(Error::DimensionMismatch { expected: k.pow(dim as u32), got: fissure.len() });
        }
        Ok(Self { dim, k, fissure })
    }

    fn generate(dim: usize, k: usize, pred: impl Fn(&[f64]) -> bool) -> Result<Self> {
        if dim == 0 || k == 0 {
            return Err(Error::Invalid("cell raster needs positive dim and K".into()));
        }
        let fissure = (0..k.pow(dim as u32))
            .map(|idx| {
                let c: Vec<f64> = unflatten(idx, dim, k).into_iter().map(|j| (j as f64 + 0.5) / k as f64).collect();
                pred(&c)
            })
            .collect();
        Ok(Self { dim, k, fissure })
    }

    /// Fissure on cells whose number of upper-half coordinates is even
    /// (`[0,1/2)^2 u [1/2,1)^2` in 2D).
    pub fn checkerboard(dim: usize, k: usize) -> Result<Self> {
        if k % 2 != 0 {
            return Err(Error::Invalid(format!("checkerboard needs even K, got {k}")));
        }
        Self::generate(dim, k, |c| c.iter().filter(|&&v| v >= 0.5).count() % 2 == 0)
    }

    /// Fissure where the cell centre satisfies `y_1 < fraction`.
    pub fn stripe(dim: usize, k: usize, fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Invalid(format!("stripe fraction must lie in [0,1], got {fraction}")));
        }
        Self::generate(dim, k, |c| c[0] < fraction)
    }

    /// Matrix inclusion of radius `radius` centred in the cell; fissure outside.
    pub fn inclusion(dim: usize, k: usize, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius < 0.5) {
            return Err(Error::Invalid(format!("inclusion radius must lie in [0, 1/2), got {radius}")));
        }
        Self::generate(dim, k, |c| c.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>().sqrt() > radius)
    }

    pub fn uniform(dim: usize, k: usize, phase: Phase) -> Result<Self> {
        Self::generate(dim, k, |_| phase == Phase::Fissure)
    }

    /// Plain-text raster: `K`, then `K^N` zeros/ones in row-major order.
    pub fn parse_raster(dim: usize, text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let k: usize = tokens
            .next()
            .ok_or(Error::Format("empty raster".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad raster size: {e}")))?;
        let cells = tokens
            .map(|t| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Format(format!("raster entries must be 0 or 1, got {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        Self::from_raster(dim, k, cells)
    }

    pub fn to_raster(&self) -> String {
        let mut s = format!("{}\n", self.k);
        for row in self.fissure.chunks(self.k) {
            let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cell_count(&self) -> usize {
        self.fissure.len()
    }

    pub fn cell_phase(&self, idx: usize) -> Phase {
        if self.fissure[idx] {
            Phase::Fissure
        } else {
            Phase::Matrix
        }
    }

    /// `chi_m` at a raster cell.
    pub fn chi(&self, m: Phase, idx: usize) -> f64 {
        if self.cell_phase(idx) == m {
            1.0
        } else {
            0.0
        }
    }

    /// Phase at a point of the unit cell (reduced mod 1, half-open cells).
    pub fn phase_at(&self, y: &[f64]) -> Phase {
        let multi: Vec<usize> = y.iter().map(|&v| ((wrap(v) * self.k as f64).floor() as usize).min(self.k - 1)).collect();
        self.cell_phase(flatten(&multi, self.k))
    }

    /// `|Y_m|`.
    pub fn volume_fraction(&self, m: Phase) -> f64 {
        let count = self.fissure.iter().filter(|&&f| f == (m == Phase::Fissure)).count();
        count as f64 / self.fissure.len() as f64
    }

    /// Face connectivity of `{chi_1 = 1}` with periodic wrap.
    pub fn is_fissure_connected(&self) -> bool {
        self.is_connected(Phase::Fissure)
    }

    pub fn is_connected(&self, m: Phase) -> bool {
        let want = m == Phase::Fissure;
        let Some(start) = self.fissure.iter().position(|&f| f == want) else {
            return true;
        };
        let mut seen = vec![false; self.fissure.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(idx) = queue.pop_front() {
            let multi = unflatten(idx, self.dim, self.k);
            for a in 0..self.dim {
                for step in [1, self.k - 1] {
                    let mut nb = multi.clone();
                    nb[a] = (nb[a] + step) % self.k;
                    let j = flatten(&nb, self.k);
                    if !seen[j] && self.fissure[j] == want {
                        seen[j] = true;
                        count += 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        count == self.fissure.iter().filter(|&&f| f == want).count()
    }
}

/// The decomposition scaled by `eps^2` onto the macroscopic box `Q`.
#[derive(Debug, Clone)]
pub struct ScaledGeometry {
    eps: f64,
    domain: BoxDomain,
    cells: Arc<CellDecomposition>,
}

impl ScaledGeometry {
    pub fn new(eps: f64, domain: BoxDomain, cells: Arc<CellDecomposition>) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Invalid(format!("eps must lie in (0,1], got {eps}")));
        }
        if domain.dim() != cells.dim() {
            return Err(Error::DimensionMismatch { expected: cells.dim(), got: domain.dim() });
        }
        Ok(Self { eps, domain, cells })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn cells(&self) -> &CellDecomposition {
        &self.cells
    }

    pub fn cells_arc(&self) -> Arc<CellDecomposition> {
        Arc::clone(&self.cells)
    }

    /// Fast-scale coordinate `x / eps^2 mod 1`.
    pub fn fast(&self, x: &[f64]) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        x.iter().map(|&v| wrap(v / e2)).collect()
    }

    /// Phase `m` with `chi_m(x / eps^2) = 1`.
    pub fn classify(&self, x: &[f64]) -> Result<Phase> {
        if !self.domain.contains(x) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok(self.cells.phase_at(&self.fast(x)))
    }

    /// Points per `eps^2` cell per axis for a midpoint grid with `res` points per axis.
    pub fn points_per_cell(&self, res: usize) -> f64 {
        let e2 = self.eps * self.eps;
        (0..self.domain.dim()).map(|a| res as f64 * e2 / self.domain.len(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn check_resolved(&self, res: usize) -> Result<()> {
        let points = self.points_per_cell(res);
        if points < MIN_POINTS_PER_CELL as f64 {
            return Err(Error::ScaleUnresolved { points, required: MIN_POINTS_PER_CELL });
        }
        Ok(())
    }

    /// `|Q_m^eps| / |Q|` by midpoint counting.
    pub fn phase_fraction_in_q(&self, m: Phase, res: usize) -> Result<f64> {
        self.check_resolved(res)?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for x in self.domain.midpoints(res) {
            total += 1;
            if self.classify(&x)? == m {
                hits += 1;
            }
        }
        Ok(hits as f64 / total as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(eps: f64, cells: CellDecomposition) -> ScaledGeometry {
        ScaledGeometry::new(eps, BoxDomain::unit(2), Arc::new(cells)).unwrap()
    }

    #[test]
    fn classify_examples() {
        let g = geo(0.5, CellDecomposition::checkerboard(2, 2).unwrap());
        let e2 = 0.25;
        assert_eq!(g.classify(&[0.1 * e2, 0.1 * e2]).unwrap(), Phase::Fissure);
        assert_eq!(g.classify(&[1.1 * e2, 0.1 * e2]).unwrap(), Phase::Fissure);
        assert_eq!(g.classify(&[0.6 * e2, 0.1 * e2]).unwrap(), Phase::Matrix);
        let s = geo(1.0 / 3.0, CellDecomposition::stripe(2, 10, 0.3).unwrap());
        let e2 = 1.0 / 9.0;
        assert_eq!(s.classify(&[0.305 * e2, 0.7 * e2]).unwrap(), Phase::Matrix);
        assert_eq!(s.classify(&[0.295 * e2, 0.7 * e2]).unwrap(), Phase::Fissure);
        assert!(matches!(s.classify(&[1.5, 0.2]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn fractions() {
        assert_eq!(CellDecomposition::checkerboard(2, 4).unwrap().volume_fraction(Phase::Fissure), 0.5);
        assert_eq!(CellDecomposition::stripe(2, 10, 0.3).unwrap().volume_fraction(Phase::Fissure), 0.3);
        assert_eq!(CellDecomposition::uniform(2, 3, Phase::Fissure).unwrap().volume_fraction(Phase::Fissure), 1.0);
        let ck = geo((0.125f64).sqrt(), CellDecomposition::checkerboard(2, 2).unwrap());
        assert_eq!(ck.phase_fraction_in_q(Phase::Fissure, 256).unwrap(), 0.5);
        let st = geo((0.1f64).sqrt(), CellDecomposition::stripe(2, 10, 0.3).unwrap());
        assert_eq!(st.phase_fraction_in_q(Phase::Fissure, 400).unwrap(), 0.3);
        let all = geo(0.5, CellDecomposition::uniform(2, 4, Phase::Fissure).unwrap());
        assert_eq!(all.phase_fraction_in_q(Phase::Fissure, 64).unwrap(), 1.0);
        assert!(matches!(all.phase_fraction_in_q(Phase::Fissure, 8), Err(Error::ScaleUnresolved { .. })));
    }

    #[test]
    fn connectivity() {
        assert!(!CellDecomposition::checkerboard(2, 2).unwrap().is_fissure_connected());
        assert!(CellDecomposition::stripe(2, 10, 0.3).unwrap().is_fissure_connected());
        assert!(CellDecomposition::inclusion(2, 16, 0.3).unwrap().is_fissure_connected());
    }

    #[test]
    fn raster_roundtrip() {
        let c = CellDecomposition::inclusion(2, 8, 0.25).unwrap();
        let back = CellDecomposition::parse_raster(2, &c.to_raster()).unwrap();
        assert_eq!(c, back);
        assert!(CellDecomposition::parse_raster(2, "2\n0 1 2 0").is_err());
        assert!(CellDecomposition::parse_raster(2, "2\n0 1 1").is_err());
    }
}
