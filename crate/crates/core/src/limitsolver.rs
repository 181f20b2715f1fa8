//! Homogenized limit: effective coefficients, corrector cell problems, the
//! macroscopic solver and the comparison ladder against fine-scale runs.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{voigt_from_columns, CellSolution, OmegaCell, PeriodicCell, UNIT_STRAINS};
use crate::dynsys::{OmegaSample, TorusDynamics};
use crate::epsolver::{Coefficients, DensityFn, ElasticityTensor, EpsProblem, FluidState, ForceFn, InitialVelocity, LoadFn, StepOptions, Stepper, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{CellDecomposition, Phase};
use crate::mac::{MacGrid, Viscous};
use crate::spectral::pairwise_sum;
use crate::tensor::{Sym2, Tensor4, Voigt};

fn combine(frac: &[f64; 2], a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else {
        frac[0] * a + frac[1] * b
    }
}

/// `rho = |Y1| rho1 + |Y2| rho2`, `f = |Y1| f1 + |Y2| f2`, `a(y) = chi1(y) a1 + chi2(y) a2`.
#[derive(Clone)]
pub struct EffectiveCoefficients {
    cells: Arc<CellDecomposition>,
    fractions: [f64; 2],
    density: [DensityFn; 2],
    forcing: [ForceFn; 2],
    tensor: ElasticityTensor,
}

impl EffectiveCoefficients {
    pub fn new(cells: Arc<CellDecomposition>, density: [DensityFn; 2], forcing: [ForceFn; 2], tensor: ElasticityTensor) -> Self {
        let fractions = [cells.volume_fraction(Phase::Fissure), cells.volume_fraction(Phase::Matrix)];
        Self { cells, fractions, density, forcing, tensor }
    }

    pub fn from_problem(p: &EpsProblem) -> Self {
        Self::new(p.geometry.cells_arc(), p.density.clone(), p.forcing.clone(), p.tensor.clone())
    }

    pub fn fractions(&self) -> [f64; 2] {
        self.fractions
    }

    pub fn cells(&self) -> &CellDecomposition {
        &self.cells
    }

    pub fn tensor_field(&self) -> &ElasticityTensor {
        &self.tensor
    }

    pub fn rho(&self, x: &[f64], w: &[f64]) -> f64 {
        combine(&self.fractions, (self.density[0])(x, w), (self.density[1])(x, w))
    }

    pub fn force(&self, t: f64, x: &[f64], w: &[f64]) -> [f64; 2] {
        let a = (self.forcing[0])(t, x, w);
        let b = (self.forcing[1])(t, x, w);
        [combine(&self.fractions, a[0], b[0]), combine(&self.fractions, a[1], b[1])]
    }

    pub fn tensor(&self, x: &[f64], w: &[f64], y: &[f64]) -> Tensor4 {
        self.tensor.eval(self.cells.phase_at(y), x, w, y)
    }

    pub fn voigt(&self, x: &[f64], w: &[f64], y: &[f64]) -> Voigt {
        self.tensor.voigt(self.cells.phase_at(y), x, w, y)
    }

    /// `<rho>_mu` over the sample grid.
    pub fn mean_rho(&self, x: &[f64], dynamics: &TorusDynamics) -> f64 {
        let v: Vec<f64> = (0..dynamics.grid_len()).map(|p| self.rho(x, &dynamics.grid_point(p))).collect();
        pairwise_sum(&v) / v.len() as f64
    }

    pub fn mean_force(&self, t: f64, x: &[f64], points: &[Vec<f64>]) -> [f64; 2] {
        let (a, b): (Vec<f64>, Vec<f64>) = points.iter().map(|w| {
            let f = self.force(t, x, w);
            (f[0], f[1])
        }).unzip();
        let n = points.len() as f64;
        [pairwise_sum(&a) / n, pairwise_sum(&b) / n]
    }
}

/// Resolutions of the two cell problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrids {
    /// Cells per axis on `Y`; a multiple of the raster size.
    pub y_res: usize,
    /// Sample grid on the torus.
    pub omega: TorusDynamics,
}

/// Unit-strain corrector solutions for one slow-variable key.
#[derive(Debug)]
pub struct UnitCorrectors {
    /// Homogenized energy matrix.
    pub a_hom: Voigt,
    /// Averaged stresses for the three unit strains.
    pub columns: [Sym2; 3],
    /// Periodic-cell homogenized matrix at every sample point.
    pub a_per: Vec<Voigt>,
    /// Torus correctors for the unit strains.
    pub u1: [Vec<f64>; 3],
    /// Periodic correctors for the unit strains at every sample point.
    pub chi: Vec<Arc<[CellSolution; 3]>>,
    pub y_cells: Vec<Arc<PeriodicCell>>,
    pub omega_cell: OmegaCell,
}

/// Macro strain applied to the correctors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorSolution {
    /// `u1` on the sample grid, components stacked.
    pub u1: Vec<f64>,
    /// `u2` on the periodic grid, one per sample point.
    pub u2: Vec<Vec<f64>>,
    /// Homogenized stress `(sigma11, sigma22, sigma12)`.
    pub stress: Sym2,
}

/// Effective tensor table row for one macro cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub cell: usize,
    pub x: [f64; 2],
    /// Stress `(sigma11, sigma22, sigma12)` for unit strains `e11`, `e22`, `e12`.
    pub unit_stress: [Sym2; 3],
    pub voigt: [f64; 6],
}

type Key = [u64; 2];

pub struct LimitSolver {
    eff: EffectiveCoefficients,
    grids: CellGrids,
    initial: InitialVelocity,
    horizon: f64,
    convection: bool,
    cache: RwLock<HashMap<Key, Arc<UnitCorrectors>>>,
}

impl LimitSolver {
    pub fn new(problem: &EpsProblem, grids: CellGrids) -> Result<Self> {
        problem.validate()?;
        let k = problem.geometry.cells().k();
        if grids.y_res % k != 0 {
            return Err(Error::Invalid(format!("y grid {} is not a multiple of the raster size {k}", grids.y_res)));
        }
        if grids.omega.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: grids.omega.dim() });
        }
        Ok(Self {
            eff: EffectiveCoefficients::from_problem(problem),
            grids,
            initial: problem.initial.clone(),
            horizon: problem.horizon,
            convection: problem.convection,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn effective(&self) -> &EffectiveCoefficients {
        &self.eff
    }

    pub fn grids(&self) -> &CellGrids {
        &self.grids
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cached_keys(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    fn key(&self, x: &[f64]) -> Key {
        let t = &self.eff.tensor;
        [t.phases[0].slow_factor(x, &[0.0, 0.0]).to_bits(), t.phases[1].slow_factor(x, &[0.0, 0.0]).to_bits()]
    }

    /// Unit-strain correctors at macro point `x`, computed once per key.
    pub fn correctors(&self, x: &[f64]) -> Result<Arc<UnitCorrectors>> {
        let key = self.key(x);
        if let Some(c) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(c));
        }
        let built = Arc::new(self.build(x)?);
        let mut w = self.cache.write().expect("cache lock");
        Ok(Arc::clone(w.entry(key).or_insert(built)))
    }

    fn build(&self, x: &[f64]) -> Result<UnitCorrectors> {
        let ky = self.grids.y_res;
        let dynamics = self.grids.omega;
        let t = &self.eff.tensor;
        let ys: Vec<[f64; 2]> = (0..ky * ky).map(|c| [((c % ky) as f64 + 0.5) / ky as f64, ((c / ky) as f64 + 0.5) / ky as f64]).collect();
        let phases: Vec<Phase> = ys.iter().map(|y| self.eff.cells.phase_at(y)).collect();
        let fast: Vec<Voigt> = ys.iter().zip(&phases).map(|(y, &m)| t.phase(m).base.to_voigt().scaled(t.phase(m).fast_factor(y))).collect();

        let points: Vec<Vec<f64>> = (0..dynamics.grid_len()).map(|p| dynamics.grid_point(p)).collect();
        let slow: Vec<[f64; 2]> = points.iter().map(|w| [t.phases[0].slow_factor(x, w), t.phases[1].slow_factor(x, w)]).collect();
        let mut distinct: Vec<[f64; 2]> = Vec::new();
        let mut index = HashMap::new();
        for s in &slow {
            index.entry([s[0].to_bits(), s[1].to_bits()]).or_insert_with(|| {
                distinct.push(*s);
                distinct.len() - 1
            });
        }
        let solved: Vec<(Arc<PeriodicCell>, Arc<[CellSolution; 3]>, Voigt)> = distinct
            .par_iter()
            .map(|s| {
                let w: Vec<Voigt> = fast.iter().zip(&phases).map(|(v, m)| v.scaled(s[m.slot()])).collect();
                let cell = PeriodicCell::new(ky, w)?;
                let sols = [cell.solve(&UNIT_STRAINS[0])?, cell.solve(&UNIT_STRAINS[1])?, cell.solve(&UNIT_STRAINS[2])?];
                let a = voigt_from_columns(&[sols[0].stress, sols[1].stress, sols[2].stress]);
                Ok((Arc::new(cell), Arc::new(sols), a))
            })
            .collect::<Result<_>>()?;
        let mut a_per = Vec::with_capacity(points.len());
        let mut chi = Vec::with_capacity(points.len());
        let mut y_cells = Vec::with_capacity(points.len());
        for s in &slow {
            let i = index[&[s[0].to_bits(), s[1].to_bits()]];
            y_cells.push(Arc::clone(&solved[i].0));
            chi.push(Arc::clone(&solved[i].1));
            a_per.push(solved[i].2);
        }
        let omega_cell = OmegaCell::new(dynamics.resolution(), a_per.clone())?;
        let s = [omega_cell.solve(&UNIT_STRAINS[0])?, omega_cell.solve(&UNIT_STRAINS[1])?, omega_cell.solve(&UNIT_STRAINS[2])?];
        let columns = [s[0].stress, s[1].stress, s[2].stress];
        let [a, b, c] = s;
        Ok(UnitCorrectors { a_hom: voigt_from_columns(&columns), columns, a_per, u1: [a.field, b.field, c.field], chi, y_cells, omega_cell })
    }

    /// Correctors and homogenized stress for macro strain `e` at `x`.
    pub fn corrector_solve(&self, x: &[f64], e: &Sym2) -> Result<CorrectorSolution> {
        let c = self.correctors(x)?;
        Ok(c.apply(e))
    }

    /// Homogenized matrix per macro cell.
    pub fn homogenized(&self, grid: &MacGrid) -> Result<Vec<Voigt>> {
        let xs: Vec<[f64; 2]> = (0..grid.ncell()).map(|c| grid.cell_pos(c % grid.nx, c / grid.nx)).collect();
        let mut firsts: HashMap<Key, [f64; 2]> = HashMap::new();
        for x in &xs {
            firsts.entry(self.key(x)).or_insert(*x);
        }
        let todo: Vec<[f64; 2]> = firsts.into_values().collect();
        todo.par_iter().map(|x| self.correctors(x).map(|_| ())).collect::<Result<Vec<()>>>()?;
        xs.iter().map(|x| self.correctors(x).map(|c| c.a_hom)).collect()
    }

    pub fn effective_table(&self, grid: &MacGrid) -> Result<Vec<TableRow>> {
        let a = self.homogenized(grid)?;
        Ok(a
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let unit = UNIT_STRAINS.map(|e| to_stress(&v.apply(&e)));
                TableRow { cell: c, x: grid.cell_pos(c % grid.nx, c / grid.nx), unit_stress: unit, voigt: v.0 }
            })
            .collect())
    }

    /// Discrete macroscopic coefficients on `grid`.
    pub fn coefficients(&self, grid: &MacGrid) -> Result<Coefficients> {
        let viscous = Viscous::new(*grid, self.homogenized(grid)?)?;
        let dynamics = self.grids.omega;
        let mass: Vec<f64> = (0..grid.nvel()).map(|k| self.eff.mean_rho(&grid.face(k).0, &dynamics) * grid.cell_area()).collect();
        let points: Arc<Vec<Vec<f64>>> = Arc::new((0..dynamics.grid_len()).map(|p| dynamics.grid_point(p)).collect());
        let eff = self.eff.clone();
        let g = *grid;
        let pts = Arc::clone(&points);
        let load: LoadFn = Arc::new(move |t, out: &mut [f64]| {
            for (k, o) in out.iter_mut().enumerate() {
                if g.is_wall(k) {
                    *o = 0.0;
                    continue;
                }
                let (x, comp) = g.face(k);
                *o = eff.mean_force(t, &x, &pts)[comp] * g.cell_area();
            }
        });
        let initial = match &self.initial {
            InitialVelocity::Zero => vec![0.0; grid.nvel()],
            InitialVelocity::Stream(psi) => grid.from_stream(|x| {
                let v: Vec<f64> = points.iter().map(|w| psi(&x, w)).collect();
                pairwise_sum(&v) / v.len() as f64
            }),
        };
        Coefficients::new(*grid, viscous, mass, load, initial, self.convection, None, None)
    }

    pub fn stepper(&self, grid: &MacGrid, opts: StepOptions) -> Result<Stepper> {
        Stepper::new(self.coefficients(grid)?, opts)
    }

    /// Time-step the macroscopic equation to the horizon.
    pub fn solve(&self, grid: &MacGrid, opts: StepOptions, observe: impl FnMut(&FluidState)) -> Result<Trajectory> {
        self.stepper(grid, opts)?.run(self.horizon, observe)
    }

    /// Two-scale state at macro cell `cell` for the given macroscopic velocity.
    pub fn two_scale_state(&self, grid: &MacGrid, u: &[f64], cell: usize) -> Result<CorrectorSolution> {
        let strain = crate::mac::cell_strain(grid, u, crate::mac::WallRule::NoSlip);
        self.corrector_solve(&grid.cell_pos(cell % grid.nx, cell / grid.nx), &strain[cell])
    }
}

fn to_stress(ws: &Sym2) -> Sym2 {
    [ws[0], ws[1], 0.5 * ws[2]]
}

impl UnitCorrectors {
    pub fn apply(&self, e: &Sym2) -> CorrectorSolution {
        let n1 = self.u1[0].len();
        let u1: Vec<f64> = (0..n1).map(|i| (0..3).map(|j| e[j] * self.u1[j][i]).sum()).collect();
        let s1 = self.omega_cell.strains(&u1);
        let u2 = self
            .chi
            .iter()
            .zip(&s1)
            .map(|(chi, s)| {
                let total = [e[0] + s[0], e[1] + s[1], e[2] + s[2]];
                let n2 = chi[0].field.len();
                (0..n2).map(|i| (0..3).map(|j| total[j] * chi[j].field[i]).sum()).collect()
            })
            .collect();
        CorrectorSolution { u1, u2, stress: to_stress(&self.a_hom.apply(e)) }
    }

    /// `<(E + e_w(u1) + e_y(u2)) : a : (...)>` over the sample and periodic grids.
    pub fn energy(&self, e: &Sym2, u1: &[f64], u2: &[Vec<f64>]) -> f64 {
        let s1 = self.omega_cell.strains(u1);
        let terms: Vec<f64> = self
            .y_cells
            .iter()
            .zip(&s1)
            .zip(u2)
            .map(|((cell, s), u)| cell.energy(u, &[e[0] + s[0], e[1] + s[1], e[2] + s[2]]))
            .collect();
        pairwise_sum(&terms) / terms.len() as f64
    }

    /// `<a>` quadratic form, the arithmetic-mean bound.
    pub fn voigt_bound(&self, e: &Sym2) -> f64 {
        let terms: Vec<f64> = self.y_cells.iter().map(|c| c.energy(&vec![0.0; c.len()], e)).collect();
        pairwise_sum(&terms) / terms.len() as f64
    }
}

/// Cell-centred velocities `(u..., v...)` from face values.
pub fn cell_velocity(g: &MacGrid, u: &[f64]) -> Vec<f64> {
    let n = g.ncell();
    let mut out = vec![0.0; 2 * n];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.ic(i, j);
            out[c] = 0.5 * (u[g.iu(i, j)] + u[g.iu(i + 1, j)]);
            out[n + c] = 0.5 * (u[g.iv(i, j)] + u[g.iv(i, j + 1)]);
        }
    }
    out
}

/// 1-D overlap fractions: `w[c][f]` = share of coarse cell `c` covered by fine cell `f`.
fn overlap(fine: usize, coarse: usize) -> Vec<Vec<(usize, f64)>> {
    (0..coarse)
        .map(|c| {
            let (a, b) = (c as f64 / coarse as f64, (c + 1) as f64 / coarse as f64);
            let lo = ((a * fine as f64).floor() as usize).min(fine - 1);
            let hi = ((b * fine as f64).ceil() as usize).min(fine);
            (lo..hi)
                .filter_map(|f| {
                    let (fa, fb) = (f as f64 / fine as f64, (f + 1) as f64 / fine as f64);
                    let len = (fb.min(b) - fa.max(a)).max(0.0);
                    (len > 0.0).then_some((f, len * coarse as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted restriction of cell-centred values between grids on the same box.
pub fn restrict(fine: &MacGrid, values: &[f64], coarse: &MacGrid) -> Result<Vec<f64>> {
    let nf = fine.ncell();
    if values.len() % nf != 0 {
        return Err(Error::DimensionMismatch { expected: nf, got: values.len() });
    }
    let comps = values.len() / nf;
    let wx = overlap(fine.nx, coarse.nx);
    let wy = overlap(fine.ny, coarse.ny);
    let nc = coarse.ncell();
    let mut out = vec![0.0; comps * nc];
    for c in 0..comps {
        for (jc, ry) in wy.iter().enumerate() {
            for (ic, rx) in wx.iter().enumerate() {
                let mut acc = 0.0;
                for &(jf, a) in ry {
                    for &(i_f, b) in rx {
                        acc += a * b * values[c * nf + jf * fine.nx + i_f];
                    }
                }
                out[c * nc + jc * coarse.nx + ic] = acc;
            }
        }
    }
    Ok(out)
}

/// Cell-centred velocity snapshots on a macro grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSeries {
    pub grid: MacGrid,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl MacroSeries {
    pub fn new(grid: MacGrid) -> Self {
        Self { grid, times: Vec::new(), fields: Vec::new() }
    }

    /// Record a state living on `source`.
    pub fn record(&mut self, source: &MacGrid, state: &FluidState) -> Result<()> {
        let cells = cell_velocity(source, &state.u);
        let field = if source == &self.grid { cells } else { restrict(source, &cells, &self.grid)? };
        self.times.push(state.t);
        self.fields.push(field);
        Ok(())
    }

    fn check_times(&self, other: &Self) -> Result<()> {
        let ok = self.grid == other.grid
            && self.times.len() == other.times.len()
            && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
        if ok {
            Ok(())
        } else {
            Err(Error::TimeGrid("snapshot times or grids differ".into()))
        }
    }

    pub fn mean(series: &[MacroSeries]) -> Result<MacroSeries> {
        let first = series.first().ok_or(Error::EmptySample)?;
        for s in series {
            first.check_times(s)?;
        }
        let n = series.len() as f64;
        let fields = (0..first.times.len())
            .map(|t| (0..first.fields[t].len()).map(|i| series.iter().map(|s| s.fields[t][i]).sum::<f64>() / n).collect())
            .collect();
        Ok(MacroSeries { grid: first.grid, times: first.times.clone(), fields })
    }

    /// `||a - b||_{L^2(0,T; L^2(Q))}`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_times(other)?;
        let area = self.grid.cell_area();
        let sq: Vec<f64> = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| area * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .collect();
        Ok(crate::testfn::trapezoid(&self.times, &sq).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub eps: f64,
    pub distance: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ladder {
    pub rows: Vec<LadderRow>,
    pub median_ratio: Option<f64>,
    /// Non-increasing in median over the ladder.
    pub trend_ok: bool,
    /// `d(smallest eps) / d(largest eps)`.
    pub reduction: Option<f64>,
}

impl Ladder {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,distance,samples\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{}\n", r.eps, r.distance, r.samples));
        }
        s
    }
}

/// `d(eps) = || <u^eps>_omega - u ||` for each rung, sorted by decreasing eps.
pub fn compare_to_eps(limit: &MacroSeries, runs: &[(f64, Vec<MacroSeries>)]) -> Result<Ladder> {
    let mut rows = Vec::with_capacity(runs.len());
    for (eps, ensemble) in runs {
        let mean = MacroSeries::mean(ensemble)?;
        rows.push(LadderRow { eps: *eps, distance: mean.distance(limit)?, samples: ensemble.len() });
    }
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let scale = limit.fields.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let floor = 1e-14 * scale;
    let d: Vec<f64> = rows.iter().map(|r| r.distance.max(floor)).collect();
    let mut ratios: Vec<f64> = d.windows(2).map(|w| w[1] / w[0]).collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let median_ratio = (!ratios.is_empty()).then(|| {
        let n = ratios.len();
        if n % 2 == 1 {
            ratios[n / 2]
        } else {
            0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
        }
    });
    let all_floor = rows.iter().all(|r| r.distance <= floor);
    let trend_ok = all_floor || median_ratio.is_none_or(|m| m <= 1.0);
    let reduction = (rows.len() >= 2 && rows[0].distance > 0.0).then(|| rows[rows.len() - 1].distance / rows[0].distance);
    Ok(Ladder { rows, median_ratio, trend_ok, reduction })
}

/// Run one fine-scale realization and record it on the macro grid.
pub fn eps_series(problem: &EpsProblem, fine: &MacGrid, coarse: &MacGrid, w: &OmegaSample, opts: StepOptions) -> Result<(MacroSeries, Trajectory)> {
    let stepper = Stepper::new(problem.realize(fine, w)?, opts)?;
    let mut series = MacroSeries::new(*coarse);
    let mut err = None;
    let traj = stepper.run(problem.horizon, |s| {
        if let Err(e) = series.record(fine, s) {
            err.get_or_insert(e);
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok((series, traj)),
    }
}

/// Macro solution recorded on its own grid.
pub fn limit_series(solver: &LimitSolver, grid: &MacGrid, opts: StepOptions) -> Result<(MacroSeries, Trajectory)> {
    let stepper = solver.stepper(grid, opts)?;
    let mut series = MacroSeries::new(*grid);
    let traj = stepper.run(solver.horizon(), |s| {
        series.record(grid, s).expect("same grid");
    })?;
    Ok((series, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsolver::{const_density, const_force, Modulation, PhaseTensor};
    use crate::geometry::{BoxDomain, ScaledGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(cells: CellDecomposition, soft: PhaseTensor, stiff: PhaseTensor, force: [[f64; 2]; 2]) -> EpsProblem {
        let geometry = ScaledGeometry::new(0.5, BoxDomain::unit(2), Arc::new(cells)).unwrap();
        EpsProblem {
            geometry,
            dynamics: TorusDynamics::new(2, 8).unwrap(),
            density: [const_density(1.0), const_density(1.0)],
            density_floor: 0.5,
            forcing: [const_force(force[0]), const_force(force[1])],
            tensor: ElasticityTensor::new(soft, stiff).unwrap(),
            initial: InitialVelocity::Zero,
            horizon: 0.1,
            convection: false,
        }
    }

    fn iso(mu: f64) -> PhaseTensor {
        PhaseTensor::constant(Tensor4::isotropic(0.0, mu))
    }

    fn grids(y_res: usize) -> CellGrids {
        CellGrids { y_res, omega: TorusDynamics::new(2, 8).unwrap() }
    }

    #[test]
    fn effective_density_and_force_are_weighted_means() {
        let board = Arc::new(CellDecomposition::checkerboard(2, 2).unwrap());
        let t = ElasticityTensor::single(iso(1.0)).unwrap();
        let eff = EffectiveCoefficients::new(board, [const_density(2.0), const_density(4.0)], [const_force([0.0; 2]), const_force([0.0; 2])], t.clone());
        assert_eq!(eff.rho(&[0.3, 0.4], &[0.1, 0.9]), 3.0);

        let stripe = Arc::new(CellDecomposition::stripe(2, 10, 0.3).unwrap());
        let eff = EffectiveCoefficients::new(stripe, [const_density(1.0), const_density(1.0)], [const_force([1.0, 0.0]), const_force([0.0, 1.0])], t);
        assert_eq!(eff.fractions(), [0.3, 0.7]);
        assert_eq!(eff.force(0.0, &[0.5, 0.5], &[0.2, 0.2]), [0.3, 0.7]);
        assert_eq!(eff.rho(&[0.1, 0.1], &[0.0, 0.0]), 1.0);
        assert_eq!(eff.mean_rho(&[0.1, 0.1], &TorusDynamics::new(2, 4).unwrap()), 1.0);
    }

    #[test]
    fn constant_tensor_has_vanishing_correctors() {
        let p = problem(CellDecomposition::stripe(2, 4, 0.5).unwrap(), iso(1.5), iso(1.5), [[0.0; 2]; 2]);
        let s = LimitSolver::new(&p, grids(8)).unwrap();
        let e = [0.4, -0.1, 0.3];
        let c = s.corrector_solve(&[0.5, 0.5], &e).unwrap();
        assert!(c.u1.iter().all(|v| v.abs() < 1e-13));
        assert!(c.u2.iter().flatten().all(|v| v.abs() < 1e-13));
        let direct = Tensor4::isotropic(0.0, 1.5).to_voigt().apply(&e);
        let expect = [direct[0], direct[1], 0.5 * direct[2]];
        assert!(c.stress.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));

        let zero = s.corrector_solve(&[0.5, 0.5], &[0.0; 3]).unwrap();
        assert!(zero.u1.iter().chain(zero.u2.iter().flatten()).all(|v| *v == 0.0));
        assert_eq!(zero.stress, [0.0; 3]);
    }

    #[test]
    fn omega_independent_tensor_reduces_to_the_periodic_cell() {
        let p = problem(CellDecomposition::stripe(2, 4, 0.5).unwrap(), iso(1.0), iso(3.0), [[0.0; 2]; 2]);
        let s = LimitSolver::new(&p, grids(8)).unwrap();
        let w: Vec<Voigt> = (0..64).map(|c| Tensor4::isotropic(0.0, if (c % 8) < 4 { 1.0 } else { 3.0 }).to_voigt()).collect();
        let cell = PeriodicCell::new(8, w).unwrap();
        let e = [0.2, 0.1, -0.4];
        let c = s.corrector_solve(&[0.3, 0.6], &e).unwrap();
        // The periodic cell reports (sigma11, sigma22, 2 sigma12).
        let ws = cell.solve(&e).unwrap().stress;
        let oracle = [ws[0], ws[1], 0.5 * ws[2]];
        assert!(c.u1.iter().all(|v| v.abs() < 1e-12));
        let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(c.stress.iter().zip(&oracle).all(|(a, b)| (a - b).abs() <= 1e-9 * scale), "{:?} {oracle:?}", c.stress);
        assert_eq!(s.cached_keys(), 1);
    }

    #[test]
    fn correctors_minimize_and_respect_the_voigt_bound() {
        let stiff = iso(4.0).with_omega(Modulation { amplitude: 0.4, freq: vec![1, 1] });
        let p = problem(CellDecomposition::stripe(2, 4, 0.5).unwrap(), iso(1.0), stiff, [[0.0; 2]; 2]);
        let s = LimitSolver::new(&p, grids(8)).unwrap();
        let x = [0.5, 0.5];
        let c = s.correctors(&x).unwrap();
        let e = [0.3, -0.2, 0.5];
        let sol = c.apply(&e);
        let e0 = c.energy(&e, &sol.u1, &sol.u2);
        assert!(e0 <= c.voigt_bound(&e) * (1.0 + 1e-12));
        assert!(sol.u1.iter().any(|v| v.abs() > 1e-8), "modulation should excite the torus corrector");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let du1 = c.omega_cell.project(&(0..sol.u1.len()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let du2: Vec<Vec<f64>> = c.y_cells.iter().map(|cell| cell.project(&(0..cell.len()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())).collect();
            for t in [1e-2, -1e-2] {
                let u1: Vec<f64> = sol.u1.iter().zip(&du1).map(|(a, b)| a + t * b).collect();
                let u2: Vec<Vec<f64>> = sol.u2.iter().zip(&du2).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + t * q).collect()).collect();
                let e1 = c.energy(&e, &u1, &u2);
                assert!(e1 >= e0 * (1.0 - 1e-12), "{e1} < {e0}");
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let p = problem(CellDecomposition::stripe(2, 4, 0.5).unwrap(), iso(1.0), iso(2.0), [[0.0; 2]; 2]);
        let s = LimitSolver::new(&p, grids(8)).unwrap();
        let g = MacGrid::unit(8);
        let (series, traj) = limit_series(&s, &g, StepOptions::new(0.02)).unwrap();
        assert!(series.fields.iter().flatten().all(|v| *v == 0.0));
        assert!(traj.energy.rows.iter().all(|r| r.kinetic == 0.0));
    }

    #[test]
    fn y_grid_must_refine_the_raster() {
        let p = problem(CellDecomposition::stripe(2, 4, 0.5).unwrap(), iso(1.0), iso(2.0), [[0.0; 2]; 2]);
        assert!(matches!(LimitSolver::new(&p, grids(6)), Err(Error::Invalid(_))));
    }

    #[test]
    fn restriction_preserves_averages() {
        let fine = MacGrid::unit(8);
        let coarse = MacGrid::unit(4);
        let vals: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let out = restrict(&fine, &vals, &coarse).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(out[0], (0.0 + 1.0 + 8.0 + 9.0) / 4.0);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&out[..16]) - mean(&vals[..64])).abs() < 1e-12);
        let odd = restrict(&MacGrid::unit(6), &vec![2.5; 72], &coarse).unwrap();
        assert!(odd.iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert!(restrict(&fine, &vals[..100], &coarse).is_err());
    }

    fn series(grid: MacGrid, times: &[f64], value: f64) -> MacroSeries {
        MacroSeries { grid, times: times.to_vec(), fields: times.iter().map(|_| vec![value; 2 * grid.ncell()]).collect() }
    }

    #[test]
    fn ladder_of_zero_fields_is_zero() {
        let g = MacGrid::unit(4);
        let t = [0.0, 0.5, 1.0];
        let lim = series(g, &t, 0.0);
        let runs = vec![(0.5, vec![series(g, &t, 0.0)]), (0.25, vec![series(g, &t, 0.0), series(g, &t, 0.0)])];
        let l = compare_to_eps(&lim, &runs).unwrap();
        assert!(l.rows.iter().all(|r| r.distance == 0.0));
        assert!(l.trend_ok);
    }

    #[test]
    fn ladder_trend_and_reduction() {
        let g = MacGrid::unit(4);
        let t = [0.0, 1.0];
        let lim = series(g, &t, 0.0);
        // Ensemble means of 3, 2, 1 against zero: d = |c| on a unit box over unit time.
        let runs = vec![
            (0.25, vec![series(g, &t, 1.0), series(g, &t, 3.0)]),
            (1.0 / 6.0, vec![series(g, &t, 1.0)]),
            (1.0 / 3.0, vec![series(g, &t, 3.0)]),
        ];
        let l = compare_to_eps(&lim, &runs).unwrap();
        let d: Vec<f64> = l.rows.iter().map(|r| r.distance).collect();
        let expect = [3.0 * 2f64.sqrt(), 2.0 * 2f64.sqrt(), 2f64.sqrt()];
        assert!(d.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12), "{d:?}");
        assert_eq!(l.rows[1].samples, 2);
        assert!(l.trend_ok);
        assert!((l.reduction.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(l.to_csv().starts_with("eps,distance,samples\n"));

        let rising = vec![(0.5, vec![series(g, &t, 1.0)]), (0.25, vec![series(g, &t, 2.0)])];
        assert!(!compare_to_eps(&lim, &rising).unwrap().trend_ok);
    }

    #[test]
    fn mismatched_times_are_rejected() {
        let g = MacGrid::unit(4);
        let lim = series(g, &[0.0, 1.0], 0.0);
        let runs = vec![(0.5, vec![series(g, &[0.0, 0.5], 0.0)])];
        assert!(matches!(compare_to_eps(&lim, &runs), Err(Error::TimeGrid(_))));
        assert!(matches!(compare_to_eps(&lim, &[(0.5, vec![])]), Err(Error::EmptySample)));
    }
}
