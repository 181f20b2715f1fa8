//! Two-phase incompressible flow with an anisotropic viscous tensor on the
//! unit square, discretized on a MAC grid with an energy ledger.

use std::cell::RefCell;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{wrap, OmegaSample, TorusDynamics};
use crate::error::{Error, Result};
use crate::geometry::{Phase, ScaledGeometry};
use crate::linalg::{bicgstab, dot, pcg, SolveStats, Tolerance};
use crate::mac::{self, MacGrid, PressurePrecond, VelocityPrecond, Viscous, WallRule};
use crate::tensor::{Sym2, Tensor4, Voigt};

/// Multiplicative factor `1 + amplitude * cos(2 pi k . z)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Modulation {
    pub amplitude: f64,
    pub freq: Vec<i64>,
}

impl Modulation {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let phase: f64 = self.freq.iter().zip(z).map(|(k, v)| *k as f64 * v).sum();
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * phase).cos()
    }
}

/// Tensor of one phase: a constant base scaled by optional modulations in
/// the slow variable, the realized sample and the fast variable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhaseTensor {
    pub base: Tensor4,
    pub x: Option<Modulation>,
    pub omega: Option<Modulation>,
    pub y: Option<Modulation>,
}

impl PhaseTensor {
    pub fn constant(base: Tensor4) -> Self {
        Self { base, x: None, omega: None, y: None }
    }

    pub fn with_omega(mut self, m: Modulation) -> Self {
        self.omega = Some(m);
        self
    }

    pub fn with_y(mut self, m: Modulation) -> Self {
        self.y = Some(m);
        self
    }

    pub fn with_x(mut self, m: Modulation) -> Self {
        self.x = Some(m);
        self
    }

    pub fn factor(&self, x: &[f64], w: &[f64], y: &[f64]) -> f64 {
        let f = |m: &Option<Modulation>, z: &[f64]| m.as_ref().map_or(1.0, |m| m.eval(z));
        f(&self.x, x) * f(&self.omega, w) * f(&self.y, y)
    }

    /// The factor carried by the slow variable and the sample alone.
    pub fn slow_factor(&self, x: &[f64], w: &[f64]) -> f64 {
        let f = |m: &Option<Modulation>, z: &[f64]| m.as_ref().map_or(1.0, |m| m.eval(z));
        f(&self.x, x) * f(&self.omega, w)
    }

    pub fn fast_factor(&self, y: &[f64]) -> f64 {
        self.y.as_ref().map_or(1.0, |m| m.eval(y))
    }

    pub fn eval(&self, x: &[f64], w: &[f64], y: &[f64]) -> Tensor4 {
        self.base.scaled(self.factor(x, w, y))
    }

    pub fn voigt(&self, x: &[f64], w: &[f64], y: &[f64]) -> Voigt {
        self.base.to_voigt().scaled(self.factor(x, w, y))
    }

    pub fn depends_on_omega(&self) -> bool {
        self.omega.as_ref().is_some_and(|m| m.amplitude != 0.0)
    }

    pub fn depends_on_y(&self) -> bool {
        self.y.as_ref().is_some_and(|m| m.amplitude != 0.0)
    }

    /// Bounds `(c1, c2)` of the base scaled by the extreme modulation factors.
    pub fn bounds(&self) -> Result<(f64, f64)> {
        let (c1, c2) = self.base.validate()?;
        let mut lo = 1.0;
        let mut hi = 1.0;
        for m in [&self.x, &self.omega, &self.y].into_iter().flatten() {
            let a = m.amplitude.abs();
            if a >= 1.0 {
                return Err(Error::NotElliptic(format!("modulation amplitude {a} >= 1")));
            }
            lo *= 1.0 - a;
            hi *= 1.0 + a;
        }
        Ok((c1 * lo, c2 * hi))
    }
}

/// Per-phase tensors `a^1` (fissure) and `a^2` (matrix).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ElasticityTensor {
    pub phases: [PhaseTensor; 2],
}

impl ElasticityTensor {
    pub fn new(fissure: PhaseTensor, matrix: PhaseTensor) -> Result<Self> {
        let t = Self { phases: [fissure, matrix] };
        t.bounds()?;
        Ok(t)
    }

    pub fn single(phase: PhaseTensor) -> Result<Self> {
        Self::new(phase.clone(), phase)
    }

    pub fn phase(&self, m: Phase) -> &PhaseTensor {
        &self.phases[m.slot()]
    }

    pub fn eval(&self, m: Phase, x: &[f64], w: &[f64], y: &[f64]) -> Tensor4 {
        self.phase(m).eval(x, w, y)
    }

    pub fn voigt(&self, m: Phase, x: &[f64], w: &[f64], y: &[f64]) -> Voigt {
        self.phase(m).voigt(x, w, y)
    }

    pub fn bounds(&self) -> Result<(f64, f64)> {
        let (a1, b1) = self.phases[0].bounds()?;
        let (a2, b2) = self.phases[1].bounds()?;
        Ok((a1.min(a2), b1.max(b2)))
    }

    pub fn is_homogeneous(&self) -> bool {
        self.phases[0] == self.phases[1]
    }

    /// Sampled check of symmetry and `c1 |eta|^2 <= a eta : eta <= c2 |eta|^2`.
    pub fn check_sampled(&self, samples: usize, seed: u64) -> Result<()> {
        let (c1, c2) = self.bounds()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let off = rng.random::<f64>() * 2.0 - 1.0;
            let eta = [[rng.random::<f64>() * 2.0 - 1.0, off], [off, rng.random::<f64>() * 2.0 - 1.0]];
            let n2: f64 = eta.iter().flatten().map(|v| v * v).sum();
            for m in [Phase::Fissure, Phase::Matrix] {
                let a = self.eval(m, &x, &w, &y);
                let scale = a.0.iter().flatten().flatten().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
                if a.symmetry_defect() > 1e-12 * scale {
                    return Err(Error::NotElliptic(format!("symmetry defect {:e}", a.symmetry_defect())));
                }
                let q = a.contract(&eta, &eta);
                let slack = 1e-12 * c2 * n2;
                if q < c1 * n2 - slack || q > c2 * n2 + slack {
                    return Err(Error::NotElliptic(format!("form {q} outside [{}, {}]", c1 * n2, c2 * n2)));
                }
            }
        }
        Ok(())
    }
}

pub type DensityFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type ForceFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> [f64; 2] + Send + Sync>;
pub type StreamFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

pub fn const_density(rho: f64) -> DensityFn {
    Arc::new(move |_, _| rho)
}

pub fn const_force(f: [f64; 2]) -> ForceFn {
    Arc::new(move |_, _, _| f)
}

/// Divergence-free initial data given by a stream function `psi(x, omega)`
/// vanishing on the boundary.
#[derive(Clone)]
pub enum InitialVelocity {
    Zero,
    Stream(StreamFn),
}

#[derive(Clone)]
pub struct EpsProblem {
    pub geometry: ScaledGeometry,
    pub dynamics: TorusDynamics,
    pub density: [DensityFn; 2],
    pub density_floor: f64,
    pub forcing: [ForceFn; 2],
    pub tensor: ElasticityTensor,
    pub initial: InitialVelocity,
    pub horizon: f64,
    pub convection: bool,
}

impl EpsProblem {
    pub fn eps(&self) -> f64 {
        self.geometry.eps()
    }

    /// Static checks independent of the grid.
    pub fn validate(&self) -> Result<()> {
        if self.geometry.domain().dim() != 2 || self.dynamics.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: self.geometry.domain().dim() });
        }
        if !(self.density_floor > 0.0) {
            return Err(Error::DensityFloor { min: self.density_floor, location: "floor".into() });
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        let cells = self.geometry.cells();
        if cells.volume_fraction(Phase::Fissure) > 0.0 && !cells.is_fissure_connected() {
            return Err(Error::Disconnected);
        }
        self.tensor.bounds()?;
        Ok(())
    }

    /// `a(x, T(x/eps) omega, x/eps^2)` for the phase occupying `x`.
    pub fn realized_tensor(&self, x: &[f64], w: &OmegaSample) -> Result<(Phase, Voigt)> {
        let phase = self.geometry.classify(x)?;
        let eps = self.eps();
        let shifted: Vec<f64> = w.coords().iter().zip(x).map(|(o, xi)| wrap(o + xi / eps)).collect();
        let y = self.geometry.fast(x);
        Ok((phase, self.tensor.voigt(phase, x, &shifted, &y)))
    }

    /// Discrete coefficients for one realization.
    pub fn realize(&self, grid: &MacGrid, w: &OmegaSample) -> Result<Coefficients> {
        self.validate()?;
        self.geometry.check_resolved(grid.nx.min(grid.ny))?;
        let mut phases = Vec::with_capacity(grid.ncell());
        let mut ws = Vec::with_capacity(grid.ncell());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (p, v) = self.realized_tensor(&grid.cell_pos(i, j), w)?;
                phases.push(p);
                ws.push(v);
            }
        }
        let wc = w.coords().to_vec();
        let mut mass = vec![0.0; grid.nvel()];
        let mut sides = vec![[Phase::Fissure; 2]; grid.nvel()];
        for (k, m) in mass.iter_mut().enumerate() {
            let (x, _) = grid.face(k);
            let cells = grid.face_cells(k);
            let pl = cells[0].or(cells[1]).map(|c| phases[c]).unwrap_or(Phase::Fissure);
            let pr = cells[1].or(cells[0]).map(|c| phases[c]).unwrap_or(Phase::Fissure);
            sides[k] = [pl, pr];
            let rho = 0.5 * ((self.density[pl.slot()])(&x, &wc) + (self.density[pr.slot()])(&x, &wc));
            if !(rho >= self.density_floor) {
                return Err(Error::DensityFloor { min: rho, location: format!("{x:?}") });
            }
            *m = rho * grid.cell_area();
        }
        let forcing = self.forcing.clone();
        let g = *grid;
        let load: LoadFn = Arc::new(move |t, out: &mut [f64]| {
            for (k, o) in out.iter_mut().enumerate() {
                if g.is_wall(k) {
                    *o = 0.0;
                    continue;
                }
                let (x, comp) = g.face(k);
                let [a, b] = sides[k];
                let fa = (forcing[a.slot()])(t, &x, &wc)[comp];
                let fb = if a == b { fa } else { (forcing[b.slot()])(t, &x, &wc)[comp] };
                *o = 0.5 * (fa + fb) * g.cell_area();
            }
        });
        let initial = match &self.initial {
            InitialVelocity::Zero => vec![0.0; grid.nvel()],
            InitialVelocity::Stream(psi) => {
                let wc = w.coords().to_vec();
                grid.from_stream(|x| psi(&x, &wc))
            }
        };
        Coefficients::new(*grid, Viscous::new(*grid, ws)?, mass, load, initial, self.convection, Some(phases), Some(w.clone()))
    }

    /// `e^eps(u, v)` over the chosen phase (or both) for one realization.
    pub fn bilinear_e(&self, grid: &MacGrid, w: &OmegaSample, u: &[f64], v: &[f64], phase: Option<Phase>, rule: WallRule) -> Result<f64> {
        self.geometry.check_resolved(grid.nx.min(grid.ny))?;
        let mut ws = Vec::with_capacity(grid.ncell());
        let mut mask = Vec::with_capacity(grid.ncell());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (p, v) = self.realized_tensor(&grid.cell_pos(i, j), w)?;
                mask.push(phase.is_none_or(|m| m == p));
                ws.push(v);
            }
        }
        Ok(Viscous::new(*grid, ws)?.bilinear(u, v, rule, Some(&mask)))
    }
}

/// Integrated face loads at time `t`; wall entries must be zero.
pub type LoadFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Fully discrete coefficients driving one trajectory.
#[derive(Clone)]
pub struct Coefficients {
    pub grid: MacGrid,
    pub viscous: Viscous,
    pub mass: Vec<f64>,
    pub load: LoadFn,
    pub initial: Vec<f64>,
    pub convection: bool,
    pub phases: Option<Vec<Phase>>,
    pub omega: Option<OmegaSample>,
}

impl Coefficients {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: MacGrid,
        viscous: Viscous,
        mass: Vec<f64>,
        load: LoadFn,
        initial: Vec<f64>,
        convection: bool,
        phases: Option<Vec<Phase>>,
        omega: Option<OmegaSample>,
    ) -> Result<Self> {
        if mass.len() != grid.nvel() || initial.len() != grid.nvel() {
            return Err(Error::DimensionMismatch { expected: grid.nvel(), got: mass.len().min(initial.len()) });
        }
        let wall = (0..grid.nvel()).filter(|&k| grid.is_wall(k)).fold(0.0f64, |m, k| m.max(initial[k].abs()));
        if wall > 1e-12 {
            return Err(Error::Invalid(format!("initial velocity crosses the wall ({wall:e})")));
        }
        let div = mac::max_divergence(&grid, &initial);
        if div > 1e-10 {
            return Err(Error::Divergence(div));
        }
        Ok(Self { grid, viscous, mass, load, initial, convection, phases, omega })
    }

    pub fn kinetic(&self, u: &[f64]) -> f64 {
        0.5 * u.iter().zip(&self.mass).map(|(v, m)| m * v * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConvectionScheme {
    /// Advecting velocity lagged, advected velocity implicit.
    LinearlyImplicit,
    /// Fully explicit skew-symmetric term.
    Explicit,
}

/// Where the implicit viscous solve looks for its solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ViscousConstraint {
    /// Krylov iteration confined to discretely divergence-free fields, so the
    /// pressure acts on every scale the grid resolves.
    DivergenceFree,
    /// Classical splitting: unconstrained solve, then projection.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub dt: f64,
    pub viscous_tol: f64,
    pub max_iter: usize,
    pub scheme: ConvectionScheme,
    pub constraint: ViscousConstraint,
}

impl StepOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            viscous_tol: 1e-12,
            max_iter: 10_000,
            scheme: ConvectionScheme::LinearlyImplicit,
            constraint: ViscousConstraint::DivergenceFree,
        }
    }

    pub fn with_scheme(mut self, scheme: ConvectionScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_constraint(mut self, constraint: ViscousConstraint) -> Self {
        self.constraint = constraint;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub t: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub omega: Option<OmegaSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub kinetic: f64,
    pub dissipation: f64,
    pub work: f64,
    pub max_div: f64,
    pub viscous: SolveStats,
    pub pressure: SolveStats,
}

pub struct Stepper {
    coef: Coefficients,
    opts: StepOptions,
    vel_pre: VelocityPrecond,
    p_pre: PressurePrecond,
}

impl Stepper {
    pub fn new(coef: Coefficients, opts: StepOptions) -> Result<Self> {
        if !(opts.dt > 0.0) {
            return Err(Error::TimeGrid(format!("dt must be positive, got {}", opts.dt)));
        }
        let g = coef.grid;
        let interior: Vec<usize> = (0..g.nvel()).filter(|&k| !g.is_wall(k)).collect();
        let mean_mass = interior.iter().map(|&k| coef.mass[k]).sum::<f64>() / interior.len() as f64;
        let inv_rho = interior.iter().map(|&k| g.cell_area() / coef.mass[k]).sum::<f64>() / interior.len() as f64;
        let vel_pre = VelocityPrecond::new(&g, mean_mass / opts.dt, coef.viscous.mean_diag());
        let p_pre = PressurePrecond::new(&g, inv_rho);
        Ok(Self { coef, opts, vel_pre, p_pre })
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coef
    }

    pub fn options(&self) -> &StepOptions {
        &self.opts
    }

    pub fn initial_state(&self) -> FluidState {
        FluidState { t: 0.0, u: self.coef.initial.clone(), p: vec![0.0; self.coef.grid.ncell()], omega: self.coef.omega.clone() }
    }

    pub fn step(&self, state: &FluidState) -> Result<(FluidState, StepInfo)> {
        let g = &self.coef.grid;
        let dt = self.opts.dt;
        let n = g.nvel();
        let un = &state.u;
        let t_new = state.t + dt;
        if self.coef.convection {
            let umax = un.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let limit = 0.5 * g.h[0].min(g.h[1]) / umax;
            if umax > 0.0 && dt > limit {
                return Err(Error::Cfl { dt, limit });
            }
        }
        let mut b = vec![0.0; n];
        (self.coef.load)(t_new, &mut b);
        g.zero_walls(&mut b);

        let mut rhs: Vec<f64> = (0..n).map(|k| self.coef.mass[k] / dt * un[k] + b[k]).collect();
        let implicit_conv = self.coef.convection && self.opts.scheme == ConvectionScheme::LinearlyImplicit;
        let mut cbuf = vec![0.0; n];
        if self.coef.convection && !implicit_conv {
            mac::convection(g, un, un, &mut cbuf);
            rhs.iter_mut().zip(&cbuf).for_each(|(r, c)| *r -= c);
        }
        g.zero_walls(&mut rhs);

        let viscous = &self.coef.viscous;
        let mass = &self.coef.mass;
        let constrained = self.opts.constraint == ViscousConstraint::DivergenceFree;
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let pstats = RefCell::new(SolveStats { iterations: 0, residual: 0.0 });
        let mut kbuf = vec![0.0; n];
        let mut op = |x: &[f64], y: &mut [f64]| {
            viscous.apply(x, y);
            for k in 0..n {
                y[k] += mass[k] / dt * x[k];
            }
            if implicit_conv {
                mac::convection(g, un, x, &mut cbuf);
                y.iter_mut().zip(&cbuf).for_each(|(a, c)| *a += c);
            }
            g.zero_walls(y);
            if constrained {
                kbuf.copy_from_slice(y);
                self.remove_gradient(&kbuf, y, &failure, &pstats);
            }
        };
        let mut pre = |r: &[f64], z: &mut [f64]| {
            self.vel_pre.apply(r, z);
            if constrained {
                self.project_into(z, &failure, &pstats);
            }
        };
        let mut ustar = un.clone();
        let mut krhs = rhs.clone();
        if constrained {
            self.remove_gradient(&rhs, &mut krhs, &failure, &pstats);
        }
        // Scaled by the full load: a gradient-dominated load leaves a projected
        // right-hand side at rounding level.
        let abs = if constrained { self.opts.viscous_tol * crate::linalg::norm(&rhs) } else { 0.0 };
        let tol = Tolerance { rel: self.opts.viscous_tol, abs, max_iter: self.opts.max_iter };
        let solved = if implicit_conv {
            bicgstab("viscous-convective", &mut op, &mut pre, &krhs, &mut ustar, tol)
        } else {
            pcg("viscous", &mut op, &mut pre, &krhs, &mut ustar, tol)
        };
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let vstats = solved?;
        g.zero_walls(&mut ustar);

        let mut au = vec![0.0; n];
        viscous.apply(&ustar, &mut au);
        let dissipation = dt * dot(&ustar, &au);
        let work = dt * dot(&b, &ustar);

        let (unew, q, st) = self.project(&ustar)?;
        let max_div = mac::max_divergence(g, &unew);
        if max_div > 1e-10 {
            return Err(Error::Divergence(max_div));
        }
        let mut pstats = pstats.into_inner();
        pstats.iterations += st.iterations;
        pstats.residual = st.residual;
        let p = if constrained {
            // Multiplier of the constrained solve: K u = rhs + D^T p.
            let mut ku = vec![0.0; n];
            viscous.apply(&unew, &mut ku);
            if implicit_conv {
                mac::convection(g, un, &unew, &mut cbuf);
            }
            let mut res = vec![0.0; n];
            for k in 0..n {
                let c = if implicit_conv { cbuf[k] } else { 0.0 };
                res[k] = (ku[k] + mass[k] / dt * unew[k] + c - rhs[k]) / mass[k];
            }
            g.zero_walls(&mut res);
            let mut r = vec![0.0; g.ncell()];
            mac::divergence(g, &res, &mut r);
            let mut s = vec![0.0; g.ncell()];
            let st = self.pressure_solve(&mut r, &mut s, Tolerance { rel: 1e-13, abs: 0.0, max_iter: self.opts.max_iter })?;
            pstats.iterations += st.iterations;
            s
        } else {
            q.iter().map(|v| -v / dt).collect()
        };
        let kinetic = self.coef.kinetic(&unew);
        let info = StepInfo { kinetic, dissipation, work, max_div, viscous: vstats, pressure: pstats };
        Ok((FluidState { t: t_new, u: unew, p, omega: state.omega.clone() }, info))
    }

    /// Solve `D M^-1 D^T q = r` for mean-zero `r`.
    fn pressure_solve(&self, r: &mut [f64], q: &mut [f64], tol: Tolerance) -> Result<SolveStats> {
        let g = &self.coef.grid;
        let mass = &self.coef.mass;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        r.iter_mut().for_each(|v| *v -= mean);
        let mut face = vec![0.0; g.nvel()];
        let mut op = |x: &[f64], y: &mut [f64]| {
            mac::divergence_t(g, x, &mut face);
            face.iter_mut().zip(mass).for_each(|(f, m)| *f /= m);
            mac::divergence(g, &face, y);
        };
        let mut pre = |r: &[f64], z: &mut [f64]| self.p_pre.apply(r, z);
        pcg("pressure", &mut op, &mut pre, r, q, tol)
    }

    /// Divergence target for a projection of the face field `v`: roundoff in
    /// `D v` is relative to `|v|`, not to `|D v|`.
    fn inner_tol(&self, v: &[f64]) -> Tolerance {
        let h = self.coef.grid.h[0].max(self.coef.grid.h[1]);
        Tolerance { rel: 1e-14, abs: 1e-13 * h * crate::linalg::norm(v), max_iter: self.opts.max_iter }
    }

    /// `z <- z - M^-1 D^T L^-1 D z`: the mass-orthogonal projection used inside the Krylov loop.
    fn project_into(&self, z: &mut [f64], failure: &RefCell<Option<Error>>, stats: &RefCell<SolveStats>) {
        let g = &self.coef.grid;
        g.zero_walls(z);
        let mut r = vec![0.0; g.ncell()];
        mac::divergence(g, z, &mut r);
        if r.iter().all(|v| *v == 0.0) {
            return;
        }
        let mut q = vec![0.0; g.ncell()];
        match self.pressure_solve(&mut r, &mut q, self.inner_tol(z)) {
            Ok(st) => stats.borrow_mut().iterations += st.iterations,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                return;
            }
        }
        let mut corr = vec![0.0; g.nvel()];
        mac::divergence_t(g, &q, &mut corr);
        for (k, zk) in z.iter_mut().enumerate() {
            *zk -= corr[k] / self.coef.mass[k];
        }
        g.zero_walls(z);
    }

    /// `y = r - D^T L^-1 D M^-1 r`: drops the discrete gradient part of a residual.
    fn remove_gradient(&self, r: &[f64], y: &mut [f64], failure: &RefCell<Option<Error>>, stats: &RefCell<SolveStats>) {
        let g = &self.coef.grid;
        let mut scaled: Vec<f64> = r.iter().zip(&self.coef.mass).map(|(v, m)| v / m).collect();
        g.zero_walls(&mut scaled);
        let mut d = vec![0.0; g.ncell()];
        mac::divergence(g, &scaled, &mut d);
        y.copy_from_slice(r);
        if d.iter().all(|v| *v == 0.0) {
            return;
        }
        let mut q = vec![0.0; g.ncell()];
        match self.pressure_solve(&mut d, &mut q, self.inner_tol(&scaled)) {
            Ok(st) => stats.borrow_mut().iterations += st.iterations,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                return;
            }
        }
        let mut corr = vec![0.0; g.nvel()];
        mac::divergence_t(g, &q, &mut corr);
        y.iter_mut().zip(&corr).for_each(|(a, c)| *a -= c);
        g.zero_walls(y);
    }

    /// Mass-weighted projection onto discretely divergence-free fields.
    pub fn project(&self, ustar: &[f64]) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
        let g = &self.coef.grid;
        let mass = &self.coef.mass;
        let nc = g.ncell();
        let mut u = ustar.to_vec();
        let mut q = vec![0.0; nc];
        let mut total = SolveStats { iterations: 0, residual: 0.0 };
        let abs = 1e-12 * g.cell_area();
        for _ in 0..4 {
            let mut r = vec![0.0; nc];
            mac::divergence(g, &u, &mut r);
            let mean = r.iter().sum::<f64>() / nc as f64;
            r.iter_mut().for_each(|v| *v -= mean);
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= abs {
                break;
            }
            let mut dq = vec![0.0; nc];
            let st = self.pressure_solve(&mut r, &mut dq, Tolerance { rel: 1e-15, abs: 0.1 * abs, max_iter: self.opts.max_iter })?;
            total.iterations += st.iterations;
            total.residual = st.residual;
            let mut corr = vec![0.0; g.nvel()];
            mac::divergence_t(g, &dq, &mut corr);
            for k in 0..g.nvel() {
                u[k] -= corr[k] / mass[k];
            }
            q.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
        }
        g.zero_walls(&mut u);
        Ok((u, q, total))
    }

    /// Run to `horizon`, handing every state (including the initial one) to `observe`.
    pub fn run(&self, horizon: f64, mut observe: impl FnMut(&FluidState)) -> Result<Trajectory> {
        let steps = (horizon / self.opts.dt).round() as usize;
        if steps == 0 || ((steps as f64) * self.opts.dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::TimeGrid(format!("horizon {horizon} is not a multiple of dt {}", self.opts.dt)));
        }
        let g = &self.coef.grid;
        let mut state = self.initial_state();
        observe(&state);
        let k0 = self.coef.kinetic(&state.u);
        let mut record = EnergyRecord::new(k0);
        let mut norms = vec![l2_sq(g, &state.u)];
        let mut times = vec![0.0];
        let mut max_div = mac::max_divergence(g, &state.u);
        let mut iters = (0usize, 0usize);
        for _ in 0..steps {
            let (next, info) = self.step(&state)?;
            record.push(next.t, info.kinetic, info.dissipation, info.work);
            norms.push(l2_sq(g, &next.u));
            times.push(next.t);
            max_div = max_div.max(info.max_div);
            iters.0 += info.viscous.iterations;
            iters.1 += info.pressure.iterations;
            state = next;
            observe(&state);
        }
        Ok(Trajectory { times, norm_sq: norms, energy: record, max_div, final_state: state, iterations: iters })
    }
}

/// `sum hx hy |u|^2` over faces.
pub fn l2_sq(g: &MacGrid, u: &[f64]) -> f64 {
    g.cell_area() * u.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    pub kinetic: f64,
    pub dissipation_cum: f64,
    pub work_cum: f64,
    pub slack: f64,
    /// Magnitude scale for the tolerance: initial energy plus accumulated |work| and dissipation.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EnergyRecord {
    pub rows: Vec<EnergyRow>,
}

impl EnergyRecord {
    pub fn new(k0: f64) -> Self {
        Self { rows: vec![EnergyRow { step: 0, t: 0.0, kinetic: k0, dissipation_cum: 0.0, work_cum: 0.0, slack: 0.0, scale: k0 }] }
    }

    pub fn initial(&self) -> f64 {
        self.rows[0].kinetic
    }

    pub fn push(&mut self, t: f64, kinetic: f64, dissipation: f64, work: f64) {
        let last = *self.rows.last().expect("record has an initial row");
        let k0 = self.initial();
        let d = last.dissipation_cum + dissipation;
        let w = last.work_cum + work;
        self.rows.push(EnergyRow {
            step: last.step + 1,
            t,
            kinetic,
            dissipation_cum: d,
            work_cum: w,
            slack: k0 + w - kinetic - d,
            scale: last.scale + work.abs() + dissipation.abs(),
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,kinetic,dissipation_cum,work_cum,slack\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:e},{:e},{:e},{:e}\n", r.step, r.t, r.kinetic, r.dissipation_cum, r.work_cum, r.slack));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EnergyVerdict {
    pub pass: bool,
    pub violations: Vec<usize>,
    /// Most negative `slack / scale` seen.
    pub worst: f64,
}

/// `K(t_n) + D_n <= K(0) + W_n` up to `tol` relative.
pub fn energy_check(record: &EnergyRecord, tol: f64) -> EnergyVerdict {
    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    for r in &record.rows {
        let rel = if r.scale > 0.0 { r.slack / r.scale } else { r.slack };
        worst = worst.min(rel);
        let bad = if r.scale > 0.0 { r.slack < -tol * r.scale } else { r.slack < 0.0 || r.kinetic > 0.0 };
        if bad || !r.slack.is_finite() {
            violations.push(r.step);
        }
    }
    EnergyVerdict { pass: violations.is_empty(), violations, worst }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `||u(t_n)||^2` on the face grid.
    pub norm_sq: Vec<f64>,
    pub energy: EnergyRecord,
    pub max_div: f64,
    pub final_state: FluidState,
    /// Total (viscous, pressure) Krylov iterations.
    pub iterations: (usize, usize),
}

impl Trajectory {
    /// `||u||_{L^2(0,T; L^2(Q))}` by the trapezoid rule.
    pub fn l2_time_norm(&self) -> f64 {
        crate::testfn::trapezoid(&self.times, &self.norm_sq).sqrt()
    }
}

/// One realization of the problem run to its horizon; every `stride`-th state is kept.
pub fn solve(problem: &EpsProblem, grid: &MacGrid, w: &OmegaSample, opts: StepOptions, stride: usize) -> Result<(Trajectory, Vec<FluidState>)> {
    let stepper = Stepper::new(problem.realize(grid, w)?, opts)?;
    let mut snaps = Vec::new();
    let mut count = 0usize;
    let stride = stride.max(1);
    let traj = stepper.run(problem.horizon, |s| {
        if count % stride == 0 {
            snaps.push(s.clone());
        }
        count += 1;
    })?;
    Ok((traj, snaps))
}

/// Cell-centred strain of a velocity field.
pub fn strain(grid: &MacGrid, u: &[f64], rule: WallRule) -> Vec<Sym2> {
    mac::cell_strain(grid, u, rule)
}

pub use crate::tensor::stress;

/// Raw snapshot: a text header line followed by little-endian `f64` values.
pub fn write_snapshot<W: Write>(mut out: W, t: f64, grid: &MacGrid, name: &str, data: &[f64]) -> Result<()> {
    writeln!(out, "t={t:e} nx={} ny={} field={name} len={}", grid.nx, grid.ny, data.len())?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    pub name: String,
    pub data: Vec<f64>,
}

pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<Snapshot> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut t = None;
    let mut nx = None;
    let mut ny = None;
    let mut name = None;
    let mut len = None;
    for tok in header.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Format(format!("bad header token {tok}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|e| Error::Format(e.to_string()));
        match k {
            "t" => t = Some(v.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?),
            "nx" => nx = Some(num(v)?),
            "ny" => ny = Some(num(v)?),
            "field" => name = Some(v.to_string()),
            "len" => len = Some(num(v)?),
            _ => return Err(Error::Format(format!("unknown header key {k}"))),
        }
    }
    let missing = || Error::Format("incomplete snapshot header".into());
    let len = len.ok_or_else(missing)?;
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(Snapshot { t: t.ok_or_else(missing)?, nx: nx.ok_or_else(missing)?, ny: ny.ok_or_else(missing)?, name: name.ok_or_else(missing)?, data })
}

/// Smallest ratio `||e(u)||^2 / ||grad u||^2` over no-slip fields, by inverse iteration.
pub fn korn_constant(grid: &MacGrid, iterations: usize, seed: u64) -> Result<f64> {
    let strain_form = Viscous::new(*grid, vec![Voigt([1.0, 0.0, 0.0, 1.0, 0.0, 2.0]); grid.ncell()])?;
    // The gradient form is diagonalized exactly by the velocity transform.
    let grad_inv = VelocityPrecond::new(grid, 0.0, [1.0, 1.0, 4.0]);
    let n = grid.nvel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    grid.zero_walls(&mut x);
    let mut kappa = f64::INFINITY;
    let mut gx = vec![0.0; n];
    let mut ex = vec![0.0; n];
    for _ in 0..iterations {
        gradient_apply(grid, &x, &mut gx);
        let mut y = x.clone();
        pcg(
            "korn",
            &mut |a, b| strain_form.apply(a, b),
            &mut |r, z| grad_inv.apply(r, z),
            &gx,
            &mut y,
            Tolerance::relative(1e-10),
        )?;
        let nrm = dot(&y, &y).sqrt();
        y.iter_mut().for_each(|v| *v /= nrm);
        x = y;
        strain_form.apply(&x, &mut ex);
        gradient_apply(grid, &x, &mut gx);
        kappa = dot(&x, &ex) / dot(&x, &gx);
    }
    Ok(kappa)
}

/// The full-gradient form: `|du/dx|^2 + |du/dy|^2 + |dv/dx|^2 + |dv/dy|^2` with corner quadrature.
pub fn gradient_apply(grid: &MacGrid, x: &[f64], out: &mut [f64]) {
    // Each component alone sees no cross term in the W = diag(1, 1, 4) form.
    let g = grid;
    let only_u: Vec<f64> = (0..g.nvel()).map(|k| if k < g.nu() { x[k] } else { 0.0 }).collect();
    let only_v: Vec<f64> = (0..g.nvel()).map(|k| if k >= g.nu() { x[k] } else { 0.0 }).collect();
    let form = Viscous::new(*g, vec![Voigt([1.0, 0.0, 0.0, 1.0, 0.0, 4.0]); g.ncell()]).expect("sized");
    let mut a = vec![0.0; g.nvel()];
    let mut b = vec![0.0; g.nvel()];
    form.apply(&only_u, &mut a);
    form.apply(&only_v, &mut b);
    for k in 0..g.nvel() {
        out[k] = if k < g.nu() { a[k] } else { b[k] };
    }
}

/// Manufactured unsteady solution `psi = A (1 + t) sin^2(pi x) sin^2(pi y)` with
/// zero pressure; the forcing compensates inertia, convection and viscosity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedVortex {
    pub amplitude: f64,
    pub mu: f64,
    pub rho: f64,
    pub convection: bool,
}

impl ManufacturedVortex {
    fn theta(t: f64) -> (f64, f64) {
        (1.0 + t, 1.0)
    }

    fn s(z: f64) -> [f64; 4] {
        use std::f64::consts::PI;
        let s1 = (PI * z).sin();
        let (s2, c2) = (2.0 * PI * z).sin_cos();
        [s1 * s1, PI * s2, 2.0 * PI * PI * c2, -4.0 * PI * PI * PI * s2]
    }

    pub fn stream(&self, t: f64, x: &[f64]) -> f64 {
        self.amplitude * Self::theta(t).0 * Self::s(x[0])[0] * Self::s(x[1])[0]
    }

    pub fn velocity(&self, t: f64, x: &[f64]) -> [f64; 2] {
        let (sx, sy) = (Self::s(x[0]), Self::s(x[1]));
        let a = self.amplitude * Self::theta(t).0;
        [a * sx[0] * sy[1], -a * sx[1] * sy[0]]
    }

    pub fn forcing(&self, t: f64, x: &[f64]) -> [f64; 2] {
        let (sx, sy) = (Self::s(x[0]), Self::s(x[1]));
        let (th, dth) = Self::theta(t);
        let a = self.amplitude;
        let u = a * th * sx[0] * sy[1];
        let v = -a * th * sx[1] * sy[0];
        let ut = a * dth * sx[0] * sy[1];
        let vt = -a * dth * sx[1] * sy[0];
        let lap_u = a * th * (sx[2] * sy[1] + sx[0] * sy[3]);
        let lap_v = -a * th * (sx[3] * sy[0] + sx[1] * sy[2]);
        let (ux, uy) = (a * th * sx[1] * sy[1], a * th * sx[0] * sy[2]);
        let (vx, vy) = (-a * th * sx[2] * sy[0], -a * th * sx[1] * sy[1]);
        let (cu, cv) = if self.convection { (u * ux + v * uy, u * vx + v * vy) } else { (0.0, 0.0) };
        [self.rho * ut + cu - self.mu * lap_u, self.rho * vt + cv - self.mu * lap_v]
    }

    pub fn problem(&self, horizon: f64) -> Result<EpsProblem> {
        let cells = Arc::new(crate::geometry::CellDecomposition::uniform(2, 1, Phase::Fissure)?);
        let geometry = ScaledGeometry::new(1.0, crate::geometry::BoxDomain::unit(2), cells)?;
        let me = *self;
        let force: ForceFn = Arc::new(move |t, x, _| me.forcing(t, x));
        let psi: StreamFn = Arc::new(move |x, _| me.stream(0.0, x));
        Ok(EpsProblem {
            geometry,
            dynamics: TorusDynamics::new(2, 8)?,
            density: [const_density(self.rho), const_density(self.rho)],
            density_floor: 0.5 * self.rho,
            forcing: [force.clone(), force],
            tensor: ElasticityTensor::single(PhaseTensor::constant(Tensor4::isotropic(0.0, self.mu)))?,
            initial: InitialVelocity::Stream(psi),
            horizon,
            convection: self.convection,
        })
    }

    /// Discrete L2 error against the exact face values at time `t`.
    pub fn error(&self, grid: &MacGrid, t: f64, u: &[f64]) -> f64 {
        let exact = grid.sample(|x| self.velocity(t, &x));
        l2_sq(grid, &exact.iter().zip(u).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxDomain, CellDecomposition};

    fn stripes(eps: f64, force: [f64; 2], convection: bool) -> EpsProblem {
        let cells = Arc::new(CellDecomposition::stripe(2, 4, 0.5).unwrap());
        let geometry = ScaledGeometry::new(eps, BoxDomain::unit(2), cells).unwrap();
        let soft = PhaseTensor::constant(Tensor4::isotropic(0.0, 0.5));
        let stiff = PhaseTensor::constant(Tensor4::orthotropic(3.0, 2.0, 0.5, 1.0)).with_omega(Modulation { amplitude: 0.3, freq: vec![1, 0] });
        EpsProblem {
            geometry,
            dynamics: TorusDynamics::new(2, 16).unwrap(),
            density: [const_density(1.0), Arc::new(|x: &[f64], w: &[f64]| 2.0 + 0.5 * (x[0] + w[1]).sin())],
            density_floor: 1.0,
            forcing: [const_force(force), const_force([force[0], 0.5 * force[1]])],
            tensor: ElasticityTensor::new(soft, stiff).unwrap(),
            initial: InitialVelocity::Zero,
            horizon: 0.1,
            convection,
        }
    }

    fn omega() -> OmegaSample {
        OmegaSample::new(vec![0.2, 0.7], 1)
    }

    #[test]
    fn zero_data_stays_at_rest() {
        let p = stripes(0.5, [0.0, 0.0], true);
        let g = MacGrid::unit(16);
        let (traj, snaps) = solve(&p, &g, &omega(), StepOptions::new(0.02), 1).unwrap();
        assert!(snaps.iter().all(|s| s.u.iter().all(|v| *v == 0.0)));
        assert!(traj.energy.rows.iter().all(|r| r.kinetic == 0.0 && r.work_cum == 0.0 && r.dissipation_cum == 0.0));
        assert!(energy_check(&traj.energy, 1e-8).pass);
    }

    #[test]
    fn forced_run_obeys_ledger_and_is_deterministic() {
        let p = stripes(0.5, [3.0, -1.0], true);
        let g = MacGrid::unit(16);
        let run = || solve(&p, &g, &omega(), StepOptions::new(0.01), 1).unwrap();
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(sa, sb);
        assert_eq!(a.energy, b.energy);
        let v = energy_check(&a.energy, 1e-8);
        assert!(v.pass, "{v:?}");
        assert!(a.max_div <= 1e-10);
        assert!(a.energy.rows.last().unwrap().kinetic > 0.0);

        let mut inflated = a.energy.clone();
        let k0 = inflated.rows[0].kinetic;
        let r = inflated.rows.last_mut().unwrap();
        r.kinetic += r.slack + 1e-3 * r.scale;
        r.slack = k0 + r.work_cum - r.kinetic - r.dissipation_cum;
        assert!(!energy_check(&inflated, 1e-8).pass);
    }

    #[test]
    fn explicit_scheme_also_runs() {
        let p = stripes(0.5, [3.0, -1.0], true);
        let g = MacGrid::unit(16);
        let (traj, _) = solve(&p, &g, &omega(), StepOptions::new(0.01).with_scheme(ConvectionScheme::Explicit), 10).unwrap();
        assert!(traj.max_div <= 1e-10);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let mut p = stripes(0.5, [0.0, 0.0], true);
        p.initial = InitialVelocity::Stream(Arc::new(|x: &[f64], _: &[f64]| 40.0 * (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).powi(2)));
        let g = MacGrid::unit(16);
        assert!(matches!(solve(&p, &g, &omega(), StepOptions::new(0.5), 1), Err(Error::Cfl { .. }) | Err(Error::TimeGrid(_))));
        p.horizon = 1.0;
        assert!(matches!(solve(&p, &g, &omega(), StepOptions::new(0.5), 1), Err(Error::Cfl { .. })));
    }

    #[test]
    fn validation_rejects_bad_data() {
        let g = MacGrid::unit(16);
        let mut p = stripes(0.5, [0.0, 0.0], false);
        p.density[0] = const_density(0.0);
        assert!(matches!(p.realize(&g, &omega()), Err(Error::DensityFloor { .. })));
        let mut p = stripes(0.5, [0.0, 0.0], false);
        p.geometry = ScaledGeometry::new(0.5, BoxDomain::unit(2), Arc::new(CellDecomposition::checkerboard(2, 4).unwrap())).unwrap();
        assert!(matches!(p.validate(), Err(Error::Disconnected)));
        let p = stripes(0.25, [0.0, 0.0], false);
        assert!(matches!(p.realize(&g, &omega()), Err(Error::ScaleUnresolved { .. })));
        let bad = PhaseTensor::constant(Tensor4::isotropic(0.0, 1.0)).with_y(Modulation { amplitude: 1.2, freq: vec![1, 1] });
        assert!(ElasticityTensor::single(bad).is_err());
    }

    #[test]
    fn sampled_ellipticity_holds() {
        stripes(0.5, [0.0, 0.0], false).tensor.check_sampled(100, 5).unwrap();
    }

    #[test]
    fn bilinear_form_examples() {
        let cells = Arc::new(CellDecomposition::uniform(2, 2, Phase::Fissure).unwrap());
        let mu = 0.8;
        let p = EpsProblem {
            geometry: ScaledGeometry::new(0.5, BoxDomain::unit(2), cells).unwrap(),
            tensor: ElasticityTensor::single(PhaseTensor::constant(Tensor4::isotropic(0.0, mu))).unwrap(),
            ..stripes(0.5, [0.0, 0.0], false)
        };
        let g = MacGrid::unit(16);
        let u = g.sample(|x| [x[1], 0.0]);
        let rot = g.sample(|x| [-x[1], x[0]]);
        let e = p.bilinear_e(&g, &omega(), &u, &u, None, WallRule::Extrapolate).unwrap();
        assert!((e - mu).abs() < 1e-12);
        assert!(p.bilinear_e(&g, &omega(), &u, &rot, None, WallRule::Extrapolate).unwrap().abs() < 1e-12);
        assert!(p.bilinear_e(&g, &omega(), &u, &u, Some(Phase::Matrix), WallRule::Extrapolate).unwrap().abs() < 1e-15);

        let two = stripes(0.5, [0.0, 0.0], false);
        let a = g.from_stream(|x| (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).powi(2) * (3.0 * x[0]).cos());
        let b = g.from_stream(|x| (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).powi(2) * (2.0 * x[1]).sin());
        let ab = two.bilinear_e(&g, &omega(), &a, &b, None, WallRule::NoSlip).unwrap();
        let ba = two.bilinear_e(&g, &omega(), &b, &a, None, WallRule::NoSlip).unwrap();
        assert!((ab - ba).abs() < 1e-12 * ab.abs().max(1e-300));
        let split: f64 = [Phase::Fissure, Phase::Matrix].iter().map(|&m| two.bilinear_e(&g, &omega(), &a, &b, Some(m), WallRule::NoSlip).unwrap()).sum();
        assert!((split - ab).abs() < 1e-12 * ab.abs());
        let coarse = MacGrid::unit(4);
        assert!(two.bilinear_e(&coarse, &omega(), &vec![0.0; coarse.nvel()], &vec![0.0; coarse.nvel()], None, WallRule::NoSlip).is_err());
    }

    #[test]
    fn discrete_korn_constant_is_stable() {
        let k16 = korn_constant(&MacGrid::unit(16), 40, 1).unwrap();
        let k24 = korn_constant(&MacGrid::unit(24), 40, 1).unwrap();
        assert!(k16 > 0.4 && k24 > 0.4, "{k16} {k24}");
        assert!((k16 - k24).abs() < 0.05, "{k16} {k24}");
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = MacGrid::unit(4);
        let data: Vec<f64> = (0..g.nvel()).map(|i| i as f64 * 0.25 - 1.0).collect();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, 0.125, &g, "u", &data).unwrap();
        let s = read_snapshot(std::io::Cursor::new(buf)).unwrap();
        assert_eq!((s.t, s.nx, s.ny, s.name.as_str()), (0.125, 4, 4, "u"));
        assert_eq!(s.data, data);
    }

    #[test]
    fn ledger_csv_header() {
        let mut r = EnergyRecord::new(1.0);
        r.push(0.1, 0.9, 0.05, 0.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("step,t,kinetic,dissipation_cum,work_cum,slack\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!((r.rows[1].slack - 0.05).abs() < 1e-15);
    }
}
