//! Separable test functions `sum phi(x) psi(w) g(y)`, their oscillating
//! realizations `f(x, T(x/eps)w, x/eps^2)`, and joint quadrature.

use crate::dynsys::{stoch_derivative, wrap, OmegaSample, StochasticField, TorusDynamics};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, MIN_POINTS_PER_CELL};
use crate::seed;
use crate::spectral::{pairwise_sum, unflatten};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Macroscopic factor `phi(x)`.
#[derive(Clone)]
pub enum XFactor {
    Const(f64),
    /// `prod_a (4 s_a (1 - s_a))^power` on the box, zero outside; `s_a` the local coordinate.
    Bump { lo: Vec<f64>, hi: Vec<f64>, power: u32 },
    /// Indicator of the half-open box `[lo, hi)`.
    Indicator { lo: Vec<f64>, hi: Vec<f64> },
    /// `coef * prod_a x_a^powers[a]`.
    Monomial { coef: f64, powers: Vec<u32> },
    Custom(ScalarFn),
}

impl std::fmt::Debug for XFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            XFactor::Const(c) => write!(f, "Const({c})"),
            XFactor::Bump { lo, hi, power } => write!(f, "Bump({lo:?}, {hi:?}, {power})"),
            XFactor::Indicator { lo, hi } => write!(f, "Indicator({lo:?}, {hi:?})"),
            XFactor::Monomial { coef, powers } => write!(f, "Monomial({coef}, {powers:?})"),
            XFactor::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn bump_1d(s: f64, power: u32) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (4.0 * s * (1.0 - s)).powi(power as i32)
    }
}

fn bump_1d_prime(s: f64, power: u32) -> f64 {
    if s <= 0.0 || s >= 1.0 || power == 0 {
        0.0
    } else {
        let base = 4.0 * s * (1.0 - s);
        power as f64 * base.powi(power as i32 - 1) * 4.0 * (1.0 - 2.0 * s)
    }
}

impl XFactor {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            XFactor::Const(c) => *c,
            XFactor::Bump { lo, hi, power } => {
                x.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| bump_1d((v - a) / (b - a), *power)).product()
            }
            XFactor::Indicator { lo, hi } => {
                if x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v < *b) {
                    1.0
                } else {
                    0.0
                }
            }
            XFactor::Monomial { coef, powers } => {
                coef * x.iter().zip(powers).map(|(v, &p)| v.powi(p as i32)).product::<f64>()
            }
            XFactor::Custom(f) => f(x),
        }
    }

    /// Partial derivative along `axis` (analytic where available, otherwise a
    /// fourth-order central difference).
    pub fn partial(&self, axis: usize) -> XFactor {
        match self {
            XFactor::Const(_) => XFactor::Const(0.0),
            XFactor::Bump { lo, hi, power } => {
                let (lo, hi, power) = (lo.clone(), hi.clone(), *power);
                XFactor::Custom(Arc::new(move |x: &[f64]| {
                    let mut acc = 1.0;
                    for a in 0..x.len() {
                        let w = hi[a] - lo[a];
                        let s = (x[a] - lo[a]) / w;
                        acc *= if a == axis { bump_1d_prime(s, power) / w } else { bump_1d(s, power) };
                    }
                    acc
                }))
            }
            XFactor::Monomial { coef, powers } => {
                if powers[axis] == 0 {
                    XFactor::Const(0.0)
                } else {
                    let mut p = powers.clone();
                    p[axis] -= 1;
                    XFactor::Monomial { coef: coef * powers[axis] as f64, powers: p }
                }
            }
            other => {
                let f = other.clone();
                XFactor::Custom(Arc::new(move |x: &[f64]| {
                    let h = 1e-4;
                    let at = |s: f64| {
                        let mut p = x.to_vec();
                        p[axis] += s;
                        f.eval(&p)
                    };
                    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
                }))
            }
        }
    }

    fn scaled(&self, s: f64) -> XFactor {
        match self {
            XFactor::Const(c) => XFactor::Const(s * c),
            XFactor::Monomial { coef, powers } => XFactor::Monomial { coef: s * coef, powers: powers.clone() },
            other => {
                let f = other.clone();
                XFactor::Custom(Arc::new(move |x: &[f64]| s * f.eval(x)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Trig {
    Cos,
    Sin,
}

/// `coef * prod_a h_a(2 pi k_a y_a)` with `h_a` in {cos, sin}.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrigTerm {
    pub coef: f64,
    pub freq: Vec<i64>,
    pub kind: Vec<Trig>,
}

/// Y-periodic trigonometric polynomial.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct TrigSeries {
    pub terms: Vec<TrigTerm>,
}

fn h(kind: Trig, arg: f64) -> f64 {
    match kind {
        Trig::Cos => arg.cos(),
        Trig::Sin => arg.sin(),
    }
}

impl TrigSeries {
    pub fn constant(dim: usize, c: f64) -> Self {
        Self { terms: vec![TrigTerm { coef: c, freq: vec![0; dim], kind: vec![Trig::Cos; dim] }] }
    }

    /// Single product term.
    pub fn product(coef: f64, factors: &[(Trig, i64)]) -> Self {
        Self {
            terms: vec![TrigTerm {
                coef,
                freq: factors.iter().map(|f| f.1).collect(),
                kind: factors.iter().map(|f| f.0).collect(),
            }],
        }
    }

    pub fn plus(mut self, other: TrigSeries) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coef
                    * t.freq
                        .iter()
                        .zip(&t.kind)
                        .zip(y)
                        .map(|((&k, &kind), &v)| h(kind, 2.0 * PI * k as f64 * v))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn partial(&self, axis: usize) -> TrigSeries {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.freq[axis] != 0)
            .map(|t| {
                let mut t = t.clone();
                let k = 2.0 * PI * t.freq[axis] as f64;
                t.kind[axis] = match t.kind[axis] {
                    Trig::Cos => {
                        t.coef *= -k;
                        Trig::Sin
                    }
                    Trig::Sin => {
                        t.coef *= k;
                        Trig::Cos
                    }
                };
                t
            })
            .collect();
        TrigSeries { terms }
    }

    pub fn max_freq(&self) -> usize {
        self.terms.iter().flat_map(|t| t.freq.iter()).map(|k| k.unsigned_abs() as usize).max().unwrap_or(0)
    }

    /// Sample onto a torus grid.
    pub fn to_field(&self, dyn_sys: TorusDynamics) -> StochasticField {
        StochasticField::from_fn(dyn_sys, |w| self.eval(w))
    }

    /// Max deviation between opposite axis endpoints over a sample grid.
    pub fn periodicity_defect(&self, dim: usize) -> f64 {
        let n: usize = 7;
        let mut worst = 0.0f64;
        for axis in 0..dim {
            for idx in 0..n.pow(dim as u32) {
                let mut y: Vec<f64> = unflatten(idx, dim, n).into_iter().map(|j| j as f64 / n as f64).collect();
                y[axis] = 0.0;
                let a = self.eval(&y);
                y[axis] = 1.0;
                worst = worst.max((a - self.eval(&y)).abs());
            }
        }
        worst
    }
}

/// Time factor `eta(t)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TimeFactor {
    One,
    /// `sum_k c_k t^k`.
    Poly(Vec<f64>),
    /// `a cos(2 pi nu t) + b sin(2 pi nu t)`.
    Trig { a: f64, b: f64, nu: f64 },
}

impl TimeFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFactor::One => 1.0,
            TimeFactor::Poly(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck),
            TimeFactor::Trig { a, b, nu } => {
                let (s, c) = (2.0 * PI * nu * t).sin_cos();
                a * c + b * s
            }
        }
    }
}

/// One separable term `eta(t) phi(x) psi(w) g(y)`; `psi = None` stands for 1.
#[derive(Debug, Clone)]
pub struct SepTerm {
    pub phi: XFactor,
    pub psi: Option<StochasticField>,
    pub g: TrigSeries,
    pub eta: TimeFactor,
}

impl SepTerm {
    pub fn new(phi: XFactor, psi: Option<StochasticField>, g: TrigSeries) -> Self {
        Self { phi, psi, g, eta: TimeFactor::One }
    }

    pub fn with_time(mut self, eta: TimeFactor) -> Self {
        self.eta = eta;
        self
    }

    fn psi_at(&self, w: &[f64]) -> f64 {
        self.psi.as_ref().map_or(1.0, |p| p.eval(w))
    }
}

/// Finite sum of separable terms on `Q x Omega x Y` (optionally times `eta(t)`).
#[derive(Debug, Clone)]
pub struct SeparableField {
    domain: BoxDomain,
    terms: Vec<SepTerm>,
}

impl SeparableField {
    pub fn new(domain: BoxDomain, terms: Vec<SepTerm>) -> Self {
        Self { domain, terms }
    }

    pub fn zero(domain: BoxDomain) -> Self {
        Self { domain, terms: Vec::new() }
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn terms(&self) -> &[SepTerm] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn plus(mut self, other: SeparableField) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            domain: self.domain.clone(),
            terms: self.terms.iter().map(|t| SepTerm { phi: t.phi.scaled(s), ..t.clone() }).collect(),
        }
    }

    /// Non-oscillating value `f(t, x, w, y)`.
    pub fn eval(&self, t: f64, x: &[f64], w: &[f64], y: &[f64]) -> f64 {
        self.terms.iter().map(|s| s.eta.eval(t) * s.phi.eval(x) * s.psi_at(w) * s.g.eval(y)).sum()
    }

    /// `x`-derivative of the field.
    pub fn partial_x(&self, axis: usize) -> Self {
        let terms = self.terms.iter().map(|s| SepTerm { phi: s.phi.partial(axis), ..s.clone() }).collect();
        Self { domain: self.domain.clone(), terms }
    }

    /// Spectral stochastic derivative of every `psi` factor.
    pub fn partial_omega(&self, axis: usize) -> Result<Self> {
        let mut terms = Vec::new();
        for s in &self.terms {
            if let Some(p) = &s.psi {
                terms.push(SepTerm { psi: Some(stoch_derivative(p, axis)?), ..s.clone() });
            }
        }
        Ok(Self { domain: self.domain.clone(), terms })
    }

    pub fn partial_y(&self, axis: usize) -> Self {
        let terms = self.terms.iter().map(|s| SepTerm { g: s.g.partial(axis), ..s.clone() }).collect();
        Self { domain: self.domain.clone(), terms }
    }

    fn oscillating_unchecked(&self, t: f64, x: &[f64], w: &[f64], eps: f64) -> f64 {
        let e2 = eps * eps;
        let dim = x.len();
        if dim <= 4 {
            let mut sw = [0.0f64; 4];
            let mut sy = [0.0f64; 4];
            for a in 0..dim {
                sw[a] = wrap(x[a] / eps + w[a]);
                sy[a] = wrap(x[a] / e2);
            }
            return self.eval(t, x, &sw[..dim], &sy[..dim]);
        }
        let sw: Vec<f64> = x.iter().zip(w).map(|(xa, wa)| wrap(xa / eps + wa)).collect();
        let sy: Vec<f64> = x.iter().map(|xa| wrap(xa / e2)).collect();
        self.eval(t, x, &sw, &sy)
    }
}

/// Admissible test function: every `phi` vanishes on the boundary of `Q`,
/// every `g` is 1-periodic.
#[derive(Debug, Clone)]
pub struct SeparableTestFunction {
    field: SeparableField,
}

impl SeparableTestFunction {
    pub fn new(domain: BoxDomain, terms: Vec<SepTerm>) -> Self {
        Self { field: SeparableField::new(domain, terms) }
    }

    pub fn single(domain: BoxDomain, phi: XFactor, psi: Option<StochasticField>, g: TrigSeries) -> Self {
        Self::new(domain, vec![SepTerm::new(phi, psi, g)])
    }

    pub fn field(&self) -> &SeparableField {
        &self.field
    }

    pub fn terms(&self) -> &[SepTerm] {
        self.field.terms()
    }

    pub fn domain(&self) -> &BoxDomain {
        self.field.domain()
    }

    pub fn with_time(&self, eta: TimeFactor) -> Self {
        let terms = self.field.terms.iter().map(|t| t.clone().with_time(eta.clone())).collect();
        Self::new(self.domain().clone(), terms)
    }

    /// Verify compact support in `Q` (sampled on the boundary) and periodicity of `g`.
    pub fn check_admissible(&self) -> Result<()> {
        let dom = self.domain();
        let dim = dom.dim();
        let n: usize = 33;
        for (i, term) in self.terms().iter().enumerate() {
            for axis in 0..dim {
                for side in [dom.lo()[axis], dom.hi()[axis]] {
                    for idx in 0..n.pow(dim as u32 - 1) {
                        let mut x = Vec::with_capacity(dim);
                        let mut rest = unflatten(idx, dim.saturating_sub(1).max(1), n).into_iter();
                        for a in 0..dim {
                            if a == axis {
                                x.push(side);
                            } else {
                                let j = rest.next().unwrap_or(0);
                                x.push(dom.lo()[a] + dom.len(a) * j as f64 / (n - 1) as f64);
                            }
                        }
                        let v = term.phi.eval(&x);
                        if v.abs() > 1e-12 {
                            return Err(Error::Inadmissible(format!("term {i}: phi = {v:e} on the boundary at {x:?}")));
                        }
                    }
                }
            }
            let defect = term.g.periodicity_defect(dim);
            if defect > 1e-12 {
                return Err(Error::Inadmissible(format!("term {i}: g not periodic (defect {defect:e})")));
            }
        }
        Ok(())
    }
}

/// `sum phi_i(x) psi_i(T(x/eps)w) g_i(x/eps^2 mod 1)`.
pub fn oscillating_eval(f: &SeparableTestFunction, x: &[f64], w: &OmegaSample, eps: f64) -> Result<f64> {
    oscillating_eval_t(f, 0.0, x, w, eps)
}

pub fn oscillating_eval_t(f: &SeparableTestFunction, t: f64, x: &[f64], w: &OmegaSample, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    if !f.domain().contains(x) {
        return Err(Error::OutOfDomain { point: x.to_vec() });
    }
    if w.coords().len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: w.coords().len() });
    }
    Ok(f.field.oscillating_unchecked(t, x, w.coords(), eps))
}

/// How `d mu` is integrated.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OmegaMode {
    /// Uniform `M^N` grid, exact for band-limited integrands of degree `< M`.
    FullGrid { resolution: usize },
    /// `samples` independent Haar draws seeded by `seed`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Uniform time grid `t_k = k T / steps`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::Invalid(format!("time grid needs positive horizon and steps, got ({horizon}, {steps})")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.horizon * k as f64 / self.steps as f64).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let dt = self.horizon / self.steps as f64;
        (0..=self.steps).map(|k| if k == 0 || k == self.steps { 0.5 * dt } else { dt }).collect()
    }
}

/// Trapezoid rule on an arbitrary increasing time grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let parts: Vec<f64> = times.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).collect();
    pairwise_sum(&parts)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureSpec {
    /// Midpoint points per axis on `Q`.
    pub x_res: usize,
    pub omega: OmegaMode,
    pub time: Option<TimeGrid>,
    /// Midpoint points per axis on `Y` for non-separable limits.
    pub y_res: usize,
}

impl QuadratureSpec {
    pub fn new(x_res: usize, omega: OmegaMode) -> Self {
        Self { x_res, omega, time: None, y_res: 16 }
    }

    pub fn with_time(mut self, time: TimeGrid) -> Self {
        self.time = Some(time);
        self
    }

    pub fn with_y_res(mut self, y_res: usize) -> Self {
        self.y_res = y_res;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_res > 0
            && self.y_res > 0
            && match self.omega {
                OmegaMode::FullGrid { resolution } => resolution > 0,
                OmegaMode::MonteCarlo { samples, .. } => samples > 0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("quadrature resolutions must be positive: {self:?}")))
        }
    }

    /// Omega nodes with weights, for dimension `dim`.
    pub fn omega_nodes(&self, dim: usize) -> Result<(Vec<Vec<f64>>, Option<usize>)> {
        match self.omega {
            OmegaMode::FullGrid { resolution } => {
                let d = TorusDynamics::new(dim, resolution)?;
                Ok(((0..d.grid_len()).map(|i| d.grid_point(i)).collect(), None))
            }
            OmegaMode::MonteCarlo { samples, seed: s } => Ok((
                (0..samples).map(|k| OmegaSample::random(dim, seed::derive(s, &[k as u64])).coords().to_vec()).collect(),
                Some(samples),
            )),
        }
    }

    /// Enforce at least four midpoints per `eps^2` cell per axis.
    pub fn check_resolved(&self, domain: &BoxDomain, eps: f64) -> Result<()> {
        let e2 = eps * eps;
        let points = (0..domain.dim()).map(|a| self.x_res as f64 * e2 / domain.len(a)).fold(f64::INFINITY, f64::min);
        if points < MIN_POINTS_PER_CELL as f64 {
            return Err(Error::ScaleUnresolved { points, required: MIN_POINTS_PER_CELL });
        }
        Ok(())
    }
}

/// Quadrature value together with its Monte-Carlo standard error (0 for exact modes).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub mc_error: f64,
}

/// A field `u(x, w)` on `Q x Omega`.
pub type QField<'a> = &'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync);
/// A field `u(t, x, w)` on `[0,T] x Q x Omega`.
pub type TQField<'a> = &'a (dyn Fn(f64, &[f64], &[f64]) -> f64 + Sync);

fn combine(per_sample: Vec<Vec<f64>>, mc: Option<usize>, nf: usize) -> Vec<Estimate> {
    let ns = per_sample.len();
    (0..nf)
        .map(|j| {
            let vals: Vec<f64> = per_sample.iter().map(|s| s[j]).collect();
            let mean = pairwise_sum(&vals) / ns as f64;
            let mc_error = match mc {
                Some(n) if n > 1 => {
                    let dev: Vec<f64> = vals.iter().map(|v| (v - mean).powi(2)).collect();
                    (pairwise_sum(&dev) / (n as f64 - 1.0) / n as f64).sqrt()
                }
                _ => 0.0,
            };
            Estimate { value: mean, mc_error }
        })
        .collect()
}

/// Integrate `integrand(x, w)` over `Q` (midpoint) and `Omega` (per `q.omega`),
/// returning one estimate per output channel.
fn integrate_channels(
    domain: &BoxDomain,
    q: &QuadratureSpec,
    channels: usize,
    integrand: &(dyn Fn(&[f64], &[f64], &mut [f64]) + Sync),
) -> Result<Vec<Estimate>> {
    q.validate()?;
    let dim = domain.dim();
    let (nodes, mc) = q.omega_nodes(dim)?;
    let res = q.x_res;
    let cell = domain.volume() / (res.pow(dim as u32)) as f64;
    let rows = res;
    let inner = res.pow(dim as u32 - 1);
    let per_sample: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|w| {
            let mut row_sums = vec![vec![0.0; rows]; channels];
            let mut buf = vec![0.0; channels];
            let mut x = vec![0.0; dim];
            for r in 0..rows {
                let mut acc = vec![0.0; channels];
                for i in 0..inner {
                    let idx = r * inner + i;
                    let mut rem = idx;
                    for a in (0..dim).rev() {
                        let j = rem % res;
                        rem /= res;
                        x[a] = domain.lo()[a] + (j as f64 + 0.5) * domain.len(a) / res as f64;
                    }
                    integrand(&x, w, &mut buf);
                    for c in 0..channels {
                        acc[c] += buf[c];
                    }
                }
                for c in 0..channels {
                    row_sums[c][r] = acc[c];
                }
            }
            row_sums.iter().map(|rs| pairwise_sum(rs) * cell).collect()
        })
        .collect();
    Ok(combine(per_sample, mc, channels))
}

/// `int_{Q x Omega} u(x,w) f(x, T(x/eps)w, x/eps^2)` for several test functions at once.
pub fn pair_integrals(u: QField, fs: &[SeparableTestFunction], eps: f64, q: &QuadratureSpec) -> Result<Vec<Estimate>> {
    pair_integrals_at(u, fs, eps, q, 0.0)
}

fn pair_integrals_at(
    u: QField,
    fs: &[SeparableTestFunction],
    eps: f64,
    q: &QuadratureSpec,
    t: f64,
) -> Result<Vec<Estimate>> {
    let Some(first) = fs.first() else {
        return Ok(Vec::new());
    };
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let domain = first.domain().clone();
    q.check_resolved(&domain, eps)?;
    integrate_channels(&domain, q, fs.len(), &|x, w, out| {
        let uv = u(x, w);
        if uv == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        for (o, f) in out.iter_mut().zip(fs) {
            *o = uv * f.field.oscillating_unchecked(t, x, w, eps);
        }
    })
}

pub fn pair_integral(u: QField, f: &SeparableTestFunction, eps: f64, q: &QuadratureSpec) -> Result<Estimate> {
    Ok(pair_integrals(u, std::slice::from_ref(f), eps, q)?[0])
}

/// Time pairing `int_0^T int u(t,x,w) f(t, x, T(x/eps)w, x/eps^2)` with trapezoid weights on `q.time`.
pub fn pair_integrals_t(u: TQField, fs: &[SeparableTestFunction], eps: f64, q: &QuadratureSpec) -> Result<Vec<Estimate>> {
    let grid = q.time.ok_or(Error::TimeGrid("quadrature has no time grid".into()))?;
    let mut acc = vec![Estimate { value: 0.0, mc_error: 0.0 }; fs.len()];
    let mut var = vec![0.0; fs.len()];
    for (t, wt) in grid.times().into_iter().zip(grid.weights()) {
        let ut = |x: &[f64], w: &[f64]| u(t, x, w);
        let est = pair_integrals_at(&ut, fs, eps, q, t)?;
        for ((a, v), e) in acc.iter_mut().zip(var.iter_mut()).zip(est) {
            a.value += wt * e.value;
            *v += (wt * e.mc_error).powi(2);
        }
    }
    for (a, v) in acc.iter_mut().zip(var) {
        a.mc_error = v.sqrt();
    }
    Ok(acc)
}

/// Candidate two-scale limit `u0(x, w, y)` (optionally time-dependent).
#[derive(Clone)]
pub enum Candidate {
    Separable(SeparableField),
    General(Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>),
}

impl From<SeparableField> for Candidate {
    fn from(s: SeparableField) -> Self {
        Candidate::Separable(s)
    }
}

fn omega_product(a: Option<&StochasticField>, b: Option<&StochasticField>) -> f64 {
    match (a, b) {
        (None, None) => 1.0,
        (Some(p), None) | (None, Some(p)) => p.mean(),
        (Some(p), Some(r)) => {
            let (fine, other) = if p.dynamics().resolution() >= r.dynamics().resolution() { (p, r) } else { (r, p) };
            let d = fine.dynamics();
            let prods: Vec<f64> = (0..d.grid_len()).map(|i| fine.values()[i] * other.eval(&d.grid_point(i))).collect();
            pairwise_sum(&prods) / prods.len() as f64
        }
    }
}

fn trig_1d_integral(ka: i64, ha: Trig, kb: i64, hb: Trig) -> f64 {
    let n = 2 * (ka.unsigned_abs() + kb.unsigned_abs()) as usize + 2;
    let vals: Vec<f64> = (0..n)
        .map(|j| {
            let y = (j as f64 + 0.5) / n as f64;
            h(ha, 2.0 * PI * ka as f64 * y) * h(hb, 2.0 * PI * kb as f64 * y)
        })
        .collect();
    pairwise_sum(&vals) / n as f64
}

fn y_product(a: &TrigSeries, b: &TrigSeries) -> f64 {
    let mut acc = 0.0;
    for ta in &a.terms {
        for tb in &b.terms {
            let mut p = ta.coef * tb.coef;
            for axis in 0..ta.freq.len() {
                p *= trig_1d_integral(ta.freq[axis], ta.kind[axis], tb.freq[axis], tb.kind[axis]);
            }
            acc += p;
        }
    }
    acc
}

fn x_product(domain: &BoxDomain, res: usize, a: &XFactor, b: &XFactor) -> f64 {
    let cell = domain.volume() / res.pow(domain.dim() as u32) as f64;
    let vals: Vec<f64> = domain.midpoints(res).map(|x| a.eval(&x) * b.eval(&x)).collect();
    pairwise_sum(&vals) * cell
}

/// `int_{Q x Omega x Y} u0 f` at time `t`.
fn triple_at(u0: &Candidate, f: &SeparableTestFunction, q: &QuadratureSpec, t: f64) -> Result<f64> {
    q.validate()?;
    let domain = f.domain();
    match u0 {
        Candidate::Separable(s) => {
            let mut acc = 0.0;
            for a in s.terms() {
                for b in f.terms() {
                    let tpart = a.eta.eval(t) * b.eta.eval(t);
                    if tpart == 0.0 {
                        continue;
                    }
                    let wpart = omega_product(a.psi.as_ref(), b.psi.as_ref());
                    if wpart == 0.0 {
                        continue;
                    }
                    let ypart = y_product(&a.g, &b.g);
                    if ypart == 0.0 {
                        continue;
                    }
                    acc += tpart * wpart * ypart * x_product(domain, q.x_res, &a.phi, &b.phi);
                }
            }
            Ok(acc)
        }
        Candidate::General(g) => {
            let dim = domain.dim();
            let ygrid = BoxDomain::unit(dim);
            let ys: Vec<Vec<f64>> = ygrid.midpoints(q.y_res).collect();
            let est = integrate_channels(domain, q, 1, &|x, w, out| {
                let vals: Vec<f64> = ys.iter().map(|y| g(t, x, w, y) * f.field.eval(t, x, w, y)).collect();
                out[0] = pairwise_sum(&vals) / ys.len() as f64;
            })?;
            Ok(est[0].value)
        }
    }
}

/// Non-oscillating triple integral `int_{Q x Omega x Y} u0 f`.
pub fn triple_integral(u0: &Candidate, f: &SeparableTestFunction, q: &QuadratureSpec) -> Result<f64> {
    triple_at(u0, f, q, 0.0)
}

/// Time-integrated triple integral `int_0^T int u0 f` (trapezoid on `q.time`).
pub fn triple_integral_t(u0: &Candidate, f: &SeparableTestFunction, q: &QuadratureSpec) -> Result<f64> {
    let grid = q.time.ok_or(Error::TimeGrid("quadrature has no time grid".into()))?;
    let mut acc = 0.0;
    for (t, wt) in grid.times().into_iter().zip(grid.weights()) {
        acc += wt * triple_at(u0, f, q, t)?;
    }
    Ok(acc)
}

/// One row of a norm-convergence table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NormRow {
    pub eps: f64,
    pub lhs: f64,
    pub mc_error: f64,
    pub limit: f64,
    pub error: f64,
}

/// `int_{Q x Omega} |f^eps|^p` against `int_{Q x Omega x Y} |f|^p` over the ladder `eps_list`.
pub fn norm_convergence_check(f: &SeparableTestFunction, p: f64, eps_list: &[f64], q: &QuadratureSpec) -> Result<Vec<NormRow>> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Invalid(format!("p must lie in [1, inf), got {p}")));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("eps list must be strictly decreasing".into()));
    }
    let limit = norm_limit(f, p, q)?;
    let domain = f.domain().clone();
    eps_list
        .iter()
        .map(|&eps| {
            q.check_resolved(&domain, eps)?;
            let est = integrate_channels(&domain, q, 1, &|x, w, out| {
                out[0] = f.field.oscillating_unchecked(0.0, x, w, eps).abs().powf(p);
            })?;
            let lhs = est[0].value;
            Ok(NormRow { eps, lhs, mc_error: est[0].mc_error, limit, error: (lhs - limit).abs() })
        })
        .collect()
}

/// `int |f|^p` over `Q x Omega x Y`; factorizes exactly for single-term `f`.
pub fn norm_limit(f: &SeparableTestFunction, p: f64, q: &QuadratureSpec) -> Result<f64> {
    let domain = f.domain();
    let dim = domain.dim();
    if let [term] = f.terms() {
        let xs: Vec<f64> = domain.midpoints(q.x_res).map(|x| term.phi.eval(&x).abs().powf(p)).collect();
        let xpart = pairwise_sum(&xs) * domain.volume() / xs.len() as f64;
        let wpart = match &term.psi {
            None => 1.0,
            Some(psi) => {
                let vals: Vec<f64> = psi.values().iter().map(|v| v.abs().powf(p)).collect();
                pairwise_sum(&vals) / vals.len() as f64
            }
        };
        let ny = q.y_res.max(4 * term.g.max_freq() + 4);
        let ys: Vec<f64> = BoxDomain::unit(dim).midpoints(ny).map(|y| term.g.eval(&y).abs().powf(p)).collect();
        let ypart = pairwise_sum(&ys) / ys.len() as f64;
        return Ok(xpart * wpart * ypart);
    }
    let ys: Vec<Vec<f64>> = BoxDomain::unit(dim).midpoints(q.y_res).collect();
    let est = integrate_channels(domain, q, 1, &|x, w, out| {
        let vals: Vec<f64> = ys.iter().map(|y| f.field.eval(0.0, x, w, y).abs().powf(p)).collect();
        out[0] = pairwise_sum(&vals) / ys.len() as f64;
    })?;
    Ok(est[0].value)
}

/// `(int_{Q x Omega} u^2)^{1/2}` with the given quadrature.
pub fn l2_norm(u: QField, domain: &BoxDomain, q: &QuadratureSpec) -> Result<f64> {
    let est = integrate_channels(domain, q, 1, &|x, w, out| out[0] = u(x, w).powi(2))?;
    Ok(est[0].value.max(0.0).sqrt())
}

/// `(int_{Q x Omega} |f^eps|^2)^{1/2}`.
pub fn oscillating_l2_norm(f: &SeparableTestFunction, eps: f64, q: &QuadratureSpec) -> Result<f64> {
    q.check_resolved(f.domain(), eps)?;
    let est = integrate_channels(f.domain(), q, 1, &|x, w, out| {
        out[0] = f.field.oscillating_unchecked(0.0, x, w, eps).powi(2);
    })?;
    Ok(est[0].value.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoxDomain {
        BoxDomain::unit(2)
    }

    fn torus(m: usize) -> TorusDynamics {
        TorusDynamics::new(2, m).unwrap()
    }

    fn full(res: usize, m: usize) -> QuadratureSpec {
        QuadratureSpec::new(res, OmegaMode::FullGrid { resolution: m })
    }

    #[test]
    fn oscillating_examples() {
        let d = torus(8);
        let bump = XFactor::Bump { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0], power: 2 };
        let f = SeparableTestFunction::single(unit(), bump.clone(), None, TrigSeries::constant(2, 1.0));
        let w = OmegaSample::new(vec![0.3, 0.9], 0);
        let x = [0.3, 0.6];
        assert!((oscillating_eval(&f, &x, &w, 0.37).unwrap() - bump.eval(&x)).abs() < 1e-15);
        let s1 = TrigSeries::product(1.0, &[(Trig::Sin, 1), (Trig::Cos, 0)]);
        let f = SeparableTestFunction::single(unit(), XFactor::Const(1.0), Some(s1.to_field(d)), TrigSeries::constant(2, 1.0));
        let v = oscillating_eval(&f, &[0.25, 0.0], &OmegaSample::new(vec![0.0, 0.0], 0), 0.5).unwrap();
        assert!(v.abs() < 1e-14);
        let f = SeparableTestFunction::single(unit(), XFactor::Const(1.0), None, s1);
        let v = oscillating_eval(&f, &[0.125, 0.0], &OmegaSample::new(vec![0.0, 0.0], 0), 0.5).unwrap();
        assert!(v.abs() < 1e-14);
        assert!(oscillating_eval(&f, &[1.2, 0.0], &w, 0.5).is_err());
    }

    #[test]
    fn pairing_examples() {
        let d = torus(8);
        let q = full(64, 8);
        let bump = XFactor::Bump { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0], power: 2 };
        let f = SeparableTestFunction::single(unit(), bump.clone(), None, TrigSeries::constant(2, 1.0));
        let zero = |_: &[f64], _: &[f64]| 0.0;
        let e = pair_integral(&zero, &f, 0.5, &q).unwrap();
        assert_eq!((e.value, e.mc_error), (0.0, 0.0));
        let one = |_: &[f64], _: &[f64]| 1.0;
        let phi_int = x_product(&unit(), 64, &bump, &XFactor::Const(1.0));
        assert!((pair_integral(&one, &f, 0.5, &q).unwrap().value - phi_int).abs() < 1e-14);
        let s1 = TrigSeries::product(1.0, &[(Trig::Sin, 1), (Trig::Cos, 0)]).to_field(d);
        let f = SeparableTestFunction::single(unit(), bump, Some(s1), TrigSeries::constant(2, 1.0));
        for eps in [0.5, 0.25] {
            assert!(pair_integral(&one, &f, eps, &q).unwrap().value.abs() < 1e-14);
        }
        assert!(matches!(pair_integral(&one, &f, 0.1, &q), Err(Error::ScaleUnresolved { .. })));
    }

    #[test]
    fn triple_examples() {
        let q = full(32, 4);
        let f = SeparableTestFunction::single(
            unit(),
            XFactor::Const(1.0),
            None,
            TrigSeries::product(1.0, &[(Trig::Sin, 1), (Trig::Cos, 0)]),
        );
        let zero = Candidate::Separable(SeparableField::zero(unit()));
        assert_eq!(triple_integral(&zero, &f, &q).unwrap(), 0.0);
        let u0 = SeparableField::new(
            unit(),
            vec![SepTerm::new(XFactor::Const(1.0), None, TrigSeries::product(1.0, &[(Trig::Sin, 1), (Trig::Cos, 0)]))],
        );
        assert!((triple_integral(&u0.into(), &f, &q).unwrap() - 0.5).abs() < 1e-14);
        let general = Candidate::General(Arc::new(|_, _, _, y: &[f64]| (2.0 * PI * y[0]).sin()));
        assert!((triple_integral(&general, &f, &q).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_reports_error() {
        let d = torus(8);
        let psi = TrigSeries::product(1.0, &[(Trig::Cos, 1), (Trig::Cos, 0)]).to_field(d);
        let f = SeparableTestFunction::single(
            unit(),
            XFactor::Bump { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0], power: 1 },
            Some(psi.clone()),
            TrigSeries::constant(2, 1.0),
        );
        let u = |x: &[f64], w: &[f64]| psi.eval(&[wrap(x[0] / 0.5 + w[0]), w[1]]);
        let q = QuadratureSpec::new(32, OmegaMode::MonteCarlo { samples: 64, seed: 3 });
        let a = pair_integral(&u, &f, 0.5, &q).unwrap();
        let b = pair_integral(&u, &f, 0.5, &q).unwrap();
        assert_eq!(a, b);
        assert!(a.mc_error > 0.0);
        let exact = pair_integral(&u, &f, 0.5, &full(32, 8)).unwrap();
        assert!((a.value - exact.value).abs() < 5.0 * a.mc_error + 1e-12);
    }

    #[test]
    fn norm_examples() {
        let q = full(64, 4);
        let bump = XFactor::Bump { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0], power: 2 };
        let f = SeparableTestFunction::single(unit(), bump, None, TrigSeries::constant(2, 1.0));
        for row in norm_convergence_check(&f, 2.0, &[0.5, 0.25], &q).unwrap() {
            assert!(row.error < 1e-14);
        }
        assert!(norm_convergence_check(&f, 0.5, &[0.5], &q).is_err());
        assert!(norm_convergence_check(&f, 2.0, &[0.25, 0.5], &q).is_err());
    }

    #[test]
    fn trig_partial_and_time() {
        let g = TrigSeries::product(2.0, &[(Trig::Sin, 1), (Trig::Cos, 2)]);
        let dg = g.partial(1);
        let y = [0.3, 0.1];
        let exact = -2.0 * (2.0 * PI * 0.3f64).sin() * 4.0 * PI * (4.0 * PI * 0.1f64).sin();
        assert!((dg.eval(&y) - exact).abs() < 1e-12);
        assert_eq!(TimeFactor::Poly(vec![1.0, 2.0, 3.0]).eval(2.0), 17.0);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        assert!((grid.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn admissibility() {
        let ok = SeparableTestFunction::single(
            unit(),
            XFactor::Bump { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0], power: 2 },
            None,
            TrigSeries::constant(2, 1.0),
        );
        assert!(ok.check_admissible().is_ok());
        let bad = SeparableTestFunction::single(unit(), XFactor::Const(1.0), None, TrigSeries::constant(2, 1.0));
        assert!(bad.check_admissible().is_err());
    }
}
