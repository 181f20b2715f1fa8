//! Two-scale convergence diagnostics along a fundamental sequence.

use crate::dynsys::{stoch_gradient, StochasticField, TorusDynamics};
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::testfn::{
    l2_norm, pair_integrals, pair_integrals_t, triple_integral, triple_integral_t, Candidate, QuadratureSpec,
    SepTerm, SeparableField, SeparableTestFunction, Trig, TrigSeries, XFactor,
};
use serde::Serialize;
use std::fmt::Write as _;

/// Strictly decreasing `eps` values in `(0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EpsSequence(Vec<f64>);

impl EpsSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("eps sequence is empty".into()));
        }
        if values.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::Invalid(format!("eps values must lie in (0,1]: {values:?}")));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid(format!("eps values must strictly decrease: {values:?}")));
        }
        Ok(Self(values))
    }

    /// `{1/2, 1/3, 1/4, 1/6, 1/8}`.
    pub fn default_ladder() -> Self {
        Self(vec![0.5, 1.0 / 3.0, 0.25, 1.0 / 6.0, 0.125])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn smallest(&self) -> f64 {
        *self.0.last().expect("non-empty by construction")
    }
}

/// Pass/fail thresholds of the trend test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Thresholds {
    /// Final relative error bound for nonzero limits.
    pub rel: f64,
    /// Final absolute error bound for zero limits.
    pub abs_zero: f64,
    /// Errors below `floor * max(1, |limit|)` count as exact.
    pub floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { rel: 0.05, abs_zero: 1e-3, floor: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub f_id: String,
    pub eps: f64,
    pub pairing: f64,
    pub mc_error: f64,
    pub limit: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionVerdict {
    pub f_id: String,
    pub limit: f64,
    pub median_ratio: Option<f64>,
    pub final_error: f64,
    pub final_relative: Option<f64>,
    pub trend_ok: bool,
    pub final_ok: bool,
    pub rate: Option<f64>,
}

/// Per-eps pairings against candidate limits with an aggregate verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub check: String,
    pub rows: Vec<ReportRow>,
    pub functions: Vec<FunctionVerdict>,
    /// `(eps, ||u_eps||_{L^2(Q x Omega)})`, reported without gating.
    pub norms: Vec<(f64, f64)>,
    pub pass: bool,
    pub rate: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Least-squares slope of `ln e` against `ln eps`.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(e, v)| (e.ln(), v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Trend verdict for an error ladder ordered by decreasing `eps`.
pub fn trend_verdict(f_id: &str, eps: &[f64], errors: &[f64], limit: f64, th: &Thresholds) -> FunctionVerdict {
    let floor = th.floor * limit.abs().max(1.0);
    let clamped: Vec<f64> = errors.iter().map(|e| e.max(floor)).collect();
    let ratios: Vec<f64> = clamped.windows(2).map(|w| w[1] / w[0]).collect();
    let median_ratio = median(ratios);
    let final_error = *errors.last().unwrap_or(&0.0);
    let all_exact = errors.iter().all(|&e| e <= floor);
    let final_exact = final_error <= floor;
    let trend_ok = all_exact
        || match median_ratio {
            Some(m) => m < 1.0 || (m <= 1.0 && final_exact),
            None => final_exact,
        };
    let zero_limit = limit.abs() <= 1e-12;
    let final_relative = (!zero_limit).then(|| final_error / limit.abs());
    let final_ok = match final_relative {
        Some(r) => r <= th.rel,
        None => final_error <= th.abs_zero,
    };
    let pts: Vec<(f64, f64)> = eps.iter().zip(errors).filter(|(_, &e)| e > floor).map(|(&a, &b)| (a, b)).collect();
    FunctionVerdict {
        f_id: f_id.to_string(),
        limit,
        median_ratio,
        final_error,
        final_relative,
        trend_ok,
        final_ok,
        rate: log_slope(&pts),
    }
}

impl ConvergenceReport {
    fn assemble(check: &str, rows: Vec<ReportRow>, norms: Vec<(f64, f64)>, th: &Thresholds) -> Self {
        let mut ids: Vec<String> = Vec::new();
        for r in &rows {
            if !ids.contains(&r.f_id) {
                ids.push(r.f_id.clone());
            }
        }
        let functions: Vec<FunctionVerdict> = ids
            .iter()
            .map(|id| {
                let sel: Vec<&ReportRow> = rows.iter().filter(|r| &r.f_id == id).collect();
                let eps: Vec<f64> = sel.iter().map(|r| r.eps).collect();
                let errs: Vec<f64> = sel.iter().map(|r| r.abs_error).collect();
                trend_verdict(id, &eps, &errs, sel[0].limit, th)
            })
            .collect();
        let pass = functions.iter().all(|f| f.trend_ok && f.final_ok);
        let rate = median(functions.iter().filter_map(|f| f.rate).collect());
        Self { check: check.to_string(), rows, functions, norms, pass, rate }
    }

    /// RFC-4180 CSV with columns `f_id,eps,pairing,mc_error,limit,abs_error`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("f_id,eps,pairing,mc_error,limit,abs_error\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:e},{:e},{:e},{:e},{:e}", r.f_id, r.eps, r.pairing, r.mc_error, r.limit, r.abs_error);
        }
        s
    }

    pub fn max_final_relative(&self) -> f64 {
        self.functions.iter().filter_map(|f| f.final_relative).fold(0.0, f64::max)
    }
}

/// Named test function.
pub type NamedTest = (String, SeparableTestFunction);

/// A family `eps -> u_eps(x, w)`.
pub type Family<'a> = &'a (dyn Fn(f64, &[f64], &[f64]) -> f64 + Sync);
/// A family `eps -> u_eps(t, x, w)`.
pub type TimeFamily<'a> = &'a (dyn Fn(f64, f64, &[f64], &[f64]) -> f64 + Sync);
/// A vector family `eps -> v_eps(x, w)` written into the output slice.
pub type VectorFamily<'a> = &'a (dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Sync);

fn check_fset(fset: &[NamedTest]) -> Result<&BoxDomain> {
    let first = fset.first().ok_or(Error::EmptyTestSet)?;
    for (id, f) in fset {
        f.check_admissible().map_err(|e| Error::Inadmissible(format!("{id}: {e}")))?;
    }
    Ok(first.1.domain())
}

fn run_pairings(
    check: &str,
    family: Family,
    limits: &[(String, &SeparableTestFunction, f64)],
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    let domain = limits[0].1.domain().clone();
    let fs: Vec<SeparableTestFunction> = limits.iter().map(|l| l.1.clone()).collect();
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    for &eps in eps_seq.values() {
        let u = |x: &[f64], w: &[f64]| family(eps, x, w);
        let est = pair_integrals(&u, &fs, eps, q)?;
        for ((id, _, limit), e) in limits.iter().zip(est) {
            rows.push(ReportRow {
                f_id: id.clone(),
                eps,
                pairing: e.value,
                mc_error: e.mc_error,
                limit: *limit,
                abs_error: (e.value - limit).abs(),
            });
        }
        norms.push((eps, l2_norm(&u, &domain, q)?));
    }
    Ok(ConvergenceReport::assemble(check, rows, norms, th))
}

/// Weak two-scale convergence of `u_eps` to `u0` tested on `fset`.
pub fn check_weak_2s(
    u_family: Family,
    u0: &Candidate,
    fset: &[NamedTest],
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    check_fset(fset)?;
    let limits = fset
        .iter()
        .map(|(id, f)| Ok((id.clone(), f, triple_integral(u0, f, q)?)))
        .collect::<Result<Vec<_>>>()?;
    run_pairings("weak", u_family, &limits, eps_seq, q, th)
}

/// Fixed battery of macroscopic test functions used by the mean check.
pub fn x_battery(domain: &BoxDomain) -> Vec<(String, XFactor)> {
    let dim = domain.dim();
    let sub = |a: f64, b: f64| {
        let lo = (0..dim).map(|i| domain.lo()[i] + a * domain.len(i)).collect::<Vec<f64>>();
        let hi = (0..dim).map(|i| domain.lo()[i] + b * domain.len(i)).collect::<Vec<f64>>();
        (lo, hi)
    };
    let (lo0, hi0) = sub(0.0, 1.0);
    let (lo1, hi1) = sub(0.1, 0.6);
    let (lo2, hi2) = sub(0.3, 0.95);
    vec![
        ("phi0".into(), XFactor::Bump { lo: lo0.clone(), hi: hi0.clone(), power: 2 }),
        ("phi1".into(), XFactor::Bump { lo: lo1, hi: hi1, power: 2 }),
        ("phi2".into(), XFactor::Bump { lo: lo2, hi: hi2, power: 3 }),
        ("phi3".into(), {
            let bump = XFactor::Bump { lo: lo0, hi: hi0, power: 2 };
            let lo = domain.lo().to_vec();
            let len: Vec<f64> = (0..dim).map(|i| domain.len(i)).collect();
            XFactor::Custom(std::sync::Arc::new(move |x: &[f64]| bump.eval(x) * (1.0 + (x[0] - lo[0]) / len[0])))
        }),
    ]
}

/// Mean convergence: `int_Omega u_eps psi dmu -> int int u0 psi` weakly in `L^1(Q)`,
/// with `v0(x, w)` the candidate `int_Y u0 dy`.
pub fn check_mean_2s(
    u_family: Family,
    v0: &Candidate,
    psi: &StochasticField,
    domain: &BoxDomain,
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    let defect = stoch_gradient(psi).iter().map(|g| g.rms()).fold(0.0, f64::max);
    if defect > 1e-10 * psi.rms().max(1.0) {
        return Err(Error::NonInvariant(defect));
    }
    let dim = domain.dim();
    let fset: Vec<NamedTest> = x_battery(domain)
        .into_iter()
        .map(|(id, phi)| (id, SeparableTestFunction::single(domain.clone(), phi, Some(psi.clone()), TrigSeries::constant(dim, 1.0))))
        .collect();
    let limits = fset
        .iter()
        .map(|(id, f)| Ok((id.clone(), f, triple_integral(v0, f, q)?)))
        .collect::<Result<Vec<_>>>()?;
    run_pairings("mean", u_family, &limits, eps_seq, q, th)
}

fn five_point(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

fn check_mean_zero_omega(u1: &SeparableField) -> Result<()> {
    for (i, t) in u1.terms().iter().enumerate() {
        let m = t.psi.as_ref().map_or(1.0, |p| p.mean());
        let scale = t.psi.as_ref().map_or(1.0, |p: &StochasticField| p.rms());
        if m.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::Invalid(format!("omega-corrector term {i} has nonzero mean {m:e}")));
        }
    }
    Ok(())
}

fn check_mean_zero_y(u2: &SeparableField) -> Result<()> {
    let dim = u2.dim();
    for (i, t) in u2.terms().iter().enumerate() {
        let m: f64 = t.g.terms.iter().filter(|tt| tt.freq.iter().all(|&k| k == 0)).map(|tt| {
            if tt.kind.iter().all(|&k| k == Trig::Cos) { tt.coef } else { 0.0 }
        }).sum();
        if m.abs() > 1e-12 {
            return Err(Error::Invalid(format!("y-corrector term {i} (dim {dim}) has nonzero cell mean {m:e}")));
        }
    }
    Ok(())
}

fn split_rows(
    check: &str,
    components: Vec<(String, Box<dyn Fn(f64, &[f64], &[f64]) -> f64 + Sync + '_>, SeparableField)>,
    fset: &[NamedTest],
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    let domain = fset[0].1.domain().clone();
    let fs: Vec<SeparableTestFunction> = fset.iter().map(|f| f.1.clone()).collect();
    for (cid, fam, limit_field) in &components {
        let cand = Candidate::Separable(limit_field.clone());
        let limits: Vec<f64> = fs.iter().map(|f| triple_integral(&cand, f, q)).collect::<Result<_>>()?;
        for &eps in eps_seq.values() {
            let u = |x: &[f64], w: &[f64]| fam(eps, x, w);
            let est = pair_integrals(&u, &fs, eps, q)?;
            for (((id, _), limit), e) in fset.iter().zip(&limits).zip(est) {
                rows.push(ReportRow {
                    f_id: format!("{cid}:{id}"),
                    eps,
                    pairing: e.value,
                    mc_error: e.mc_error,
                    limit: *limit,
                    abs_error: (e.value - limit).abs(),
                });
            }
            if cid == &components[0].0 {
                norms.push((eps, l2_norm(&u, &domain, q)?));
            }
        }
    }
    Ok(ConvergenceReport::assemble(check, rows, norms, th))
}

/// Step for finite differences of oscillating families.
fn fd_step(eps: f64) -> f64 {
    1e-3 * eps * eps
}

/// `D u_eps -> D u0 + D_w u1 + D_y u2`, each gradient component tested on `fset`.
pub fn check_gradient_splitting(
    u_family: Family,
    limits: (&SeparableField, &SeparableField, &SeparableField),
    fset: &[NamedTest],
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    let domain = check_fset(fset)?;
    let dim = domain.dim();
    let (u0, u1, u2) = limits;
    check_mean_zero_omega(u1)?;
    check_mean_zero_y(u2)?;
    let mut comps: Vec<(String, Box<dyn Fn(f64, &[f64], &[f64]) -> f64 + Sync + '_>, SeparableField)> = Vec::new();
    for i in 0..dim {
        let lim = u0.partial_x(i).plus(u1.partial_omega(i)?).plus(u2.partial_y(i));
        let fam = move |eps: f64, x: &[f64], w: &[f64]| {
            let mut p = x.to_vec();
            five_point(
                |s| {
                    p[i] = x[i] + s;
                    u_family(eps, &p, w)
                },
                fd_step(eps),
            )
        };
        comps.push((format!("d{}", i + 1), Box::new(fam), lim));
    }
    split_rows("gradient", comps, fset, eps_seq, q, th)
}

/// `div v_eps -> div v0 + div_w v1 + div_y v2` tested on `fset`.
pub fn check_divergence_splitting(
    v_family: VectorFamily,
    limits: (&[SeparableField], &[SeparableField], &[SeparableField]),
    fset: &[NamedTest],
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    let domain = check_fset(fset)?;
    let dim = domain.dim();
    let (v0, v1, v2) = limits;
    if v0.len() != dim || v1.len() != dim || v2.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: v0.len().min(v1.len()).min(v2.len()) });
    }
    let mut lim = SeparableField::zero(domain.clone());
    for i in 0..dim {
        check_mean_zero_omega(&v1[i])?;
        check_mean_zero_y(&v2[i])?;
        lim = lim.plus(v0[i].partial_x(i)).plus(v1[i].partial_omega(i)?).plus(v2[i].partial_y(i));
    }
    let fam = move |eps: f64, x: &[f64], w: &[f64]| {
        let mut p = x.to_vec();
        let mut out = vec![0.0; dim];
        let mut div = 0.0;
        for i in 0..dim {
            div += five_point(
                |s| {
                    p[i] = x[i] + s;
                    v_family(eps, &p, w, &mut out);
                    p[i] = x[i];
                    out[i]
                },
                fd_step(eps),
            );
        }
        div
    };
    let comps: Vec<(String, Box<dyn Fn(f64, &[f64], &[f64]) -> f64 + Sync + '_>, SeparableField)> =
        vec![("div".into(), Box::new(fam), lim)];
    split_rows("divergence", comps, fset, eps_seq, q, th)
}

/// Time-dependent version: `int_0^T` pairings against `int_0^T` triple integrals.
pub fn check_time_2s(
    u_family: TimeFamily,
    u0: &Candidate,
    fset: &[NamedTest],
    eps_seq: &EpsSequence,
    q: &QuadratureSpec,
    th: &Thresholds,
) -> Result<ConvergenceReport> {
    check_fset(fset)?;
    let grid = q.time.ok_or(Error::TimeGrid("quadrature has no time grid".into()))?;
    let fs: Vec<SeparableTestFunction> = fset.iter().map(|f| f.1.clone()).collect();
    let limits: Vec<f64> = fs.iter().map(|f| triple_integral_t(u0, f, q)).collect::<Result<_>>()?;
    let domain = fs[0].domain().clone();
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    for &eps in eps_seq.values() {
        let u = |t: f64, x: &[f64], w: &[f64]| u_family(eps, t, x, w);
        let est = pair_integrals_t(&u, &fs, eps, q)?;
        for (((id, _), limit), e) in fset.iter().zip(&limits).zip(est) {
            rows.push(ReportRow {
                f_id: id.clone(),
                eps,
                pairing: e.value,
                mc_error: e.mc_error,
                limit: *limit,
                abs_error: (e.value - limit).abs(),
            });
        }
        let mut sq = 0.0;
        for (t, wt) in grid.times().into_iter().zip(grid.weights()) {
            let ut = |x: &[f64], w: &[f64]| u(t, x, w);
            sq += wt * l2_norm(&ut, &domain, q)?.powi(2);
        }
        norms.push((eps, sq.sqrt()));
    }
    Ok(ConvergenceReport::assemble("time", rows, norms, th))
}

/// Twelve separable functions spanning frequencies {0,1,2} in each factor.
pub fn default_battery(domain: &BoxDomain, dyn_sys: TorusDynamics) -> Vec<NamedTest> {
    let dim = domain.dim();
    let phis = x_battery(domain);
    let g_factor = |k: i64, kind: Trig| {
        let mut f = vec![(Trig::Cos, 0); dim];
        f[0] = (kind, k);
        TrigSeries::product(1.0, &f)
    };
    let gs = [g_factor(0, Trig::Cos), g_factor(1, Trig::Sin), g_factor(2, Trig::Cos)];
    let psis = [
        None,
        Some(StochasticField::from_fn(dyn_sys, |w| (2.0 * std::f64::consts::PI * w[0]).cos())),
        Some(StochasticField::from_fn(dyn_sys, |w| {
            (4.0 * std::f64::consts::PI * w.iter().sum::<f64>()).sin()
        })),
    ];
    let mut out = Vec::new();
    for (a, psi) in psis.iter().enumerate() {
        for (b, g) in gs.iter().enumerate() {
            let (pid, phi) = &phis[(a + b) % phis.len()];
            let id = format!("{pid}-w{a}-y{b}");
            out.push((id, SeparableTestFunction::single(domain.clone(), phi.clone(), psi.clone(), g.clone())));
        }
    }
    for (pid, phi) in phis.iter().skip(1) {
        out.push((format!("{pid}-mix"), SeparableTestFunction::new(domain.clone(), vec![
            SepTerm::new(phi.clone(), psis[1].clone(), gs[1].clone()),
            SepTerm::new(phi.clone(), None, gs[2].clone()),
        ])));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_sequence_validation() {
        assert!(EpsSequence::new(vec![0.5, 0.25]).is_ok());
        assert!(EpsSequence::new(vec![0.25, 0.5]).is_err());
        assert!(EpsSequence::new(vec![-0.5]).is_err());
        assert!(EpsSequence::new(vec![]).is_err());
    }

    #[test]
    fn trend_rules() {
        let th = Thresholds::default();
        let v = trend_verdict("a", &[0.5, 0.25, 0.125], &[0.1, 0.05, 0.01], 1.0, &th);
        assert!(v.trend_ok && v.final_ok);
        let v = trend_verdict("b", &[0.5, 0.25, 0.125], &[0.01, 0.05, 0.1], 1.0, &th);
        assert!(!v.trend_ok && !v.final_ok);
        let v = trend_verdict("c", &[0.5, 0.25, 0.125], &[1e-17, 0.0, 2e-17], 0.5, &th);
        assert!(v.trend_ok && v.final_ok);
        let v = trend_verdict("d", &[0.5, 0.25, 0.125], &[1e-3, 1e-18, 1e-18], 0.5, &th);
        assert!(v.trend_ok);
        let v = trend_verdict("z", &[0.5, 0.25], &[2e-3, 5e-4], 0.0, &th);
        assert!(v.final_ok && v.final_relative.is_none());
        let slope = log_slope(&[(0.5, 0.25), (0.25, 0.0625)]).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn battery_has_twelve_admissible_members() {
        let d = TorusDynamics::new(2, 8).unwrap();
        let b = default_battery(&BoxDomain::unit(2), d);
        assert_eq!(b.len(), 12);
        for (_, f) in &b {
            f.check_admissible().unwrap();
        }
    }
}
