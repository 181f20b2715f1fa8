//! The five study types. Each returns its artifacts in memory; the caller persists them.

use std::f64::consts::PI;

use fissure_core::dynsys::{self, OmegaSample, StochasticField, TorusDynamics};
use fissure_core::epsolver::{self, energy_check, StepOptions};
use fissure_core::geometry::BoxDomain;
use fissure_core::limitsolver::{self, CellGrids, LimitSolver, MacroSeries};
use fissure_core::mac::MacGrid;
use fissure_core::scenario::MediumSpec;
use fissure_core::seed;
use fissure_core::testfn::{Candidate, OmegaMode, QuadratureSpec, SepTerm, SeparableField, Trig, TrigSeries, XFactor};
use fissure_core::twoscale::{check_weak_2s, default_battery, EpsSequence, Thresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Converge, Dyncheck, ExperimentConfig, Family, Homogenize, Simulate, Study, Twoscale};

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn csv<T: Serialize>(name: &str, rows: &[T]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).expect("in-memory csv");
        }
        Self { name: name.into(), bytes: w.into_inner().expect("in-memory csv") }
    }

    fn json(name: &str, value: &serde_json::Value) -> Self {
        Self { name: name.into(), bytes: serde_json::to_vec_pretty(value).expect("json value") }
    }
}

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub summary: serde_json::Value,
    pub pass: bool,
}

pub fn run(cfg: &ExperimentConfig) -> fissure_core::Result<Outcome> {
    match &cfg.study {
        Study::Dyncheck(d) => dyncheck(d, cfg.seed),
        Study::Twoscale(t) => twoscale(t, cfg.seed),
        Study::Simulate(s) => simulate(s, &cfg.medium, cfg.seed),
        Study::Homogenize(h) => homogenize(h, &cfg.medium, cfg.seed),
        Study::Converge(c) => converge(c, &cfg.medium, cfg.seed),
    }
}

#[derive(Serialize)]
struct CheckRow {
    check: &'static str,
    resolution: usize,
    value: f64,
    tolerance: f64,
    pass: bool,
    seed: u64,
}

fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..1u64 << 20) as f64 / (1u64 << 20) as f64
}

fn random_field(d: TorusDynamics, rng: &mut ChaCha8Rng, mean_zero: bool) -> StochasticField {
    let terms: Vec<(f64, f64, [f64; 2])> = (0..4)
        .map(|_| {
            let k = loop {
                let k = [rng.random_range(-3i32..=3) as f64, rng.random_range(-3i32..=3) as f64];
                if !mean_zero || k != [0.0, 0.0] {
                    break k;
                }
            };
            (rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI), k)
        })
        .collect();
    StochasticField::from_fn(d, move |w| terms.iter().map(|&(a, ph, k)| a * (2.0 * PI * (k[0] * w[0] + k[1] * w[1]) + ph).cos()).sum())
}

fn dyncheck(p: &Dyncheck, master: u64) -> fissure_core::Result<Outcome> {
    let s = seed::derive(master, &[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let mut rows = Vec::new();

    let d = TorusDynamics::new(2, p.max_resolution)?;
    let mut defect = 0.0f64;
    for _ in 0..p.draws {
        let y1 = [dyadic(&mut rng), dyadic(&mut rng)];
        let y2 = [dyadic(&mut rng), dyadic(&mut rng)];
        let w = OmegaSample::new(vec![dyadic(&mut rng), dyadic(&mut rng)], 0);
        let a = d.act(&[y1[0] + y2[0], y1[1] + y2[1]], &w);
        let b = d.act(&y1, &d.act(&y2, &w));
        defect = a.coords().iter().zip(b.coords()).map(|(x, y)| (x - y).abs()).fold(defect, f64::max);
    }
    rows.push(CheckRow { check: "group_law", resolution: p.max_resolution, value: defect, tolerance: 0.0, pass: defect == 0.0, seed: s });

    let mut broken = 0usize;
    for m in 1..=p.max_resolution {
        let d = TorusDynamics::new(2, m)?;
        let shift = [rng.random_range(0..3 * m), rng.random_range(0..3 * m)];
        let mut perm = d.grid_shift_permutation(&shift);
        perm.sort_unstable();
        broken += usize::from(perm.iter().enumerate().any(|(i, &v)| i != v));
    }
    rows.push(CheckRow { check: "grid_bijectivity", resolution: p.max_resolution, value: broken as f64, tolerance: 0.0, pass: broken == 0, seed: s });

    let d = TorusDynamics::new(2, p.resolution)?;
    let ys: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let mut consistency = 0.0f64;
    let mut round_trip = 0.0f64;
    for j in 0..p.fields {
        let f = random_field(d, &mut rng, false);
        let w = OmegaSample::random(2, seed::derive(s, &[j as u64]));
        consistency = consistency.max(dynsys::realization_consistency(&f, &w, &ys)?);
        let phi = random_field(d, &mut rng, true);
        let back = dynsys::stoch_potential(&dynsys::stoch_gradient(&phi))?;
        round_trip = round_trip.max(back.sub(&phi)?.max_abs() / phi.max_abs());
    }
    rows.push(CheckRow { check: "realization_consistency", resolution: p.resolution, value: consistency, tolerance: 1e-8, pass: consistency <= 1e-8, seed: s });
    rows.push(CheckRow { check: "potential_round_trip", resolution: p.resolution, value: round_trip, tolerance: 1e-10, pass: round_trip <= 1e-10, seed: s });

    let pass = rows.iter().all(|r| r.pass);
    let verdicts: serde_json::Map<String, serde_json::Value> = rows.iter().map(|r| (r.check.to_string(), json!(r.pass))).collect();
    let summary = json!({ "all_pass": pass, "checks": verdicts });
    Ok(Outcome { artifacts: vec![Artifact::csv("checks.csv", &rows), Artifact::json("verdict.json", &summary)], summary, pass })
}

#[derive(Serialize)]
struct PairingRow<'a> {
    f_id: &'a str,
    eps: f64,
    pairing: f64,
    limit: f64,
    abs_error: f64,
    mc_error: f64,
    seed: u64,
    x_resolution: usize,
    omega_resolution: usize,
}

fn twoscale(p: &Twoscale, master: u64) -> fissure_core::Result<Outcome> {
    let domain = BoxDomain::unit(2);
    let d = TorusDynamics::new(2, 8)?;
    let battery = default_battery(&domain, d);
    let ladder = EpsSequence::new(p.eps.clone())?;
    let q = QuadratureSpec::new(p.x_resolution, OmegaMode::FullGrid { resolution: p.omega_resolution });
    let th = Thresholds { rel: p.rel_tol, ..Thresholds::default() };
    let sin_y = TrigSeries::product(1.0, &[(Trig::Sin, 1), (Trig::Cos, 0)]);
    let cos_w = StochasticField::from_fn(d, |w| (2.0 * PI * w[0]).cos());
    let (psi, g) = match p.family {
        Family::Periodic => (None, sin_y),
        Family::Stochastic => (Some(cos_w), TrigSeries::constant(2, 1.0)),
        Family::Mixed => (Some(cos_w), sin_y),
    };
    let u0 = Candidate::Separable(SeparableField::new(domain, vec![SepTerm::new(XFactor::Const(1.0), psi, g)]));
    let family = p.family;
    let u_eps = move |eps: f64, x: &[f64], w: &[f64]| {
        let per = (2.0 * PI * x[0] / (eps * eps)).sin();
        let sto = (2.0 * PI * (w[0] + x[0] / eps)).cos();
        match family {
            Family::Periodic => per,
            Family::Stochastic => sto,
            Family::Mixed => per * sto,
        }
    };
    let report = check_weak_2s(&u_eps, &u0, &battery, &ladder, &q, &th)?;
    let rows: Vec<PairingRow> = report
        .rows
        .iter()
        .map(|r| PairingRow {
            f_id: &r.f_id,
            eps: r.eps,
            pairing: r.pairing,
            limit: r.limit,
            abs_error: r.abs_error,
            mc_error: r.mc_error,
            seed: master,
            x_resolution: p.x_resolution,
            omega_resolution: p.omega_resolution,
        })
        .collect();
    let summary = json!({
        "check": report.check,
        "pass": report.pass,
        "max_final_relative": report.max_final_relative(),
        "rate": report.rate,
        "functions": report.functions,
        "norms": report.norms,
    });
    let artifacts = vec![Artifact::csv("pairings.csv", &rows), Artifact::json("report.json", &summary)];
    Ok(Outcome { artifacts, summary, pass: report.pass })
}

#[derive(Serialize)]
struct EnergyCsvRow {
    sample: usize,
    seed: u64,
    eps: f64,
    grid: usize,
    step: usize,
    t: f64,
    kinetic: f64,
    dissipation_cum: f64,
    work_cum: f64,
    slack: f64,
}

#[derive(Serialize)]
struct RunRow {
    sample: usize,
    seed: u64,
    eps: f64,
    grid: usize,
    l2_time_norm: f64,
    max_div: f64,
    energy_pass: bool,
    viscous_iterations: usize,
    pressure_iterations: usize,
}

fn snapshot(t: f64, grid: &MacGrid, name: &str, u: &[f64]) -> fissure_core::Result<Vec<u8>> {
    let mut buf = Vec::new();
    epsolver::write_snapshot(&mut buf, t, grid, name, u)?;
    Ok(buf)
}

fn simulate(p: &Simulate, medium: &MediumSpec, master: u64) -> fissure_core::Result<Outcome> {
    let problem = medium.problem(p.eps)?;
    let grid = MacGrid::unit(p.grid);
    let opts = StepOptions::new(p.dt);
    let runs = (0..p.samples)
        .into_par_iter()
        .map(|s| {
            let sd = seed::derive(master, &[0, s as u64]);
            let (traj, states) = epsolver::solve(&problem, &grid, &OmegaSample::random(2, sd), opts, p.snapshot_stride)?;
            Ok((s, sd, traj, states))
        })
        .collect::<fissure_core::Result<Vec<_>>>()?;
    let mut energy = Vec::new();
    let mut summary_rows = Vec::new();
    let mut artifacts = Vec::new();
    for (s, sd, traj, states) in &runs {
        energy.extend(traj.energy.rows.iter().map(|r| EnergyCsvRow {
            sample: *s,
            seed: *sd,
            eps: p.eps,
            grid: p.grid,
            step: r.step,
            t: r.t,
            kinetic: r.kinetic,
            dissipation_cum: r.dissipation_cum,
            work_cum: r.work_cum,
            slack: r.slack,
        }));
        summary_rows.push(RunRow {
            sample: *s,
            seed: *sd,
            eps: p.eps,
            grid: p.grid,
            l2_time_norm: traj.l2_time_norm(),
            max_div: traj.max_div,
            energy_pass: energy_check(&traj.energy, 1e-8).pass,
            viscous_iterations: traj.iterations.0,
            pressure_iterations: traj.iterations.1,
        });
        for (k, st) in states.iter().enumerate() {
            artifacts.push(Artifact { name: format!("u_s{s}_{k:04}.snap"), bytes: snapshot(st.t, &grid, "u", &st.u)? });
        }
        let last = &traj.final_state;
        artifacts.push(Artifact { name: format!("u_s{s}_final.snap"), bytes: snapshot(last.t, &grid, "u", &last.u)? });
    }
    let pass = summary_rows.iter().all(|r| r.energy_pass && r.max_div <= 1e-10);
    let summary = json!({ "pass": pass, "runs": summary_rows });
    artifacts.insert(0, Artifact::csv("energy.csv", &energy));
    artifacts.insert(1, Artifact::csv("runs.csv", &summary_rows));
    Ok(Outcome { artifacts, summary, pass })
}

#[derive(Serialize)]
struct SeriesRow {
    t: f64,
    grid: usize,
    l2: f64,
    kinetic: f64,
    dissipation_cum: f64,
    work_cum: f64,
    slack: f64,
}

fn homogenize(p: &Homogenize, medium: &MediumSpec, master: u64) -> fissure_core::Result<Outcome> {
    let problem = medium.problem(0.5)?;
    let omega = TorusDynamics::new(2, medium.omega_resolution)?;
    let solver = LimitSolver::new(&problem, CellGrids { y_res: p.y_resolution, omega })?;
    let grid = MacGrid::unit(p.macro_grid);
    let table = solver.effective_table(&grid)?;
    let traj = solver.solve(&grid, StepOptions::new(p.dt), |_| {})?;
    let rows: Vec<SeriesRow> = traj
        .energy
        .rows
        .iter()
        .zip(&traj.norm_sq)
        .map(|(r, n)| SeriesRow {
            t: r.t,
            grid: p.macro_grid,
            l2: n.sqrt(),
            kinetic: r.kinetic,
            dissipation_cum: r.dissipation_cum,
            work_cum: r.work_cum,
            slack: r.slack,
        })
        .collect();
    let energy_pass = energy_check(&traj.energy, 1e-8).pass;
    let pass = energy_pass && traj.max_div <= 1e-10;
    let summary = json!({
        "pass": pass,
        "seed": master,
        "corrector_keys": solver.cached_keys(),
        "energy_pass": energy_pass,
        "max_div": traj.max_div,
        "l2_time_norm": traj.l2_time_norm(),
    });
    let artifacts = vec![
        Artifact::json("effective_table.json", &serde_json::to_value(&table).expect("table serializes")),
        Artifact::csv("limit.csv", &rows),
        Artifact::json("result.json", &summary),
    ];
    Ok(Outcome { artifacts, summary, pass })
}

#[derive(Serialize)]
struct LadderCsvRow {
    eps: f64,
    distance: f64,
    samples: usize,
    seed: u64,
    fine_grid: usize,
    macro_grid: usize,
}

fn converge(p: &Converge, medium: &MediumSpec, master: u64) -> fissure_core::Result<Outcome> {
    let coarse = MacGrid::unit(p.macro_grid);
    let opts = StepOptions::new(p.dt);
    let omega = TorusDynamics::new(2, medium.omega_resolution)?;
    let solver = LimitSolver::new(&medium.problem(p.eps[0])?, CellGrids { y_res: p.y_resolution, omega })?;
    let (limit, _) = limitsolver::limit_series(&solver, &coarse, opts)?;
    let mut runs = Vec::new();
    for (i, (&eps, &n)) in p.eps.iter().zip(&p.fine_grids).enumerate() {
        let problem = medium.problem(eps)?;
        let fine = MacGrid::unit(n);
        let ensemble = (0..p.samples)
            .into_par_iter()
            .map(|s| {
                let w = OmegaSample::random(2, seed::derive(master, &[i as u64, s as u64]));
                limitsolver::eps_series(&problem, &fine, &coarse, &w, opts).map(|r| r.0)
            })
            .collect::<fissure_core::Result<Vec<MacroSeries>>>()?;
        runs.push((eps, ensemble));
    }
    let ladder = limitsolver::compare_to_eps(&limit, &runs)?;
    let rows: Vec<LadderCsvRow> = ladder
        .rows
        .iter()
        .zip(&p.fine_grids)
        .map(|(r, &n)| LadderCsvRow { eps: r.eps, distance: r.distance, samples: r.samples, seed: master, fine_grid: n, macro_grid: p.macro_grid })
        .collect();
    let pass = ladder.trend_ok && ladder.reduction.is_some_and(|r| r < 0.7);
    let summary = json!({
        "pass": pass,
        "trend_ok": ladder.trend_ok,
        "median_ratio": ladder.median_ratio,
        "reduction": ladder.reduction,
    });
    let artifacts = vec![Artifact::csv("ladder.csv", &rows), Artifact::json("verdict.json", &summary)];
    Ok(Outcome { artifacts, summary, pass })
}
