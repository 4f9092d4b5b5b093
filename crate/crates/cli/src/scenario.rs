//! Scenario execution and artifact export.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use gcf_core::diagnostics::{self, corrupt, run_checks, BoundsLedger, CheckContext, CheckId, CheckReport};
use gcf_core::flow::{complementarity_residual, continuation, detect_coincidence_time, sphere_radius};
use gcf_core::free_boundary::{
    boundary_probes, coincidence_set, extract_patch, fit_blowup, monotonicity_probe, nondegeneracy_probe, rescale,
    speed_near_boundary, thickness, FreeBoundaryReport, GraphPatch,
};
use gcf_core::{Obstacle, PenalizedFlow, ScalarField, SphericalGrid, Trajectory};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{CorruptionSpec, ProbeSpec, ScenarioConfig};

/// Slack of the non-degeneracy margins, in units of `v`.
pub const NONDEGENERACY_TOL: f64 = 1e-6;
/// Slack of the directional monotonicity margins.
pub const MONOTONICITY_TOL: f64 = 1e-6;
/// Sample count of the obstacle validation over `[0, t_end]`.
const VALIDATION_SAMPLES: usize = 65;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioError::Config(_) => "config",
            ScenarioError::Solver(_) => "solver",
            ScenarioError::Io(_) => "output",
        }
    }
}

fn solver<E: std::fmt::Display>(e: E) -> ScenarioError {
    ScenarioError::Solver(e.to_string())
}

/// Reports of one invocation; exit 0 iff every report passes.
#[derive(Debug)]
pub struct Outcome {
    pub reports: Vec<CheckReport>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            2
        }
    }

    pub fn failing(&self) -> Vec<&str> {
        self.reports.iter().filter(|r| !r.pass).map(|r| r.id.as_str()).collect()
    }
}

struct Setup {
    u0: ScalarField,
    obstacle: Option<Obstacle>,
}

fn setup(cfg: &ScenarioConfig) -> Result<Setup, ScenarioError> {
    let grid = cfg.grid().map_err(|e| ScenarioError::Config(e.to_string()))?;
    let u0 = cfg.shape(&cfg.initial, &grid).map_err(ScenarioError::Config)?;
    let obstacle = cfg.obstacle(&grid).map_err(ScenarioError::Config)?;
    Ok(Setup { u0, obstacle })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    f(&mut out)?;
    out.flush()
}

fn apply_corruption(traj: &mut Trajectory, spec: Option<CorruptionSpec>) {
    match spec {
        Some(CorruptionSpec::InjectPenalty { factor }) => corrupt::inject_penalty(traj, factor),
        Some(CorruptionSpec::ReverseTime) => corrupt::reverse_time(traj),
        Some(CorruptionSpec::FlattenLast { scale }) => corrupt::flatten_last(traj, scale),
        Some(CorruptionSpec::PerturbWindows { amplitude }) => corrupt::perturb_windows(traj, amplitude),
        Some(CorruptionSpec::CapSnapshots { cap }) => corrupt::cap_snapshots(traj, cap),
        Some(CorruptionSpec::CapPatch { .. }) | None => {}
    }
}

/// `(deltas, runs, continuation distances, complementarity residuals)`.
type Integrated = (Vec<f64>, Vec<Trajectory>, Option<Vec<f64>>, Option<Vec<f64>>);

/// Runs the flow (a δ-continuation when the schedule has several entries).
/// Returns every run; the last one is the scenario trajectory.
fn integrate(cfg: &ScenarioConfig, s: &Setup) -> Result<Integrated, ScenarioError> {
    let cadence = cfg.cadence();
    match &s.obstacle {
        None => {
            let flow = PenalizedFlow::free(cfg.alpha).map_err(solver)?;
            Ok((Vec::new(), vec![flow.run(s.u0.clone(), cfg.t_end, cadence).map_err(solver)?], None, None))
        }
        Some(ob) => {
            let schedule = cfg.delta_schedule(&s.u0, ob);
            let res = continuation(&s.u0, ob, cfg.alpha, &schedule, cfg.penalty, cfg.t_end, cadence).map_err(solver)?;
            Ok((res.deltas, res.trajectories, Some(res.distances), Some(res.residuals)))
        }
    }
}

/// Sphere-only reference runs on the grid coarsened by 2 and 4, over the
/// scenario horizon (capped before extinction), give `C_res`.
fn calibrate_residual(cfg: &ScenarioConfig, u0: &ScalarField) -> Result<f64, ScenarioError> {
    let r0 = u0.max();
    let e = cfg.grid.n as f64 * cfg.alpha + 1.0;
    let horizon = cfg.t_end.min(0.9 * r0.powf(e) / e);
    let mut refs = Vec::new();
    for div in [2, 4] {
        let res: Vec<usize> = cfg.grid.resolution.iter().map(|m| m / div).collect();
        let Ok(grid) = SphericalGrid::new(cfg.grid.n, &res) else { continue };
        let flow = PenalizedFlow::free(cfg.alpha).map_err(solver)?;
        refs.push(
            flow.run(ScalarField::constant(grid, r0), horizon, cfg.cadence().min(horizon / 4.0)).map_err(solver)?,
        );
    }
    if refs.is_empty() {
        return Err(ScenarioError::Config("grid too coarse to calibrate the residual constant".into()));
    }
    diagnostics::calibrate_residual_constant(&refs.iter().collect::<Vec<_>>()).map_err(solver)
}

struct FreeBoundaryRun {
    patch: GraphPatch,
    report: FreeBoundaryReport,
    checks: Vec<CheckReport>,
    summary: Value,
}

fn probe_free_boundary(
    spec: &ProbeSpec,
    traj: &Trajectory,
    ob: &Obstacle,
    corruption: Option<CorruptionSpec>,
) -> Result<FreeBoundaryRun, ScenarioError> {
    let mut patch =
        extract_patch(traj, ob, spec.center, spec.half_width, spec.points, (spec.window[0], spec.window[1]))
            .map_err(solver)?;
    if let Some(CorruptionSpec::CapPatch { cap }) = corruption {
        patch = patch.with_capped_gap(cap);
    }
    let residual = complementarity_residual(traj, ob).map_err(solver)?;
    let tol_c = spec.tol_c.unwrap_or(10.0 * residual);
    let mut report = coincidence_set(&patch, tol_c).map_err(solver)?;
    let mut checks = Vec::new();

    let recessions = report.recessions();
    checks.push(CheckReport::from_margin(
        "coincidence_growth",
        if recessions.is_empty() { 0.0 } else { -(recessions.len() as f64) },
        false,
        recessions.first().map(|&(k, _)| patch.times()[k]),
        &[("recessions", recessions.len() as f64), ("tol_c", tol_c)],
    ));

    let r_max = spec.radii.iter().copied().fold(0.0, f64::max);
    let probes = boundary_probes(&patch, &report, r_max, spec.probe_count);
    let mut worst = if probes.len() < spec.probe_count { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut worst_time = None;
    for &(k, c) in &probes {
        let x0 = patch.position(c);
        let t0 = patch.times()[k];
        let nd = nondegeneracy_probe(&patch, x0, t0, &spec.radii).map_err(solver)?;
        for &m in &nd.margins {
            if m + NONDEGENERACY_TOL < worst {
                worst = m + NONDEGENERACY_TOL;
                worst_time = Some(t0);
            }
        }
        report.nondegeneracy.push(nd);
        let r = spec.radii[0];
        let value = thickness(&patch, &report, x0, k, r).map_err(solver)?;
        report.thickness.push(gcf_core::free_boundary::ThicknessSample { x0, t0, r, value });
    }
    checks.push(CheckReport::from_margin(
        "nondegeneracy",
        worst,
        false,
        worst_time,
        &[("probes", probes.len() as f64), ("theta", patch.ellipticity()), ("forcing_lower", patch.forcing_lower())],
    ));

    let speeds = speed_near_boundary(&patch, &report, &spec.distances);
    let speed_margin = speeds.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let mut named: Vec<(String, f64)> =
        spec.distances.iter().zip(&speeds).map(|(d, s)| (format!("speed_within_{d}_cells"), *s)).collect();
    named.sort_by(|a, b| a.0.cmp(&b.0));
    let named_ref: Vec<(&str, f64)> = named.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    checks.push(CheckReport::from_margin("boundary_speed_decay", speed_margin, true, None, &named_ref));

    // zoom chain at a boundary point whose first rescaled box fits the patch
    let zoom_radius = spec.zoom.first().copied().unwrap_or(1.0) * spec.half_width;
    let anchor = boundary_probes(&patch, &report, zoom_radius, 1).first().copied();
    let mut slopes = Vec::new();
    let mut zoom_summary = Value::Null;
    if let Some((k, c)) = anchor {
        let mut level = rescale(&patch, patch.position(c), patch.times()[k], spec.zoom[0]).map_err(solver)?;
        let mut levels = vec![level.clone()];
        for &r in &spec.zoom[1..] {
            level = rescale(&level, [0.0, 0.0], 0.0, r).map_err(solver)?;
            levels.push(level.clone());
        }
        let mut level_reports = Vec::new();
        for z in &levels {
            let rz = coincidence_set(z, z.rescaled_threshold(tol_c)).map_err(solver)?;
            slopes.push(gcf_core::free_boundary::boundary_slope(z, &rz, None).map_err(solver)?);
            level_reports.push(rz);
        }
        let (deep, deep_report) = (levels.last().unwrap(), level_reports.last().unwrap());
        let mono = monotonicity_probe(deep, deep_report, &spec.kappas, spec.c_kappa, None, MONOTONICITY_TOL).ok();
        report.monotonicity = mono;
        let fit = fit_blowup(deep, deep.rescaled_threshold(tol_c)).ok();
        zoom_summary = json!({
            "x0": patch.position(c),
            "t0": patch.times()[k],
            "factors": spec.zoom,
            "blowup_fit": fit,
        });
    }
    report.lipschitz = slopes.clone();
    let lip_margin = if slopes.len() < 2 {
        f64::NEG_INFINITY
    } else {
        slopes.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
    };
    let named: Vec<(String, f64)> = slopes.iter().enumerate().map(|(i, s)| (format!("level_{}", i + 1), *s)).collect();
    let named_ref: Vec<(&str, f64)> = named.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    checks.push(CheckReport::from_margin("lipschitz_zoom", lip_margin, true, None, &named_ref));

    let summary = json!({
        "tol_c": tol_c,
        "complementarity_residual": residual,
        "theta": patch.ellipticity(),
        "forcing_lower": patch.forcing_lower(),
        "in_hypothesis": patch.in_hypothesis(),
        "contact_counts": report.contact_counts(),
        "speeds": speeds,
        "lipschitz": slopes,
        "zoom": zoom_summary,
        "monotonicity_min_margin": report.monotonicity.as_ref().map(|m| m.min_margin),
    });
    Ok(FreeBoundaryRun { patch, report, checks, summary })
}

fn write_free_boundary(out: &Path, fb: &FreeBoundaryRun) -> io::Result<()> {
    write_with(&out.join("patch.csv"), |w| fb.patch.write_csv(w))?;
    write_json(&out.join("free_boundary.json"), &fb.report)
}

/// `gcf run`: flow, diagnostics, probes and artifacts.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Outcome, ScenarioError> {
    let s = setup(cfg)?;
    fs::create_dir_all(out)?;
    let (deltas, mut runs, distances, residuals) = integrate(cfg, &s)?;
    let mut traj = runs.pop().expect("at least one run");
    apply_corruption(&mut traj, cfg.corrupt);

    let ledger: Option<BoundsLedger> = match &s.obstacle {
        Some(ob) => Some(diagnostics::ledger(&s.u0, ob, cfg.alpha, cfg.t_end).map_err(solver)?),
        None => None,
    };
    let ids = cfg.check_ids();
    let residual_constant = match (ids.contains(&CheckId::EvolutionResidual), cfg.residual_constant) {
        (false, _) => None,
        (true, Some(c)) => Some(c),
        (true, None) => Some(calibrate_residual(cfg, &s.u0)?),
    };
    let ctx =
        CheckContext { trajectory: &traj, obstacle: s.obstacle.as_ref(), ledger: ledger.as_ref(), residual_constant };
    let mut reports = run_checks(&ctx, &ids).map_err(solver)?;
    let mut summary = serde_json::Map::new();
    summary.insert("name".into(), json!(cfg.name));
    summary.insert("alpha".into(), json!(cfg.alpha));
    summary.insert("dimension".into(), json!(cfg.grid.n));
    summary.insert("resolution".into(), json!(cfg.grid.resolution));
    summary.insert("t_end".into(), json!(cfg.t_end));
    summary.insert("cadence".into(), json!(cfg.cadence()));
    summary.insert("deltas".into(), json!(deltas));
    summary.insert("steps".into(), json!(traj.records.len()));
    summary.insert("residual_constant".into(), json!(residual_constant));
    if let Some(l) = &ledger {
        summary.insert("ledger".into(), json!(l.constants()));
    }

    if let Some(r) = &cfg.reference {
        let rep = diagnostics::check_sphere_radius(&traj, r.sphere_radius, r.tol);
        summary
            .insert("exact_radius".into(), json!(sphere_radius(r.sphere_radius, cfg.grid.n, cfg.alpha, traj.last().t)));
        reports.push(rep);
    }

    if let Some(ob) = &s.obstacle {
        if let Some(tol) = cfg.coincidence_tol {
            let c = detect_coincidence_time(&traj, ob, tol).map_err(solver)?;
            let margin = c.detected.map_or(f64::NEG_INFINITY, |t| c.certified_bound - t);
            reports.push(CheckReport::from_margin(
                "coincidence_time",
                margin,
                false,
                c.detected,
                &[("certified_bound", c.certified_bound), ("rho", c.rho), ("tol", tol)],
            ));
            summary.insert("coincidence".into(), json!(c));
        }
        if deltas.len() > 1 {
            runs.push(traj);
            let (d, r) = (distances.expect("continuation"), residuals.expect("continuation"));
            let decrease = d.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
            reports.push(CheckReport::from_margin("continuation_distances", decrease, true, None, &[]));
            let mut lower = f64::INFINITY;
            let mut at = None;
            for (run, &delta) in runs.iter().zip(&deltas) {
                for rec in &run.records {
                    if rec.min_gap + 2.0 * delta < lower {
                        lower = rec.min_gap + 2.0 * delta;
                        at = Some(rec.t);
                    }
                }
                for snap in &run.snapshots {
                    let (phi, _) = ob.evaluate_on(snap.u.grid(), snap.t).map_err(solver)?;
                    let gap = snap.u.zip_map(&phi, |a, b| a - b).map_err(solver)?.min();
                    if gap + 2.0 * delta < lower {
                        lower = gap + 2.0 * delta;
                        at = Some(snap.t);
                    }
                }
            }
            reports.push(CheckReport::from_margin("continuation_lower_bound", lower, false, at, &[]));
            let (first, last) = (r[0], *r.last().unwrap());
            reports.push(CheckReport::from_margin(
                "complementarity_reduction",
                0.5 * first - last,
                false,
                None,
                &[("first", first), ("last", last)],
            ));
            summary.insert("continuation".into(), json!({ "distances": d, "residuals": r }));
            traj = runs.pop().expect("pushed above");
        }
        if let Some(p) = &cfg.probe {
            let fb = probe_free_boundary(p, &traj, ob, cfg.corrupt)?;
            reports.extend(fb.checks.iter().cloned());
            summary.insert("free_boundary".into(), fb.summary.clone());
            write_free_boundary(out, &fb)?;
        }
    }

    write_with(&out.join("trajectory.csv"), |w| traj.write_csv(w))?;
    traj.write_snapshots(out)?;
    write_json(&out.join("report.json"), &reports)?;
    write_json(&out.join("summary.json"), &Value::Object(summary))?;
    Ok(Outcome { reports })
}

/// `gcf validate-obstacle`: admissibility of the obstacle on `[0, t_end]`.
pub fn validate_obstacle(cfg: &ScenarioConfig, out: &Path) -> Result<Outcome, ScenarioError> {
    let s = setup(cfg)?;
    let ob = s.obstacle.ok_or_else(|| ScenarioError::Config("no obstacle configured".into()))?;
    let times: Vec<f64> =
        (0..VALIDATION_SAMPLES).map(|k| cfg.t_end * k as f64 / (VALIDATION_SAMPLES - 1) as f64).collect();
    let rep = ob.validate(&s.u0, cfg.alpha, &times).map_err(solver)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("obstacle_validation.json"), &rep)?;
    let margins = [
        ("speed_negative", rep.speed_negative),
        ("speed_nonincreasing", rep.speed_nonincreasing),
        ("final_interior", rep.final_interior),
        ("curvature_monotone", rep.curvature_monotone),
        ("supersolution", rep.supersolution),
        ("compat_initial", rep.compat_initial),
        ("compat_obstacle", rep.compat_obstacle),
        ("enclosure", rep.enclosure),
    ];
    let reports = margins.iter().map(|(id, m)| CheckReport::from_margin(id, *m, true, None, &[])).collect();
    Ok(Outcome { reports })
}

/// `gcf probe`: the final-δ run followed by the free-boundary probes only.
pub fn probe(cfg: &ScenarioConfig, out: &Path) -> Result<Outcome, ScenarioError> {
    let s = setup(cfg)?;
    let spec = cfg.probe.as_ref().ok_or_else(|| ScenarioError::Config("no probe configured".into()))?;
    let ob = s.obstacle.as_ref().ok_or_else(|| ScenarioError::Config("probe needs an obstacle".into()))?;
    let delta = *cfg.delta_schedule(&s.u0, ob).last().expect("validated schedule");
    let flow = PenalizedFlow::penalized(cfg.alpha, ob, delta, cfg.penalty).map_err(solver)?;
    let traj = flow.run(s.u0.clone(), cfg.t_end, cfg.cadence()).map_err(solver)?;
    fs::create_dir_all(out)?;
    let fb = probe_free_boundary(spec, &traj, ob, cfg.corrupt)?;
    write_free_boundary(out, &fb)?;
    write_json(&out.join("report.json"), &fb.checks)?;
    write_json(&out.join("summary.json"), &fb.summary)?;
    Ok(Outcome { reports: fb.checks })
}
