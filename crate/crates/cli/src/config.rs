//! Scenario configuration: JSON documents with defaults and validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gcf_core::diagnostics::CheckId;
use gcf_core::shapes::{ball, ellipsoid};
use gcf_core::{Obstacle, PenaltyVariant, ScalarField, SphericalGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Sphere dimension: 1 (circle) or 2.
    pub n: usize,
    /// `[nodes]` for n = 1, `[n_theta, n_psi]` for n = 2.
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Constant(f64),
    Ball {
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    Ellipse {
        semi_axes: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
    },
    /// Support-function values, one per node in grid order; `#` starts a comment.
    Table(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    Homothetic { initial: ShapeSpec, a_inf: f64, rate: f64 },
    Interpolating { initial: ShapeSpec, limit: ShapeSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Initial radius of the exact shrinking sphere.
    pub sphere_radius: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub center: [f64; 3],
    pub half_width: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    pub window: [f64; 2],
    /// Coincidence threshold; defaults to 10× the complementarity residual.
    pub tol_c: Option<f64>,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<f64>,
    pub c_kappa: Option<f64>,
    /// Successive rescaling factors at a boundary point.
    #[serde(default = "default_zoom")]
    pub zoom: Vec<f64>,
    /// Distances from `Γ` in cells for the speed indicator, largest first.
    #[serde(default = "default_distances")]
    pub distances: Vec<f64>,
}

fn default_points() -> usize {
    41
}
fn default_radii() -> Vec<f64> {
    vec![0.1, 0.2]
}
fn default_probe_count() -> usize {
    5
}
fn default_kappas() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_zoom() -> Vec<f64> {
    vec![0.25, 0.125]
}
fn default_distances() -> Vec<f64> {
    vec![4.0, 2.0, 1.0]
}

/// Deliberate corruption applied after the run, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorruptionSpec {
    InjectPenalty { factor: f64 },
    ReverseTime,
    FlattenLast { scale: f64 },
    PerturbWindows { amplitude: f64 },
    CapSnapshots { cap: f64 },
    CapPatch { cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub grid: GridSpec,
    #[serde(default = "default_initial")]
    pub initial: ShapeSpec,
    #[serde(default)]
    pub obstacle: Option<ObstacleSpec>,
    pub alpha: f64,
    #[serde(default)]
    pub delta_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub penalty: PenaltyVariant,
    pub t_end: f64,
    #[serde(default)]
    pub cadence: Option<f64>,
    #[serde(default)]
    pub checks: Option<Vec<CheckId>>,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    /// `C_res` of the evolution residual; calibrated on sphere runs if absent.
    #[serde(default)]
    pub residual_constant: Option<f64>,
    /// Threshold of the coincidence-time detection.
    #[serde(default)]
    pub coincidence_tol: Option<f64>,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
    #[serde(default)]
    pub corrupt: Option<CorruptionSpec>,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory of the config file; set by [`load_config`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_initial() -> ShapeSpec {
    ShapeSpec::Constant(1.0)
}

/// Parses and validates a config document; file references resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.base_dir = base_dir.to_path_buf();
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(ConfigError::Validation(problems));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ScenarioConfig {
    /// Every violated constraint, in document order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match (self.grid.n, self.grid.resolution.as_slice()) {
            (1, [m]) if *m >= 8 => {}
            (2, [a, b]) if *a >= 4 && *b >= 8 && b % 2 == 0 => {}
            (1 | 2, r) => v.push(format!("grid.resolution {r:?} does not fit n = {}", self.grid.n)),
            (n, _) => v.push(format!("grid.n must be 1 or 2, got {n}")),
        }
        self.shape_violations("initial", &self.initial, &mut v);
        if let Some(ob) = &self.obstacle {
            match ob {
                ObstacleSpec::Homothetic { initial, a_inf, rate } => {
                    self.shape_violations("obstacle.initial", initial, &mut v);
                    if !(*a_inf > 0.0 && *a_inf < 1.0) {
                        v.push(format!("obstacle.a_inf must lie in (0, 1), got {a_inf}"));
                    }
                    if !positive(*rate) {
                        v.push(format!("obstacle.rate must be > 0, got {rate}"));
                    }
                }
                ObstacleSpec::Interpolating { initial, limit } => {
                    self.shape_violations("obstacle.initial", initial, &mut v);
                    self.shape_violations("obstacle.limit", limit, &mut v);
                }
            }
        }
        if !positive(self.alpha) {
            v.push(format!("alpha must be > 0, got {}", self.alpha));
        }
        if let Some(s) = &self.delta_schedule {
            if s.is_empty() {
                v.push("delta_schedule must not be empty".into());
            }
            if s.iter().any(|d| !positive(*d)) {
                v.push(format!("delta_schedule entries must be > 0, got {s:?}"));
            }
            if s.windows(2).any(|w| w[1] >= w[0]) {
                v.push(format!("delta_schedule must be strictly decreasing, got {s:?}"));
            }
            if self.obstacle.is_none() {
                v.push("delta_schedule needs an obstacle".into());
            }
        }
        if !positive(self.t_end) {
            v.push(format!("t_end must be > 0, got {}", self.t_end));
        }
        if let Some(c) = self.cadence {
            if !positive(c) {
                v.push(format!("cadence must be > 0, got {c}"));
            }
        }
        if let Some(checks) = &self.checks {
            if self.obstacle.is_none() {
                for id in checks.iter().filter(|c| c.needs_obstacle()) {
                    v.push(format!("check {id:?} needs an obstacle"));
                }
            }
        }
        if let Some(r) = &self.reference {
            if !positive(r.sphere_radius) || !positive(r.tol) {
                v.push("reference.sphere_radius and reference.tol must be > 0".into());
            }
        }
        if let Some(c) = self.residual_constant {
            if !positive(c) {
                v.push(format!("residual_constant must be > 0, got {c}"));
            }
        }
        if let Some(t) = self.coincidence_tol {
            if !positive(t) {
                v.push(format!("coincidence_tol must be > 0, got {t}"));
            }
            if self.obstacle.is_none() {
                v.push("coincidence_tol needs an obstacle".into());
            }
        }
        if let Some(p) = &self.probe {
            self.probe_violations(p, &mut v);
        }
        v
    }

    fn shape_violations(&self, field: &str, s: &ShapeSpec, v: &mut Vec<String>) {
        match s {
            ShapeSpec::Constant(r) | ShapeSpec::Ball { radius: r, .. } if !positive(*r) => {
                v.push(format!("{field}: radius must be > 0, got {r}"))
            }
            ShapeSpec::Ellipse { semi_axes, .. } => {
                let used = if self.grid.n == 1 { &semi_axes[..2] } else { &semi_axes[..] };
                if used.iter().any(|a| !positive(*a)) {
                    v.push(format!("{field}: semi-axes must be > 0, got {semi_axes:?}"));
                }
            }
            ShapeSpec::Table(p) if !self.base_dir.join(p).is_file() => {
                v.push(format!("{field}: table file {} does not exist", p.display()))
            }
            _ => {}
        }
    }

    fn probe_violations(&self, p: &ProbeSpec, v: &mut Vec<String>) {
        if self.obstacle.is_none() {
            v.push("probe needs an obstacle".into());
        }
        if p.center.iter().all(|c| *c == 0.0) {
            v.push("probe.center must be non-zero".into());
        }
        if !positive(p.half_width) {
            v.push(format!("probe.half_width must be > 0, got {}", p.half_width));
        }
        if p.points < 5 {
            v.push(format!("probe.points must be >= 5, got {}", p.points));
        }
        if !(p.window[0] >= 0.0 && p.window[1] > p.window[0] && p.window[1] <= self.t_end) {
            v.push(format!("probe.window {:?} must be an increasing interval inside [0, t_end]", p.window));
        }
        if let Some(t) = p.tol_c {
            if !positive(t) {
                v.push(format!("probe.tol_c must be > 0, got {t}"));
            }
        }
        if p.radii.is_empty() || p.radii.iter().any(|r| !positive(*r)) {
            v.push(format!("probe.radii must be positive, got {:?}", p.radii));
        }
        if p.kappas.iter().any(|k| !(*k > 0.0 && *k < 1.0)) {
            v.push(format!("probe.kappas must lie in (0, 1), got {:?}", p.kappas));
        }
        if p.zoom.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            v.push(format!("probe.zoom factors must lie in (0, 1), got {:?}", p.zoom));
        }
        if p.distances.len() < 2
            || p.distances.iter().any(|d| !positive(*d))
            || p.distances.windows(2).any(|w| w[1] >= w[0])
        {
            v.push(format!("probe.distances must be positive and strictly decreasing, got {:?}", p.distances));
        }
    }

    pub fn grid(&self) -> Result<Arc<SphericalGrid>, gcf_core::GeometryError> {
        SphericalGrid::new(self.grid.n, &self.grid.resolution)
    }

    pub fn shape(&self, spec: &ShapeSpec, grid: &Arc<SphericalGrid>) -> Result<ScalarField, String> {
        Ok(match spec {
            ShapeSpec::Constant(r) => ScalarField::constant(grid.clone(), *r),
            ShapeSpec::Ball { radius, center } => ball(grid.clone(), *radius, *center),
            ShapeSpec::Ellipse { semi_axes, center } => ellipsoid(grid.clone(), *semi_axes, *center),
            ShapeSpec::Table(p) => {
                let path = self.base_dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                let values = text
                    .lines()
                    .map(|l| l.split('#').next().unwrap_or("").trim())
                    .filter(|l| !l.is_empty())
                    .map(|l| l.parse::<f64>().map_err(|e| format!("{}: {l:?}: {e}", path.display())))
                    .collect::<Result<Vec<_>, _>>()?;
                ScalarField::new(grid.clone(), values).map_err(|e| format!("{}: {e}", path.display()))?
            }
        })
    }

    pub fn obstacle(&self, grid: &Arc<SphericalGrid>) -> Result<Option<Obstacle>, String> {
        let Some(spec) = &self.obstacle else { return Ok(None) };
        let ob = match spec {
            ObstacleSpec::Homothetic { initial, a_inf, rate } => {
                Obstacle::homothetic(self.shape(initial, grid)?, *a_inf, *rate)
            }
            ObstacleSpec::Interpolating { initial, limit } => {
                Obstacle::interpolating(self.shape(initial, grid)?, self.shape(limit, grid)?)
            }
        };
        ob.map(Some).map_err(|e| e.to_string())
    }

    pub fn cadence(&self) -> f64 {
        self.cadence.unwrap_or(self.t_end / 100.0)
    }

    /// The requested checks; without a list, every check the scenario supports.
    pub fn check_ids(&self) -> Vec<CheckId> {
        match &self.checks {
            Some(c) => c.clone(),
            None => CheckId::ALL.into_iter().filter(|c| self.obstacle.is_some() || !c.needs_obstacle()).collect(),
        }
    }

    /// The δ schedule, defaulting to `½ min(u₀ − φ₀)`.
    pub fn delta_schedule(&self, u0: &ScalarField, obstacle: &Obstacle) -> Vec<f64> {
        match &self.delta_schedule {
            Some(s) => s.clone(),
            None => {
                let gap = u0.zip_map(obstacle.initial(), |a, b| a - b).map(|g| g.min()).unwrap_or(f64::NAN);
                vec![0.5 * gap]
            }
        }
    }

    pub fn output_dir(&self, config_path: &Path) -> PathBuf {
        match &self.output {
            Some(p) => self.base_dir.join(p),
            None => {
                let stem =
                    config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("scenario".into());
                PathBuf::from("gcf-out").join(stem)
            }
        }
    }
}
