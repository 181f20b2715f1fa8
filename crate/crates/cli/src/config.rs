//! Experiment configuration: one TOML file per run.

use fissure_core::scenario::MediumSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Field { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; per-job seeds are derived from it by counter path.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output root, overridden by `FISSURE_OUT` and `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub study: Study,
    #[serde(default = "MediumSpec::default_stripes")]
    pub medium: MediumSpec,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Study {
    Dyncheck(Dyncheck),
    Twoscale(Twoscale),
    Simulate(Simulate),
    Homogenize(Homogenize),
    Converge(Converge),
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Dyncheck(_) => "dyncheck",
            Study::Twoscale(_) => "twoscale",
            Study::Simulate(_) => "simulate",
            Study::Homogenize(_) => "homogenize",
            Study::Converge(_) => "converge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dyncheck {
    /// Largest grid resolution for the bijectivity sweep.
    pub max_resolution: usize,
    /// Grid resolution for the consistency and potential checks.
    pub resolution: usize,
    pub draws: usize,
    pub fields: usize,
}

impl Default for Dyncheck {
    fn default() -> Self {
        Self { max_resolution: 32, resolution: 64, draws: 100, fields: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Periodic,
    Stochastic,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Twoscale {
    pub family: Family,
    pub eps: Vec<f64>,
    pub x_resolution: usize,
    pub omega_resolution: usize,
    /// Relative tolerance on the final pairing error.
    pub rel_tol: f64,
}

impl Default for Twoscale {
    fn default() -> Self {
        Self { family: Family::Mixed, eps: vec![0.5, 1.0 / 3.0, 0.25, 1.0 / 6.0, 0.125], x_resolution: 384, omega_resolution: 4, rel_tol: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulate {
    pub eps: f64,
    pub grid: usize,
    pub dt: f64,
    pub samples: usize,
    /// Write a velocity snapshot every this many steps; 0 keeps only the final state.
    pub snapshot_stride: usize,
}

impl Default for Simulate {
    fn default() -> Self {
        Self { eps: 0.25, grid: 128, dt: 0.0125, samples: 2, snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Homogenize {
    pub macro_grid: usize,
    pub y_resolution: usize,
    pub dt: f64,
}

impl Default for Homogenize {
    fn default() -> Self {
        Self { macro_grid: 64, y_resolution: 8, dt: 0.0125 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Converge {
    pub eps: Vec<f64>,
    /// Fine grid per entry of `eps`.
    pub fine_grids: Vec<usize>,
    pub macro_grid: usize,
    pub y_resolution: usize,
    pub samples: usize,
    pub dt: f64,
}

impl Default for Converge {
    fn default() -> Self {
        Self { eps: vec![1.0 / 3.0, 0.25, 1.0 / 6.0], fine_grids: vec![72, 128, 288], macro_grid: 64, y_resolution: 8, samples: 8, dt: 0.0125 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML; its hash names the run directory.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.study {
            Study::Dyncheck(d) => {
                positive("study.max_resolution", d.max_resolution)?;
                positive("study.resolution", d.resolution)?;
                positive("study.draws", d.draws)?;
                positive("study.fields", d.fields)?;
            }
            Study::Twoscale(t) => {
                eps_ladder("study.eps", &t.eps)?;
                positive("study.x_resolution", t.x_resolution)?;
                positive("study.omega_resolution", t.omega_resolution)?;
                if !(t.rel_tol > 0.0) {
                    return Err(ConfigError::field("study.rel_tol", format!("must be positive, got {}", t.rel_tol)));
                }
            }
            Study::Simulate(s) => {
                eps_value("study.eps", s.eps)?;
                positive("study.grid", s.grid)?;
                positive("study.samples", s.samples)?;
                time_step("study.dt", s.dt)?;
            }
            Study::Homogenize(h) => {
                positive("study.macro_grid", h.macro_grid)?;
                positive("study.y_resolution", h.y_resolution)?;
                time_step("study.dt", h.dt)?;
            }
            Study::Converge(c) => {
                eps_ladder("study.eps", &c.eps)?;
                if c.fine_grids.len() != c.eps.len() {
                    return Err(ConfigError::field("study.fine_grids", format!("needs one grid per eps ({} given, {} expected)", c.fine_grids.len(), c.eps.len())));
                }
                for (i, &g) in c.fine_grids.iter().enumerate() {
                    positive(&format!("study.fine_grids[{i}]"), g)?;
                }
                positive("study.macro_grid", c.macro_grid)?;
                positive("study.y_resolution", c.y_resolution)?;
                positive("study.samples", c.samples)?;
                time_step("study.dt", c.dt)?;
            }
        }
        if !(self.medium.horizon > 0.0) {
            return Err(ConfigError::field("medium.horizon", format!("must be positive, got {}", self.medium.horizon)));
        }
        positive("medium.omega_resolution", self.medium.omega_resolution)?;
        // Building a problem runs the medium's own checks (density floor, connectivity, ellipticity).
        self.medium.problem(0.5).map_err(|e| ConfigError::field("medium", e.to_string()))?;
        Ok(())
    }
}

fn positive(field: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::field(field, "must be positive"));
    }
    Ok(())
}

fn eps_value(field: &str, eps: f64) -> Result<(), ConfigError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ConfigError::field(field, format!("must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

fn eps_ladder(field: &str, eps: &[f64]) -> Result<(), ConfigError> {
    if eps.is_empty() {
        return Err(ConfigError::field(field, "needs at least one value"));
    }
    for (i, &e) in eps.iter().enumerate() {
        eps_value(&format!("{field}[{i}]"), e)?;
    }
    if let Some(i) = eps.windows(2).position(|w| w[1] >= w[0]) {
        return Err(ConfigError::field(format!("{field}[{}]", i + 1), "values must strictly decrease"));
    }
    Ok(())
}

fn time_step(field: &str, dt: f64) -> Result<(), ConfigError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ConfigError::field(field, format!("must be positive, got {dt}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse("[study]\nkind = \"converge\"\n").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.study, Study::Converge(Converge::default()));
        assert_eq!(cfg.medium, MediumSpec::default_stripes());
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = ExperimentConfig::parse("seed = 7\n[study]\nkind = \"simulate\"\neps = 0.5\ngrid = 32\n").unwrap();
        let again = ExperimentConfig::parse(&cfg.resolved()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.resolved(), again.resolved());
    }

    #[test]
    fn negative_eps_names_the_field() {
        let err = ExperimentConfig::parse("[study]\nkind = \"twoscale\"\neps = [0.5, -0.25]\n").unwrap_err();
        assert!(err.to_string().starts_with("study.eps[1]"), "{err}");
    }

    #[test]
    fn unknown_key_reports_its_table_line() {
        let err = ExperimentConfig::parse("seed = 1\n[study]\nkind = \"dyncheck\"\ndraws = 5\nbogus = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown field `bogus`") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn grids_must_match_the_ladder() {
        let err = ExperimentConfig::parse("[study]\nkind = \"converge\"\neps = [0.5, 0.25]\nfine_grids = [64]\nmacro_grid = 32\n").unwrap_err();
        assert!(err.to_string().starts_with("study.fine_grids"), "{err}");
    }

    #[test]
    fn broken_medium_is_a_config_error() {
        let mut cfg = ExperimentConfig::parse("[study]\nkind = \"homogenize\"\n").unwrap();
        cfg.medium.fissure.density = fissure_core::scenario::DensitySpec::Constant { value: -1.0 };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().starts_with("medium:"), "{err}");
    }
}
