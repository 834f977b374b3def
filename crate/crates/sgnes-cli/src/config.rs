//! Experiment configuration: a single TOML file describing the game, the
//! communication graph, the splitting parameters, schedules, and outputs.
//! Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgnes::solver::{GammaSchedule, InnerSchedule, Schedules};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub game: GameSection,
    pub graph: GraphSection,
    pub splitting: SplittingSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub init: InitSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub iterations: usize,
    pub master_seed: u64,
    /// Output directory, resolved under the output root; defaults to `name`.
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Stop early once the step length stays below this for 50 iterations.
    #[serde(default)]
    pub early_stop_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSection {
    /// Four-player quadratic benchmark with an analytic equilibrium.
    Quadratic {
        #[serde(default = "default_quadratic_noise")]
        noise: f64,
    },
    /// Five-firm market over a 29-market transport network.
    Cournot {
        #[serde(default)]
        network_file: Option<PathBuf>,
    },
    /// Five-player two-stage assembly game.
    Assembly {},
}

fn default_quadratic_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSection {
    /// Undirected circle over the players plus extra random chords.
    CirclePlusRandom { extra_edges: usize },
    /// Explicit 1-based edge list.
    Explicit { edges: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplittingSection {
    /// Uniform step sizes given explicitly.
    Explicit {
        rho_mu: f64,
        rho_z: f64,
        tau1: f64,
        tau2: f64,
        tau3: f64,
        tau4: f64,
    },
    /// Steps derived from the sufficient bounds with a safety fraction.
    Assumption6 { rho_mu: f64, rho_z: f64, safety: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub gamma: GammaSection,
    pub inner: InnerSection,
    /// Acknowledge a schedule outside the summability condition; required to
    /// run plateau experiments.
    #[serde(default)]
    pub unsafe_schedule: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaSection {
    Constant { value: f64 },
    Power { exponent: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerSection {
    Constant { steps: usize },
    Power { scale: f64, exponent: f64, floor: usize },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Moving-average window for the plots.
    pub window: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { window: 30 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection { tol: 1e-8, max_iter: 300_000 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    Zero,
    /// Uniform entries in `[-scale, scale]`, drawn from a seeded stream.
    Random { scale: f64 },
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection::Zero
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str_validated(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.experiment.iterations == 0 {
            return Err(ConfigError::Invalid("experiment.iterations must be positive".into()));
        }
        match &self.schedule.gamma {
            GammaSection::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(ConfigError::Invalid(format!(
                        "schedule.gamma constant value {value} must lie in [0, 1]"
                    )));
                }
            }
            GammaSection::Power { exponent } => {
                if !(*exponent > 0.0 && *exponent <= 1.0) {
                    return Err(ConfigError::Invalid(format!(
                        "schedule.gamma power exponent {exponent} must lie in (0, 1]"
                    )));
                }
            }
        }
        let schedules = self.schedules();
        if !schedules.error_summable() && !self.schedule.unsafe_schedule {
            return Err(ConfigError::Invalid(
                "schedule violates the summability condition (power families require \
                 a + b/2 > 1); set schedule.unsafe_schedule = true to run it anyway"
                    .into(),
            ));
        }
        match &self.splitting {
            SplittingSection::Explicit { rho_mu, rho_z, tau1, tau2, tau3, tau4 } => {
                for (name, v) in [
                    ("rho_mu", rho_mu),
                    ("rho_z", rho_z),
                    ("tau1", tau1),
                    ("tau2", tau2),
                    ("tau3", tau3),
                    ("tau4", tau4),
                ] {
                    if *v <= 0.0 {
                        return Err(ConfigError::Invalid(format!("splitting.{name} must be positive")));
                    }
                }
            }
            SplittingSection::Assumption6 { rho_mu, rho_z, safety } => {
                if *rho_mu <= 0.0 || *rho_z <= 0.0 {
                    return Err(ConfigError::Invalid("splitting gains must be positive".into()));
                }
                if !(*safety > 0.0 && *safety < 1.0) {
                    return Err(ConfigError::Invalid("splitting.safety must lie in (0, 1)".into()));
                }
            }
        }
        if let GraphSection::CirclePlusRandom { .. } = self.graph {
            // Size checked at build time against the game's player count.
        }
        Ok(())
    }

    pub fn schedules(&self) -> Schedules {
        let gamma = match &self.schedule.gamma {
            GammaSection::Constant { value } => GammaSchedule::Constant(*value),
            GammaSection::Power { exponent } => GammaSchedule::Power { exponent: *exponent },
        };
        let inner = match &self.schedule.inner {
            InnerSection::Constant { steps } => InnerSchedule::Constant(*steps),
            InnerSection::Power { scale, exponent, floor } => InnerSchedule::Power {
                scale: *scale,
                exponent: *exponent,
                floor: *floor,
            },
        };
        Schedules { gamma, inner }
    }

    pub fn output_dir_name(&self) -> String {
        self.experiment
            .output_dir
            .clone()
            .unwrap_or_else(|| self.experiment.name.clone())
    }
}

/// Inner-schedule override syntax for schedule comparisons:
/// `constant:T` or `power:SCALE:EXPONENT:FLOOR`.
pub fn parse_inner_schedule(spec: &str) -> Result<(String, InnerSchedule), ConfigError> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["constant", t] => {
            let steps: usize = t
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("bad constant schedule: {spec}")))?;
            Ok((format!("constant_{steps}"), InnerSchedule::Constant(steps)))
        }
        ["power", scale, exponent, floor] => {
            let scale: f64 = scale
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("bad power scale in: {spec}")))?;
            let exponent: f64 = exponent
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("bad power exponent in: {spec}")))?;
            let floor: usize = floor
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("bad power floor in: {spec}")))?;
            Ok((
                format!("power_{scale}_{exponent}_{floor}").replace('.', "p"),
                InnerSchedule::Power { scale, exponent, floor },
            ))
        }
        _ => Err(ConfigError::Invalid(format!(
            "schedule spec must be constant:T or power:SCALE:EXPONENT:FLOOR, got {spec}"
        ))),
    }
}
