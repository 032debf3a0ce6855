//! Episode configuration files (same TOML dialect as the model files).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::gait::{GainSchedule, GainSetConfig, GaitError, GaitParams, GaitState};
use crate::model::{load_model, mini_biped, ModelError, RobotModel};
use crate::qp_controller::{ControllerConfig, ControllerError};
use crate::simulator::{SimConfig, SimError};

/// The shipped walking-in-place configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/walk_in_place.toml");

pub const BUILTIN_MINI_BIPED: &str = "builtin:mini_biped";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("model {path}: {source}")]
    Model {
        path: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid episode settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    #[serde(default = "default_output_dir")]
    output_dir: String,
    #[serde(default)]
    seed: u64,
    duration: Option<f64>,
    strides: Option<u32>,
    #[serde(default)]
    initial_posture: BTreeMap<String, f64>,
    #[serde(default)]
    controller: ControllerConfig,
    #[serde(default)]
    gait: GaitParams,
    schedule: BTreeMap<GaitState, String>,
    gains: BTreeMap<String, GainSetConfig>,
    #[serde(default)]
    sim: SimConfig,
}

fn default_output_dir() -> String {
    "out".into()
}

/// Everything one episode needs, validated.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub model_source: String,
    pub model: RobotModel,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Upper bound on simulated time, s.
    pub duration: Option<f64>,
    /// Stop once this many strides are complete.
    pub strides: Option<u32>,
    /// Joint-name suffix → angle, applied to both legs.
    pub initial_posture: BTreeMap<String, f64>,
    pub controller: ControllerConfig,
    pub gait: GaitParams,
    pub schedule: GainSchedule,
    pub sim: SimConfig,
    /// Non-fatal findings (e.g. weight ordering).
    pub warnings: Vec<String>,
}

impl EpisodeConfig {
    /// Parses `text`. A relative model path resolves against `base_dir`; the
    /// output directory is taken as written (relative to the working directory).
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let model = if raw.model == BUILTIN_MINI_BIPED {
            mini_biped()
        } else {
            let path = base_dir.join(&raw.model);
            let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            load_model(&text).map_err(|source| ConfigError::Model {
                path: path.display().to_string(),
                source,
            })?
        };
        let warnings = raw.controller.validate()?;
        raw.gait.validate()?;
        raw.sim.validate()?;
        let schedule = GainSchedule {
            sets: raw.gains,
            schedule: raw.schedule,
        };
        schedule.validate()?;
        if (raw.sim.dt - raw.controller.period).abs() > 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "sim.dt ({}) must equal controller.period ({})",
                raw.sim.dt, raw.controller.period
            )));
        }
        if raw.duration.is_none() && raw.strides.is_none() {
            return Err(ConfigError::Invalid("set `duration`, `strides`, or both".into()));
        }
        if let Some(d) = raw.duration {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(ConfigError::Invalid(format!("duration = {d}")));
            }
        }
        let output_dir = PathBuf::from(&raw.output_dir);
        Ok(Self {
            model_source: raw.model,
            model,
            output_dir,
            seed: raw.seed,
            duration: raw.duration,
            strides: raw.strides,
            initial_posture: raw.initial_posture,
            controller: raw.controller,
            gait: raw.gait,
            schedule,
            sim: raw.sim,
            warnings,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// The shipped configuration with paths relative to the working directory.
    pub fn walk_in_place() -> Self {
        Self::from_toml(DEFAULT_CONFIG, Path::new(".")).expect("shipped config is valid")
    }

    /// Applies a `key=value` override using a dotted key (`controller.w_reg`,
    /// `gait.lift_height`, `strides`, ...) by re-parsing the edited document.
    pub fn with_override(text: &str, key: &str, value: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::with_overrides(text, &[(key, value)], base_dir)
    }

    /// Several overrides, applied in order.
    pub fn with_overrides(text: &str, overrides: &[(&str, &str)], base_dir: &Path) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for &(key, value) in overrides {
            let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .map(|mut t| t.remove("v").expect("key just written"))
                .unwrap_or_else(|_| toml::Value::String(value.to_string()));
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| ConfigError::Invalid("empty override key".into()))?;
            let mut table = &mut doc;
            for p in parts {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Invalid(format!("`{p}` in `{key}` is not a table")))?;
            }
            table.insert(last.to_string(), parsed);
        }
        let edited = toml::to_string(&doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_toml(&edited, base_dir)
    }
}
