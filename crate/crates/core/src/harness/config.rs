use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EpisodeConfig, MicrorobotEnv};
use crate::magnetics::{orbit_position, TurretModel, DEFAULT_ORBIT_FIELD, DEFAULT_SATURATION_KNEE};
use crate::neural::NetworkShape;
use crate::sac::{EvalMode, SacHyperparams};
use crate::swimmer::SwimmerModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Turret parameters; dipole geometry is fixed to three orthogonal axes at
/// the origin and the gain is calibrated from `orbit_field`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurretConfig {
    /// Field magnitude at the orbit for a full axial current, T.
    pub orbit_field: f64,
    /// Normalized current at which the coil response bends over; `inf`
    /// gives a linear turret.
    pub saturation_knee: f64,
}

impl Default for TurretConfig {
    fn default() -> Self {
        Self { orbit_field: DEFAULT_ORBIT_FIELD, saturation_knee: DEFAULT_SATURATION_KNEE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub steps: u64,
    pub mode: EvalMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { steps: 3000, mode: EvalMode::Deterministic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Run collection and learning on separate threads (not reproducible).
    pub decoupled: bool,
    /// Include full state vectors in the transition log.
    pub log_states: bool,
    pub sac: SacHyperparams,
    pub network: NetworkShape,
    pub episode: EpisodeConfig,
    pub swimmer: SwimmerModel,
    pub turret: TurretConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            decoupled: false,
            log_states: true,
            sac: SacHyperparams::default(),
            network: NetworkShape::default(),
            episode: EpisodeConfig::default(),
            swimmer: SwimmerModel::default(),
            turret: TurretConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// `key=value` overrides with dotted keys, e.g. `sac.total_steps=200`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        // parse the file on its own first so errors point at its lines
        toml::from_str::<RunConfig>(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sac.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.swimmer.validate().map_err(ConfigError::Invalid)?;
        self.episode.validate().map_err(ConfigError::Invalid)?;
        if !(self.turret.orbit_field > 0.0 && self.turret.saturation_knee > 0.0) {
            return Err(ConfigError::Invalid("turret.orbit_field and turret.saturation_knee must be positive".into()));
        }
        let n = &self.network;
        if n.actor_hidden.is_empty() || n.critic_branch == 0 || n.actor_hidden.contains(&0) || n.critic_hidden.contains(&0) {
            return Err(ConfigError::Invalid("network layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(ConfigError::Invalid(format!("network.dropout must lie in [0, 1), got {}", n.dropout)));
        }
        Ok(())
    }

    pub fn turret_model(&self) -> TurretModel {
        let reference = orbit_position(0.0, self.swimmer.channel_radius, self.swimmer.orbit_height);
        TurretModel::calibrated(self.turret.orbit_field, &reference, self.turret.saturation_knee)
    }

    pub fn build_env(&self) -> MicrorobotEnv {
        MicrorobotEnv::new(self.episode.clone(), self.turret_model(), self.swimmer.clone())
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::Override(format!("{key}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let err = RunConfig::from_toml_str("seed = 3\n[sac]\ngama = 0.9\n").unwrap_err().to_string();
        assert!(err.contains("gama"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 1\n\n[sac]\ngama = 2\n").unwrap();
        let err = RunConfig::load(Some(&path), &[]).unwrap_err().to_string();
        assert!(err.contains("gama") && err.contains("line 4"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::load(None, &["sac.total_steps=200".into(), "seed=7".into(), "output_dir=out/x".into()]).unwrap();
        assert_eq!(cfg.sac.total_steps, 200);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
        assert!(RunConfig::load(None, &["sac.bogus=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[sac]\ngamma = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[episode]\nsub_steps = 4\n").is_err());
        assert!(RunConfig::from_toml_str("[network]\ndropout = 1.0\n").is_err());
    }

    #[test]
    fn linear_turret_from_infinite_knee() {
        let cfg = RunConfig::from_toml_str("[turret]\nsaturation_knee = inf\n").unwrap();
        assert!(cfg.turret_model().saturation_knee.is_infinite());
    }
}
