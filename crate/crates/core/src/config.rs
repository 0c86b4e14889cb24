//! Run configuration: strict JSON schema with scenario parameters, execution
//! mode, horizon overrides, tolerance overrides and output paths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Tolerances;
use crate::scenarios;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Reduced,
    Compare,
    Eps,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "reduced" => Ok(Mode::Reduced),
            "compare" => Ok(Mode::Compare),
            "eps" => Ok(Mode::Eps),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_params")]
    pub params: serde_json::Value,
}

fn default_params() -> serde_json::Value {
    serde_json::json!({})
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub mode: Mode,
    /// Overrides the scenario's default horizon when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    /// Overrides the scenario's default step when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub out_dir: String,
    #[serde(default)]
    pub seed: u64,
    /// Run the verification harness after integration.
    #[serde(default)]
    pub audit: bool,
    /// Solve the printed (multiplier-free) vertical equation instead of the
    /// well-posed variant.
    #[serde(default)]
    pub paper_literal_vertical: bool,
}

impl RunConfig {
    pub fn new(scenario_name: &str, out_dir: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioConfig {
                name: scenario_name.into(),
                params: default_params(),
            },
            mode: Mode::Full,
            t_final: None,
            h: None,
            tolerances: Tolerances::default(),
            out_dir: out_dir.into(),
            seed: 0,
            audit: false,
            paper_literal_vertical: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        if let Some(t) = self.t_final {
            if !t.is_finite() || t <= 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "t_final must be positive, got {t}"
                )));
            }
        }
        if let Some(h) = self.h {
            if !h.is_finite() || h <= 0.0 {
                return Err(ConfigError::Invalid(format!("h must be positive, got {h}")));
            }
        }
        if self.out_dir.is_empty() {
            return Err(ConfigError::Invalid("out_dir must not be empty".into()));
        }
        let known = scenarios::list_scenarios();
        let info = known
            .iter()
            .find(|i| i.name == self.scenario.name)
            .ok_or_else(|| {
                ConfigError::Invalid(format!("unknown scenario `{}`", self.scenario.name))
            })?;
        match self.mode {
            Mode::Compare => {
                if self.scenario.name != "spherical_pendulum" {
                    return Err(ConfigError::Invalid(
                        "mode=compare requires a reducible scenario (spherical_pendulum)".into(),
                    ));
                }
            }
            Mode::Reduced => {
                if info.mode != "reduced" {
                    return Err(ConfigError::Invalid(format!(
                        "scenario `{}` does not run in reduced mode",
                        self.scenario.name
                    )));
                }
            }
            Mode::Eps => {
                if info.mode != "eps" {
                    return Err(ConfigError::Invalid(format!(
                        "scenario `{}` does not run in eps mode",
                        self.scenario.name
                    )));
                }
            }
            Mode::Full => {
                if info.mode != "full" {
                    return Err(ConfigError::Invalid(format!(
                        "scenario `{}` does not run in full mode; use --mode {}",
                        self.scenario.name, info.mode
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses a config from JSON text, rejecting unknown keys, and validates it.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a config to pretty JSON.
pub fn serialize_config(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_identity() {
        let mut cfg = RunConfig::new("spherical_pendulum", "/tmp/out");
        cfg.mode = Mode::Compare;
        cfg.t_final = Some(0.55);
        cfg.h = Some(1e-4);
        cfg.seed = 42;
        cfg.audit = true;
        cfg.scenario.params = serde_json::json!({"cylinder_radius": 0.8});
        let text = serialize_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"schema_version":1,"scenario":{"name":"free_billiard"},"out_dir":"o","frobnicate":true}"#;
        assert!(matches!(parse_config(text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn field_violations_are_named() {
        let mut cfg = RunConfig::new("free_billiard", "o");
        cfg.h = Some(-1.0);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains('h'));

        let mut cfg = RunConfig::new("free_billiard", "o");
        cfg.mode = Mode::Compare;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::new("rigid_body_suslov", "o");
        cfg.mode = Mode::Eps;
        assert!(cfg.validate().is_ok());

        let cfg = RunConfig::new("rigid_body_suslov", "o");
        assert!(cfg.validate().is_err()); // eps scenario in full mode

        let mut cfg = RunConfig::new("free_billiard", "o");
        cfg.schema_version = 99;
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::SchemaVersion(99))
        ));
    }
}
