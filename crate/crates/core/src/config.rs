//! Decoder hyperparameters and the flat `key = value` config grammar.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! sim_threshold = 0.8
//! alpha = 0.5     # trailing comments are allowed
//! ```
//!
//! Keys are case-sensitive. A key may appear at most once. Missing keys fall
//! back to the defaults in [`UsdConfig::default`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// How the cluster-level entropy is reported to the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyNormalization {
    /// Raw entropy in nats, bounded by `ln m`.
    #[default]
    None,
    /// Entropy divided by `ln m`, bounded by 1.
    LogM,
}

impl EntropyNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            EntropyNormalization::None => "none",
            EntropyNormalization::LogM => "log_m",
        }
    }
}

impl FromStr for EntropyNormalization {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "none" => Ok(EntropyNormalization::None),
            "log_m" => Ok(EntropyNormalization::LogM),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsdConfig {
    /// Cosine similarity above which two candidates are equivalent.
    pub sim_threshold: f64,
    /// Weight of the cluster term against the item probability.
    pub alpha: f64,
    /// Entropy damping inside the cluster term.
    pub beta: f64,
    /// Strength of the entropy-driven temperature increase.
    pub gamma: f64,
    pub base_temperature: f64,
    /// Number of candidates drawn per sampling pass.
    pub k_candidates: usize,
    pub entropy_normalization: EntropyNormalization,
    pub enable_clustering: bool,
    pub enable_uncertainty: bool,
    pub seed: u64,
}

impl Default for UsdConfig {
    fn default() -> Self {
        UsdConfig {
            sim_threshold: 0.8,
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.5,
            base_temperature: 0.95,
            k_candidates: 10,
            entropy_normalization: EntropyNormalization::None,
            enable_clustering: true,
            enable_uncertainty: true,
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "sim_threshold",
    "alpha",
    "beta",
    "gamma",
    "base_temperature",
    "k_candidates",
    "entropy_log_base",
    "entropy_normalization",
    "enable_clustering",
    "enable_uncertainty",
    "seed",
];

fn parse_value<T: FromStr>(field: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| ConfigError::InvalidValue {
        field: field.to_owned(),
        value: raw.to_owned(),
    })
}

fn out_of_range(field: &'static str, range: &'static str, value: impl ToString) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        range,
        value: value.to_string(),
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(out_of_range(field, "[0,1]", v))
    }
}

impl UsdConfig {
    /// Checks every range constraint on an already-built config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        unit_interval("sim_threshold", self.sim_threshold)?;
        unit_interval("alpha", self.alpha)?;
        unit_interval("beta", self.beta)?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(out_of_range("gamma", "[0,inf)", self.gamma));
        }
        if !(self.base_temperature.is_finite() && self.base_temperature > 0.0) {
            return Err(out_of_range("base_temperature", "(0,inf)", self.base_temperature));
        }
        if self.k_candidates == 0 {
            return Err(out_of_range("k_candidates", "[1,inf)", self.k_candidates));
        }
        Ok(())
    }

    /// Overrides one numeric hyperparameter by name, then revalidates.
    pub fn with_param(&self, name: &str, value: f64) -> Result<UsdConfig, ConfigError> {
        let mut cfg = self.clone();
        match name {
            "alpha" => cfg.alpha = value,
            "beta" => cfg.beta = value,
            "gamma" => cfg.gamma = value,
            "sim_threshold" => cfg.sim_threshold = value,
            "base_temperature" => cfg.base_temperature = value,
            other => return Err(ConfigError::UnknownKeys(vec![other.to_owned()])),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the `key = value` grammar. Parsing the output
    /// with [`parse_config_text`] and [`validate_config`] yields an equal config.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sim_threshold = {}", self.sim_threshold);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "base_temperature = {}", self.base_temperature);
        let _ = writeln!(s, "k_candidates = {}", self.k_candidates);
        let _ = writeln!(s, "entropy_log_base = e");
        let _ = writeln!(s, "entropy_normalization = {}", self.entropy_normalization.as_str());
        let _ = writeln!(s, "enable_clustering = {}", self.enable_clustering);
        let _ = writeln!(s, "enable_uncertainty = {}", self.enable_uncertainty);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// Builds a config from raw key/value pairs, defaulting every missing key.
pub fn validate_config(raw: &BTreeMap<String, String>) -> Result<UsdConfig, ConfigError> {
    let unknown: Vec<String> = raw
        .keys()
        .filter(|k| !CONFIG_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }

    let mut cfg = UsdConfig::default();
    for (key, value) in raw {
        let v = value.as_str();
        match key.as_str() {
            "sim_threshold" => cfg.sim_threshold = parse_value(key, v)?,
            "alpha" => cfg.alpha = parse_value(key, v)?,
            "beta" => cfg.beta = parse_value(key, v)?,
            "gamma" => cfg.gamma = parse_value(key, v)?,
            "base_temperature" => cfg.base_temperature = parse_value(key, v)?,
            "k_candidates" => cfg.k_candidates = parse_value(key, v)?,
            "entropy_log_base" => {
                // natural log only
                if !matches!(v, "e" | "ln" | "natural") {
                    return Err(ConfigError::InvalidValue {
                        field: key.clone(),
                        value: value.clone(),
                    });
                }
            }
            "entropy_normalization" => {
                cfg.entropy_normalization = v.parse().map_err(|_| ConfigError::InvalidValue {
                    field: key.clone(),
                    value: value.clone(),
                })?
            }
            "enable_clustering" => cfg.enable_clustering = parse_value(key, v)?,
            "enable_uncertainty" => cfg.enable_uncertainty = parse_value(key, v)?,
            "seed" => cfg.seed = parse_value(key, v)?,
            _ => unreachable!("unknown keys rejected above"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line: line_no,
                message: "empty key or value".into(),
            });
        }
        if map.insert(key.to_owned(), value.to_owned()).is_some() {
            return Err(ConfigError::Syntax {
                line: line_no,
                message: format!("duplicate key {key:?}"),
            });
        }
    }
    Ok(map)
}
