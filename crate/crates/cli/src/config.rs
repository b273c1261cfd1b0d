use hofer_core::HoferError;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::PathBuf;
use thiserror::Error;

/// One experiment invocation. Experiment-specific settings (manifold,
/// Hamiltonian, curves, tolerances) live in `params` and are validated by the
/// experiment itself, unknown keys included.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    /// Destination for curves; `-` writes them to stdout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<HoferError> for CliError {
    fn from(e: HoferError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| config_err(format!("config: {e}")))
    }

    /// Builds a config from `--key value` pairs. Values that parse as JSON
    /// (numbers, booleans, arrays) keep that type, anything else is a string;
    /// a flag without a value is `true`. Dashes in keys become underscores.
    pub fn from_flags(experiment: &str, args: &[String]) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig { experiment: experiment.to_string(), ..Default::default() };
        let mut i = 0;
        while i < args.len() {
            let Some(raw) = args[i].strip_prefix("--") else {
                return Err(config_err(format!("unexpected argument {}", args[i])));
            };
            let (key, inline) = match raw.split_once('=') {
                Some((k, v)) => (k.replace('-', "_"), Some(v.to_string())),
                None => (raw.replace('-', "_"), None),
            };
            if key.is_empty() {
                return Err(config_err("empty flag name"));
            }
            let value = match inline {
                Some(v) => Some(v),
                None if i + 1 < args.len() && !args[i + 1].starts_with("--") => {
                    i += 1;
                    Some(args[i].clone())
                }
                None => None,
            };
            i += 1;
            match key.as_str() {
                "json" => cfg.json = Some(value.ok_or_else(|| config_err("--json needs a path"))?.into()),
                "csv" => cfg.csv = Some(value.unwrap_or_else(|| "-".into()).into()),
                "seed" => {
                    let v = value.ok_or_else(|| config_err("--seed needs a value"))?;
                    cfg.seed = v.parse().map_err(|_| config_err(format!("seed must be a non-negative integer, got {v}")))?;
                }
                _ => {
                    if cfg.params.contains_key(&key) {
                        return Err(config_err(format!("flag --{key} given twice")));
                    }
                    cfg.params.insert(key, value.map(|v| parse_value(&v)).unwrap_or(Value::Bool(true)));
                }
            }
        }
        Ok(cfg)
    }
}

fn parse_value(s: &str) -> Value {
    match serde_json::from_str::<Value>(s) {
        Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::Array(_) | Value::Object(_))) => v,
        _ => Value::String(s.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_become_typed_params() {
        let c = ExperimentConfig::from_flags(
            "x",
            &args(&["--u", "0.5", "--map", "translate_q:0.37", "--times", "[0.5,1]", "--shift=-0.25", "--csv", "--seed", "7"]),
        )
        .unwrap();
        assert_eq!(c.params["u"], serde_json::json!(0.5));
        assert_eq!(c.params["map"], serde_json::json!("translate_q:0.37"));
        assert_eq!(c.params["times"], serde_json::json!([0.5, 1]));
        assert_eq!(c.params["shift"], serde_json::json!(-0.25));
        assert_eq!(c.csv, Some(PathBuf::from("-")));
        assert_eq!(c.seed, 7);
        let neg = ExperimentConfig::from_flags("x", &args(&["--b", "-0.5", "--lambda-value", "2"])).unwrap();
        assert_eq!(neg.params["b"], serde_json::json!(-0.5));
        assert!(neg.params.contains_key("lambda_value"));
    }

    #[test]
    fn bad_flags_are_config_errors() {
        for bad in [vec!["u"], vec!["--u", "1", "--u", "2"], vec!["--seed", "-1"], vec!["--json"]] {
            let e = ExperimentConfig::from_flags("x", &args(&bad)).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad:?}");
        }
        assert!(ExperimentConfig::from_json(r#"{"experiment":"x","tolerance":1}"#).is_err());
    }
}
