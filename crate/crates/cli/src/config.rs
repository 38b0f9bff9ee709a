//! Run configuration: a flat JSON object holding every model field plus the
//! run-level keys below. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use mssfc::network::ModelConfig;
use mssfc::train::TaskFilter;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// File name of the resolved config written next to checkpoints.
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunKeys {
    data_root: PathBuf,
    out_dir: PathBuf,
    train_split: String,
    val_split: String,
    test_split: String,
    task_filter: TaskFilter,
    report_path: Option<PathBuf>,
}

const RUN_KEYS: [&str; 7] = [
    "data_root",
    "out_dir",
    "train_split",
    "val_split",
    "test_split",
    "task_filter",
    "report_path",
];

impl Default for RunKeys {
    fn default() -> Self {
        RunKeys {
            data_root: PathBuf::from("data/synth"),
            out_dir: PathBuf::from("runs/default"),
            train_split: "train".into(),
            val_split: "test".into(),
            test_split: "test".into(),
            task_filter: TaskFilter::Both,
            report_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub train_split: String,
    pub val_split: String,
    pub test_split: String,
    pub task_filter: TaskFilter,
    pub report_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_parts(ModelConfig::default(), RunKeys::default())
    }
}

fn bad(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config: {msg}"))
}

impl RunConfig {
    fn from_parts(model: ModelConfig, keys: RunKeys) -> Self {
        RunConfig {
            model,
            data_root: keys.data_root,
            out_dir: keys.out_dir,
            train_split: keys.train_split,
            val_split: keys.val_split,
            test_split: keys.test_split,
            task_filter: keys.task_filter,
            report_path: keys.report_path,
        }
    }

    fn keys(&self) -> RunKeys {
        RunKeys {
            data_root: self.data_root.clone(),
            out_dir: self.out_dir.clone(),
            train_split: self.train_split.clone(),
            val_split: self.val_split.clone(),
            test_split: self.test_split.clone(),
            task_filter: self.task_filter,
            report_path: self.report_path.clone(),
        }
    }

    /// Defaults, overlaid with `path` (if any), overlaid with `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| bad(format_args!("{}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text)
                    .map_err(|e| bad(format_args!("{}: {e}", p.display())))?
                {
                    Value::Object(m) => m,
                    _ => return Err(bad(format_args!("{} is not a JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        for (key, raw) in overrides {
            map.insert(key.clone(), override_value(key, raw));
        }
        Self::from_map(map)
    }

    pub fn from_map(mut map: Map<String, Value>) -> CliResult<Self> {
        let mut own = Map::new();
        for key in RUN_KEYS {
            if let Some(v) = map.remove(key) {
                own.insert(key.to_string(), v);
            }
        }
        let keys: RunKeys = serde_json::from_value(Value::Object(own)).map_err(bad)?;
        let model: ModelConfig = serde_json::from_value(Value::Object(map)).map_err(bad)?;
        model.validate().map_err(bad)?;
        Ok(Self::from_parts(model, keys))
    }

    pub fn to_map(&self) -> Map<String, Value> {
        let mut map = match serde_json::to_value(&self.model).expect("config serialises") {
            Value::Object(m) => m,
            _ => unreachable!("model config is a struct"),
        };
        if let Value::Object(own) = serde_json::to_value(self.keys()).expect("config serialises") {
            map.extend(own);
        }
        map
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_map())).expect("config serialises") + "\n"
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()).map_err(|e| mssfc::Error::io(path, e).into())
    }
}

/// Command-line values are JSON when they parse as JSON; run-level keys and
/// anything else are taken as strings.
fn override_value(key: &str, raw: &str) -> Value {
    if RUN_KEYS.contains(&key) && key != "report_path" {
        return Value::String(raw.to_string());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_roundtrip_through_json() {
        let c = RunConfig::default();
        let back = RunConfig::from_map(c.to_map()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"epochs": 3, "lr": 0.001, "data_root": "x"}"#).unwrap();
        let c = RunConfig::load(
            Some(&p),
            &ov(&[
                ("epochs", "5"),
                ("task_filter", "cd"),
                ("stage_channels", "[8,16,32,64]"),
                ("key_pool", "avg"),
                ("train_split", "123"),
            ]),
        )
        .unwrap();
        assert_eq!(c.model.epochs, 5);
        assert_eq!(c.model.lr, 0.001);
        assert_eq!(c.model.stage_channels, vec![8, 16, 32, 64]);
        assert_eq!(c.task_filter, TaskFilter::Cd);
        assert_eq!(c.data_root, PathBuf::from("x"));
        assert_eq!(c.train_split, "123");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::load(None, &ov(&[("learning_rate", "0.1")])).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(RunConfig::load(None, &ov(&[("task_filter", "all")])).is_err());
    }

    #[test]
    fn invalid_model_rejected() {
        let err = RunConfig::load(None, &ov(&[("image_size", "48")])).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err}");
    }

    #[test]
    fn non_object_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "[1, 2]").unwrap();
        assert!(RunConfig::load(Some(&p), &[]).is_err());
    }
}
