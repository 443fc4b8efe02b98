use std::path::{Path, PathBuf};

use corrfield::corres::PipelineConfig;
use corrfield::render::TrainConfig;
use corrfield::synth::{CorruptionSpec, RigConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Everything one experiment needs. Every key has a default; a config file
/// only lists the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Canonical scene (`plane_sphere`, `boxes`, `horns`), used when
    /// `scene_file` is unset.
    pub scene: String,
    /// JSON scene description replacing the canonical scene.
    pub scene_file: Option<PathBuf>,
    /// Camera set replacing the generated rig; matches are drawn between
    /// its `train` cameras.
    pub camera_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Seed for match synthesis.
    pub seed: u64,
    pub rig: RigConfig,
    pub corruption: CorruptionSpec,
    /// Query pixel spacing of the synthetic matcher.
    pub match_stride: u32,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub precision: Precision,
    /// Noise levels in pixels swept by `ablate-noise`.
    pub ablation_noise: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: "plane_sphere".into(),
            scene_file: None,
            camera_file: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            rig: RigConfig::default(),
            corruption: CorruptionSpec::default(),
            match_stride: 1,
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            precision: Precision::F32,
            ablation_noise: vec![0.0, 1.0, 2.0, 4.0],
        }
    }
}

impl ExperimentConfig {
    /// Reads `file` (if any), then applies `key=value` overrides in order.
    /// Values parse as JSON and fall back to plain strings.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("override `{o}` is not of the form key=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key.trim(), parsed)?;
        }
        check_keys(&value, &serde_json::to_value(Self::default()).expect("config serializes"), "")?;
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::usage(e.to_string()))?;
        self.corruption.validate().map_err(CliError::usage)?;
        if self.match_stride == 0 {
            return Err(CliError::usage("match_stride must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::usage(format!("empty segment in config key `{key}`")));
        }
        let obj = match node {
            Value::Object(m) => m,
            other => {
                *other = Value::Object(Default::default());
                other.as_object_mut().unwrap()
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Rejects keys absent from the defaults, naming the full dotted key.
/// Objects whose default carries a `type` tag are checked by serde instead.
fn check_keys(value: &Value, defaults: &Value, prefix: &str) -> Result<(), CliError> {
    let (Value::Object(v), Value::Object(d)) = (value, defaults) else { return Ok(()) };
    if d.contains_key("type") {
        return Ok(());
    }
    for (k, sub) in v {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match d.get(k) {
            Some(def) => check_keys(sub, def, &key)?,
            None => return Err(CliError::usage(format!("unknown config key `{key}`"))),
        }
    }
    Ok(())
}

/// `key = default` for every leaf of the default configuration.
pub fn key_listing() -> String {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.contains_key("type") => {
                for (k, sub) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(sub, &key, out);
                }
            }
            other => out.push(format!("  {prefix} = {other}")),
        }
    }
    let mut lines = Vec::new();
    walk(&serde_json::to_value(ExperimentConfig::default()).expect("config serializes"), "", &mut lines);
    format!("Config keys and defaults (set with --set key=value):\n{}", lines.join("\n"))
}
