//! Experiment config files.
//!
//! TOML with three sections; every field is optional and falls back to the
//! toy defaults:
//!
//! ```toml
//! [model]
//! variant = "encoder_mlp"     # conv_mlp | conv_decoder | encoder_mlp | encoder_decoder
//! embed_dim = 16
//! mlp_topology = [16, 2]
//!
//! [train]
//! epochs = 30
//! learning_rate = 2e-3
//! [train.loss]
//! alpha = 1.0
//! beta = 1.0
//! epsilon = 0.1
//! [train.sampler]
//! strategy = "varied_offset"  # random | fixed_offset | varied_offset
//! n_frames = 8
//! [train.preprocess]
//! short_side = 32
//! crop = 32
//!
//! [data]
//! manifest = "clips/manifest.tsv"   # omit to use [data.synthetic]
//! [data.synthetic]
//! n_clips = 640
//! ```
//!
//! A field is addressed by its dotted path, e.g. `train.loss.beta`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::data::{load_manifest, synth_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Manifest of clips on disk; takes precedence over `synthetic`.
    pub manifest: Option<PathBuf>,
    pub synthetic: SynthSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synthetic: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::toy(Variant::EncoderMlp)
    }
}

impl ExperimentConfig {
    pub fn toy(variant: Variant) -> Self {
        Self {
            model: ModelConfig::tiny(variant),
            train: TrainConfig::toy(),
            data: DataConfig::default(),
        }
    }

    /// Parses `text` over the toy defaults for the variant it names.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let variant = match file.get("model").and_then(|m| m.get("variant")) {
            Some(v) => v
                .clone()
                .try_into::<Variant>()
                .map_err(|e| Error::Config(format!("model.variant: {e}")))?,
            None => Variant::EncoderMlp,
        };
        let mut merged = Value::try_from(Self::toy(variant)).expect("config serializes");
        merge(&mut merged, file);
        merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads a config file; a relative manifest path is taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(m), Some(dir)) = (&cfg.data.manifest, path.parent()) {
            if m.is_relative() {
                cfg.data.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.train.check_model(&self.model)
    }

    /// Sets the field at dotted `path` to `value`.
    ///
    /// Integers are accepted for float fields. Fails if the path names no
    /// field or the value has the wrong type.
    pub fn set(&mut self, path: &str, value: Value) -> Result<()> {
        let mut root = Value::try_from(&*self).expect("config serializes");
        let keys: Vec<&str> = path.split('.').collect();
        let (last, parents) = keys.split_last().expect("split yields one item");
        let mut node = &mut root;
        for k in parents {
            node = node
                .get_mut(*k)
                .filter(|v| v.is_table())
                .ok_or_else(|| Error::Config(format!("unknown config section {k:?} in {path:?}")))?;
        }
        let table = node.as_table_mut().expect("filtered to tables");
        let value = match (table.get(*last), value) {
            (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(last.to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("setting {path}: {}", e.message())))?;
        Ok(())
    }

    /// `set` with the value written as a TOML literal; bare words are strings.
    pub fn set_str(&mut self, path: &str, literal: &str) -> Result<()> {
        self.set(path, parse_literal(literal))
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data.manifest {
            Some(m) => Ok(Dataset::new(load_manifest(m)?)),
            None => synth_dataset(&self.data.synthetic),
        }
    }
}

/// Recursively overwrites `base` with `over`; tables merge key by key.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a TOML value literal such as `1e-3`, `[16, 2]` or `"random"`.
pub fn parse_literal(literal: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {literal}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(literal.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::toy(Variant::ConvDecoder);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[train.loss]\nbeta = 0.0\n[model]\nvariant = \"conv_mlp\"\n").unwrap();
        assert_eq!(cfg.train.loss.beta, 0.0);
        assert_eq!(cfg.model.variant, Variant::ConvMlp);
        assert_eq!(cfg.train.epochs, TrainConfig::toy().epochs);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[train]\nepochz = 3\n").is_err());
    }

    #[test]
    fn set_by_path() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_str("train.loss.alpha", "0").unwrap();
        cfg.set_str("train.sampler.strategy", "random").unwrap();
        cfg.set_str("model.mlp_topology", "[8, 8, 2]").unwrap();
        cfg.set_str("train.grad_clip", "1.5").unwrap();
        assert_eq!(cfg.train.loss.alpha, 0.0);
        assert_eq!(cfg.train.sampler.strategy, crate::data::Strategy::Random);
        assert_eq!(cfg.model.mlp_topology, vec![8, 8, 2]);
        assert_eq!(cfg.train.grad_clip, Some(1.5));
        assert!(cfg.set_str("train.nope", "1").is_err());
        assert!(cfg.set_str("nope.alpha", "1").is_err());
        assert!(cfg.set_str("train.epochs", "many").is_err());
    }
}
