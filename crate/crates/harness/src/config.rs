//! Run configuration: TOML file, named presets and `key=value` overrides.

use crate::error::{HarnessError, Result};
use crate::synth::SynthConfig;
use roc_gbdt::GbdtConfig;
use roc_nn::ResNetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "ROC_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full training schedule and boosting rounds.
    Paper,
    /// 5,000 synthetic bars, 5 short epochs, 100 boosting rounds.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// OHLC CSV; synthetic bars are generated when absent.
    pub input: Option<PathBuf>,
    pub train_fraction: f64,
    /// Fixes the first test bar instead of deriving it from `train_fraction`.
    pub train_bars: Option<usize>,
    pub horizon: usize,
    pub window: usize,
    pub zeroed_levels: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { input: None, train_fraction: 0.8, train_bars: None, horizon: 5, window: 30, zeroed_levels: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub precision: Precision,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: Option<usize>,
    pub max_batches_per_epoch: Option<usize>,
    pub stage_blocks: Vec<usize>,
    pub base_planes: usize,
    pub feature_dim: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        let r = ResNetConfig::default();
        CnnConfig {
            precision: Precision::F64,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            patience: None,
            max_batches_per_epoch: None,
            stage_blocks: r.stage_blocks,
            base_planes: r.base_planes,
            feature_dim: r.feature_dim,
        }
    }
}

impl CnnConfig {
    pub fn resnet(&self, window: usize) -> ResNetConfig {
        ResNetConfig {
            stage_blocks: self.stage_blocks.clone(),
            base_planes: self.base_planes,
            input_channels: 1,
            input_hw: (roc_core::indicators::NUM_FEATURES, window),
            feature_dim: self.feature_dim,
        }
    }

    pub fn train_config(&self, seed: u64) -> roc_nn::TrainConfig {
        roc_nn::TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
            patience: self.patience,
            max_batches_per_epoch: self.max_batches_per_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Seeds CNN initialization and batch shuffling; also drives the
    /// synthetic generator unless `synth.seed` is set.
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub cnn: CnnConfig,
    pub gbdt: GbdtConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig::preset(Preset::Paper)
    }
}

impl HarnessConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => HarnessConfig {
                seed: 0,
                data: DataConfig::default(),
                synth: SynthConfig { bars: 107_236, ..SynthConfig::default() },
                cnn: CnnConfig::default(),
                gbdt: GbdtConfig::default(),
            },
            Preset::Desk => {
                let mut c = HarnessConfig::preset(Preset::Paper);
                c.synth.bars = 5_000;
                c.cnn.precision = Precision::F32;
                c.cnn.epochs = 5;
                c.cnn.max_batches_per_epoch = Some(2);
                c.gbdt.num_rounds = 100;
                c
            }
        }
    }

    /// Preset, then file, then `key=value` overrides, then the seed flag or
    /// environment variable.
    pub fn resolve(preset: Option<Preset>, file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let base = HarnessConfig::preset(preset.unwrap_or(Preset::Paper));
        let mut tree = toml::Value::try_from(&base).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let doc: toml::Value = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, doc);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut config: HarnessConfig = tree.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(s.parse().map_err(|_| HarnessError::Config(format!("{SEED_ENV}={s} is not an integer")))?),
            Err(_) => None,
        };
        if let Some(s) = seed.or(env_seed) {
            config.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad(format!("data.train_fraction {} outside (0, 1)", self.data.train_fraction));
        }
        if self.data.horizon == 0 || self.data.window == 0 {
            return bad("data.horizon and data.window must be positive".into());
        }
        if self.data.zeroed_levels == 0 {
            return bad("data.zeroed_levels must be >= 1".into());
        }
        self.cnn.resnet(self.data.window).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.cnn.train_config(self.seed).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.gbdt.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.synth.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn merge(dst: &mut toml::Value, src: toml::Value) {
    match (dst, src) {
        (toml::Value::Table(d), toml::Value::Table(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

/// `cnn.epochs=3`, `data.input="a.csv"`; `none` clears an optional key.
fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut node = tree;
    for k in &keys[..keys.len() - 1] {
        node = node
            .get_mut(*k)
            .filter(|v| v.is_table())
            .ok_or_else(|| HarnessError::Config(format!("unknown config section `{k}` in `{spec}`")))?;
    }
    let table = node.as_table_mut().expect("checked above");
    let last = keys[keys.len() - 1];
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("none") {
        table.remove(last);
        return Ok(());
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        HarnessConfig::preset(Preset::Paper).validate().unwrap();
        let d = HarnessConfig::preset(Preset::Desk);
        d.validate().unwrap();
        assert_eq!((d.synth.bars, d.cnn.epochs, d.gbdt.num_rounds), (5_000, 5, 100));
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = HarnessConfig::resolve(
            Some(Preset::Desk),
            None,
            &["cnn.epochs=2".into(), "gbdt.early_stopping_rounds=0".into(), "data.input=bars.csv".into()],
            Some(7),
        )
        .unwrap();
        assert_eq!(c.cnn.epochs, 2);
        assert_eq!(c.gbdt.early_stopping_rounds, None);
        assert_eq!(c.data.input.as_deref(), Some(Path::new("bars.csv")));
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn file_merges_over_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[gbdt]\nnum_leaves = 12\n[synth]\nbars = 900\n").unwrap();
        let c = HarnessConfig::resolve(Some(Preset::Desk), Some(&p), &[], None).unwrap();
        assert_eq!((c.gbdt.num_leaves, c.synth.bars, c.cnn.epochs), (12, 900, 5));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(HarnessConfig::resolve(None, None, &["cnn.epoch=2".into()], None).is_err());
        assert!(HarnessConfig::resolve(None, None, &["nope.x=2".into()], None).is_err());
        assert!(HarnessConfig::resolve(None, None, &["data.train_fraction=1.5".into()], None).is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = HarnessConfig::preset(Preset::Desk);
        let back: HarnessConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = HarnessConfig { seed: 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
    }
}
