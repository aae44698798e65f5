//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; files and `--set` overrides may only assign
//! known keys. The resolved configuration renders back to text in a fixed
//! key order so it can be echoed next to every output.

use std::fs;
use std::path::Path;

use crate::data::{DataKind, DataParams};
use crate::error::{Error, Result};
use crate::losses::{Granularity, LossConfig, LossKind};
use crate::models::ModelConfig;
use crate::scoring::ScoreMode;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "CONAD_SEED";

const DEFAULTS: &[(&str, &str)] = &[
    ("data.generator", "imbalanced_modes"),
    ("data.n", "1000"),
    ("data.noise", "0.05"),
    ("data.weight", "0.9"),
    ("data.side", "16"),
    ("data.ratios", "0.8,0.1,0.1"),
    ("data.seed", "0"),
    ("model.hypotheses", "4"),
    ("model.latent_dim", "8"),
    ("model.hyp_discrimination", "true"),
    ("model.leaky_slope", "0.2"),
    ("model.encoder_hidden", "64,32"),
    ("model.decoder_hidden", "32,64"),
    ("model.disc_hidden", "64,32"),
    ("model.disc_features", "16"),
    ("loss.kind", "conad"),
    ("loss.epsilon", "0"),
    ("loss.granularity", "pixel"),
    ("loss.adv_weight", "1"),
    ("loss.kl_weight", "1"),
    ("loss.symmetric_kl", "false"),
    ("train.lr", "0.001"),
    ("train.batch_size", "32"),
    ("train.epochs_max", "200"),
    ("train.patience", "20"),
    ("train.gen_epochs_per_disc", "5"),
    ("train.seed", "0"),
    ("score.mode", "wta_local"),
    ("score.top_percent", "auto"),
    ("score.split", "test"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreConfig {
    pub mode: ScoreMode,
    pub top_percent: f64,
    /// Normal split to score: `test` pairs it with the anomaly split,
    /// `train`/`valid` are scored alone.
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    entries: Vec<(String, String)>,
}

/// Mutable key/value view used while layering file, overrides and env.
#[derive(Clone, Debug)]
pub struct ConfigMap {
    entries: Vec<(String, String)>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        Self {
            entries: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl ConfigMap {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let slot = self.entries.iter_mut().find(|(k, _)| k == key).ok_or_else(|| {
            Error::Config(format!("unknown configuration key {key:?}"))
        })?;
        slot.1 = value.trim().to_string();
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .expect("key listed in DEFAULTS")
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let g = |k: &str| self.get(k);
        let kind = match g("data.generator") {
            "half_moon" => DataKind::HalfMoon {
                noise: num(&self, "data.noise")?,
            },
            "imbalanced_modes" => DataKind::ImbalancedModes {
                weight: num(&self, "data.weight")?,
            },
            "texture" => DataKind::Texture {
                side: num(&self, "data.side")?,
                noise: num(&self, "data.noise")?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown data.generator {other:?}; expected one of half_moon, imbalanced_modes, texture"
                )))
            }
        };
        let ratios: [f64; 3] = list::<f64>(&self, "data.ratios")?
            .try_into()
            .map_err(|_| Error::Config("data.ratios needs three comma-separated values".into()))?;
        let data = DataParams {
            n: num(&self, "data.n")?,
            ratios,
            seed: num(&self, "data.seed")?,
            kind,
        };
        data.validate()?;

        let loss_kind: LossKind = g("loss.kind").parse()?;
        let data_dim = data.kind.side().map_or(2, |s| s * s);
        let model = ModelConfig {
            data_dim,
            latent_dim: num(&self, "model.latent_dim")?,
            hypotheses: num(&self, "model.hypotheses")?,
            mixture: loss_kind.needs_mixture(),
            hyp_discrimination: boolean(&self, "model.hyp_discrimination")?,
            leaky_slope: num(&self, "model.leaky_slope")?,
            encoder_hidden: list(&self, "model.encoder_hidden")?,
            decoder_hidden: list(&self, "model.decoder_hidden")?,
            disc_hidden: list(&self, "model.disc_hidden")?,
            disc_features: num(&self, "model.disc_features")?,
        };
        model.validate()?;

        let loss = LossConfig {
            kind: loss_kind,
            epsilon: num(&self, "loss.epsilon")?,
            granularity: g("loss.granularity").parse::<Granularity>()?,
            adv_weight: num(&self, "loss.adv_weight")?,
            kl_weight: num(&self, "loss.kl_weight")?,
            symmetric_kl: boolean(&self, "loss.symmetric_kl")?,
        };
        loss.validate(model.hypotheses, model.mixture)?;
        let train = TrainConfig {
            epochs_max: num(&self, "train.epochs_max")?,
            batch_size: num(&self, "train.batch_size")?,
            lr: num(&self, "train.lr")?,
            gen_epochs_per_disc: num(&self, "train.gen_epochs_per_disc")?,
            patience: num(&self, "train.patience")?,
            seed: num(&self, "train.seed")?,
            loss,
        };
        train.validate()?;

        let top_percent = match g("score.top_percent") {
            "auto" if data.kind.side().is_some() => 10.0,
            "auto" => 100.0,
            _ => num(&self, "score.top_percent")?,
        };
        if !(top_percent > 0.0 && top_percent <= 100.0) {
            return Err(Error::Config(format!("score.top_percent {top_percent} outside (0, 100]")));
        }
        let split = g("score.split").to_string();
        if !["test", "train", "valid"].contains(&split.as_str()) {
            return Err(Error::Config(format!(
                "score.split {split:?}; expected test, train or valid"
            )));
        }
        let score = ScoreConfig {
            mode: g("score.mode").parse()?,
            top_percent,
            split,
        };
        Ok(ExperimentConfig {
            data,
            model,
            train,
            score,
            entries: self.entries,
        })
    }
}

fn num<T: std::str::FromStr>(m: &ConfigMap, key: &str) -> Result<T> {
    let v = m.get(key);
    v.parse()
        .map_err(|_| Error::Config(format!("{key} = {v:?} is not a valid number")))
}

fn boolean(m: &ConfigMap, key: &str) -> Result<bool> {
    match m.get(key) {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(Error::Config(format!("{key} = {v:?} must be true or false"))),
    }
}

fn list<T: std::str::FromStr>(m: &ConfigMap, key: &str) -> Result<Vec<T>> {
    let v = m.get(key);
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key} = {v:?} is not a comma-separated list of numbers")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self> {
        let mut m = ConfigMap::default();
        for (k, v) in pairs {
            m.set(k, v)?;
        }
        m.resolve()
    }

    /// File, then `--set` overrides, then the seed environment variable.
    pub fn load(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut m = ConfigMap::default();
        m.apply_text(&text)?;
        for o in overrides {
            m.apply_override(o)?;
        }
        if let Some(seed) = env_seed {
            m.set("train.seed", seed)?;
        }
        m.resolve()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Every key in fixed order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The same configuration with further assignments applied.
    pub fn with(&self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut m = ConfigMap {
            entries: self.entries.clone(),
        };
        for (k, v) in pairs {
            m.set(k, v)?;
        }
        m.resolve()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = ConfigMap::default().resolve().unwrap();
        assert_eq!(c.model.data_dim, 2);
        assert_eq!(c.score.top_percent, 100.0);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.gen_epochs_per_disc, 5);
        assert_eq!(c.train.patience, 20);
    }

    #[test]
    fn text_overrides_and_comments() {
        let mut m = ConfigMap::default();
        m.apply_text("# comment\ndata.generator = texture # inline\n\nmodel.hypotheses=2\n")
            .unwrap();
        m.apply_override("loss.kind=wta").unwrap();
        let c = m.resolve().unwrap();
        assert_eq!(c.model.data_dim, 256);
        assert_eq!(c.model.hypotheses, 2);
        assert_eq!(c.score.top_percent, 10.0);
        assert_eq!(c.train.loss.kind, LossKind::Wta);
        assert!(c.to_text().contains("model.hypotheses = 2\n"));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut m = ConfigMap::default();
        assert!(m.set("model.heads", "3").is_err());
        assert!(m.apply_text("just words").is_err());
        let bad = |k: &str, v: &str| ExperimentConfig::from_pairs(&[(k, v)]).is_err();
        assert!(bad("model.hypotheses", "0"));
        assert!(bad("data.generator", "moons"));
        assert!(bad("loss.epsilon", "0.9"));
        assert!(bad("train.lr", "-1"));
        assert!(bad("data.ratios", "0.5,0.5"));
        assert!(bad("score.top_percent", "0"));
        assert!(bad("model.hyp_discrimination", "yes"));
    }

    #[test]
    fn mixture_follows_loss_kind() {
        let c = ExperimentConfig::from_pairs(&[("loss.kind", "mdn")]).unwrap();
        assert!(c.model.mixture);
        let v = ExperimentConfig::from_pairs(&[("loss.kind", "vae"), ("model.hypotheses", "1")]).unwrap();
        assert!(!v.model.mixture);
    }
}
