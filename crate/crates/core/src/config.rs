//! Flat key-value run configuration.
//!
//! A config file is TOML with top-level keys only, for example
//!
//! ```toml
//! preset = "desk"
//! n_emb = 32
//! payloads = [20, 60, 120]
//! epochs_stage1 = 10
//! train_data = "data/train.bin"
//! ```
//!
//! `preset` (`"desk"` or `"full"`) picks the starting values; every other
//! key overrides one field. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::etype2::Etype2Config;
use crate::nn::Hyperparams;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub model: Hyperparams,
    pub train: TrainConfig,
    pub baseline: Etype2Config,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (model, train) = match name {
            "desk" => (Hyperparams::desk(), TrainConfig::desk()),
            "full" => (Hyperparams::full(), TrainConfig::default()),
            other => return Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        };
        Ok(Self {
            preset: name.to_string(),
            model,
            train,
            baseline: Etype2Config::new(4, 0.25, 3, 4),
            train_data: None,
            test_data: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        let preset = match table.get("preset") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::InvalidConfig("preset must be a string".into()))?
                .to_string(),
            None => "desk".to_string(),
        };
        let mut cfg = Self::preset(&preset)?;
        for (key, value) in &table {
            if key != "preset" {
                cfg.set(key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let uint = || -> Result<usize> {
            v.as_integer()
                .filter(|&i| i >= 0)
                .map(|i| i as usize)
                .ok_or_else(|| Error::InvalidConfig(format!("{key} must be a non-negative integer")))
        };
        let float = || -> Result<f64> {
            v.as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::InvalidConfig(format!("{key} must be a number")))
        };
        let list = || -> Result<Vec<usize>> {
            v.as_array()
                .ok_or_else(|| Error::InvalidConfig(format!("{key} must be an array")))?
                .iter()
                .map(|x| {
                    x.as_integer()
                        .filter(|&i| i > 0)
                        .map(|i| i as usize)
                        .ok_or_else(|| Error::InvalidConfig(format!("{key} entries must be positive integers")))
                })
                .collect()
        };
        let path = || -> Result<PathBuf> {
            v.as_str()
                .map(PathBuf::from)
                .ok_or_else(|| Error::InvalidConfig(format!("{key} must be a string")))
        };
        let (m, t, b) = (&mut self.model, &mut self.train, &mut self.baseline);
        match key {
            "n_head" => m.n_head = uint()?,
            "n_sb" => m.n_sb = uint()?,
            "n_ri" => m.n_ri = uint()?,
            "n_emb" => m.n_emb = uint()?,
            "t_en" => m.t_en = uint()?,
            "t_de" => m.t_de = uint()?,
            "ffn_width" => m.ffn_width = uint()?,
            "payloads" => m.payloads = list()?,
            "antennas" => m.antennas = list()?,
            "batch_size" => t.batch_size = uint()?,
            "epochs_stage1" => t.epochs_stage1 = uint()?,
            "epochs_stage2" => t.epochs_stage2 = uint()?,
            "epochs_stage3" => t.epochs_stage3 = uint()?,
            "warmup_steps" => t.warmup_steps = uint()?,
            "lr_scale" => t.lr_scale = Some(float()?),
            "cosine_lr_min" => t.cosine_lr_min = float()?,
            "cosine_lr_max" => t.cosine_lr_max = float()?,
            "adam_beta1" => t.adam_beta1 = float()?,
            "adam_beta2" => t.adam_beta2 = float()?,
            "adam_eps" => t.adam_eps = float()?,
            "base_antenna" => t.base_antenna = uint()?,
            "seed" => t.seed = uint()? as u64,
            "baseline_l" => b.l = uint()?,
            "baseline_p" => b.p = float()?,
            "baseline_amp_bits" => b.amp_bits = uint()? as u32,
            "baseline_phase_bits" => b.phase_bits = uint()? as u32,
            "baseline_oversampling" => b.oversampling = uint()?,
            "train_data" => self.train_data = Some(path()?),
            "test_data" => self.test_data = Some(path()?),
            other => return Err(Error::InvalidConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !self.model.antennas.contains(&self.train.base_antenna) {
            return Err(Error::InvalidConfig(format!(
                "base_antenna {} not among antennas {:?}",
                self.train.base_antenna, self.model.antennas
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; stamped on every report.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let cfg = RunConfig::parse("preset = \"full\"\nn_emb = 64\npayloads = [20, 40]\ncosine_lr_min = 2e-5\n").unwrap();
        assert_eq!(cfg.model.n_emb, 64);
        assert_eq!(cfg.model.payloads, vec![20, 40]);
        assert_eq!(cfg.model.t_en, 2);
        assert_eq!(cfg.train.cosine_lr_min, 2e-5);
    }

    #[test]
    fn empty_file_is_desk() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::preset("desk").unwrap());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("n_emb = -1").is_err());
        assert!(RunConfig::parse("n_head = 3").is_err());
        assert!(RunConfig::parse("preset = \"huge\"").is_err());
        assert!(RunConfig::parse("base_antenna = 8").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::preset("desk").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
