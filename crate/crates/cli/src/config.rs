//! Flat key=value run configuration. Precedence: built-in desk-scale
//! defaults, then the config file, then `--set key=value` pairs, then
//! dedicated command-line flags. Unknown keys are rejected, and every
//! command writes its resolved configuration next to its outputs so a run
//! can be reproduced from that file alone.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mdt_core::baselines::AblationSpec;
use mdt_core::model::{MdtConfig, Pooling};
use mdt_core::record::Task;
use mdt_core::train::TrainConfig;

use crate::datagen::SyntheticSpec;
use crate::usage;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // dataset generation
    pub n_records: usize,
    pub class_count: usize,
    pub image_size: usize,
    pub patch: usize,
    pub vocab_size: usize,
    pub n_cc: usize,
    pub n_lab: usize,
    pub cross_modal_fraction: f64,
    pub noise: f64,
    pub slices: usize,
    // model
    pub model: String,
    pub ablation: String,
    pub dim: usize,
    pub heads: usize,
    pub n_bidirectional: usize,
    pub n_self: usize,
    pub dropout: f32,
    pub pooling: String,
    pub lambda: f32,
    pub mask_pad: bool,
    pub standard_residual: bool,
    // training
    pub lr: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f32,
    pub batch_size: usize,
    pub seed: u64,
    // evaluation / visualization
    pub n_boot: usize,
    pub split: String,
    pub top_words: usize,
    pub task: u8,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            n_records: 256,
            class_count: 2,
            image_size: 32,
            patch: 16,
            vocab_size: 64,
            n_cc: 8,
            n_lab: 8,
            cross_modal_fraction: 0.7,
            noise: 0.05,
            slices: 16,
            model: "irene".into(),
            ablation: "ha2".into(),
            dim: 16,
            heads: 2,
            n_bidirectional: 2,
            n_self: 2,
            dropout: 0.1,
            pooling: "cls".into(),
            lambda: 1.0,
            mask_pad: false,
            standard_residual: false,
            lr: 1e-3,
            weight_decay: 1e-2,
            epochs: 30,
            lr_drop_epoch: 20,
            lr_drop_factor: 10.0,
            batch_size: 32,
            seed: 0,
            n_boot: 1000,
            split: "test".into(),
            top_words: 3,
            task: 1,
        }
    }
}

macro_rules! config_keys {
    ($each:ident) => {
        $each!(n_records, usize);
        $each!(class_count, usize);
        $each!(image_size, usize);
        $each!(patch, usize);
        $each!(vocab_size, usize);
        $each!(n_cc, usize);
        $each!(n_lab, usize);
        $each!(cross_modal_fraction, f64);
        $each!(noise, f64);
        $each!(slices, usize);
        $each!(model, String);
        $each!(ablation, String);
        $each!(dim, usize);
        $each!(heads, usize);
        $each!(n_bidirectional, usize);
        $each!(n_self, usize);
        $each!(dropout, f32);
        $each!(pooling, String);
        $each!(lambda, f32);
        $each!(mask_pad, bool);
        $each!(standard_residual, bool);
        $each!(lr, f32);
        $each!(weight_decay, f32);
        $each!(epochs, usize);
        $each!(lr_drop_epoch, usize);
        $each!(lr_drop_factor, f32);
        $each!(batch_size, usize);
        $each!(seed, u64);
        $each!(n_boot, usize);
        $each!(split, String);
        $each!(top_words, usize);
        $each!(task, u8);
    };
}

impl RunConfig {
    /// Apply one `key=value` assignment; unknown keys are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! apply {
            ($field:ident, String) => {
                if key == stringify!($field) {
                    self.$field = value.to_string();
                    return Ok(());
                }
            };
            ($field:ident, $ty:ty) => {
                if key == stringify!($field) {
                    self.$field = value.parse::<$ty>().map_err(|e| {
                        usage(format!("config key {key}: cannot parse {value:?}: {e}"))
                    })?;
                    return Ok(());
                }
            };
        }
        config_keys!(apply);
        Err(usage(format!("unknown config key {key:?}")))
    }

    /// Serialize as sorted key=value lines.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        macro_rules! emit {
            ($field:ident, $ty:tt) => {
                lines.push(format!("{}={}", stringify!($field), self.$field));
            };
        }
        config_keys!(emit);
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn apply_assignment(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {pair:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.load_file(path)?;
        Ok(cfg)
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.txt");
        fs::write(&path, self.to_text())
            .with_context(|| format!("writing resolved config {}", path.display()))
    }

    pub fn task(&self) -> Result<Task> {
        Ok(Task::from_u8(self.task)?)
    }

    pub fn pooling(&self) -> Result<Pooling> {
        match self.pooling.as_str() {
            "cls" => Ok(Pooling::Cls),
            "average" => Ok(Pooling::Average),
            other => Err(usage(format!("pooling must be cls or average, got {other:?}"))),
        }
    }

    /// The model configuration with the requested ablation applied.
    pub fn mdt_config(&self) -> Result<MdtConfig> {
        let base = MdtConfig {
            dim: self.dim,
            heads: self.heads,
            n_bidirectional: self.n_bidirectional,
            n_self: self.n_self,
            dropout: self.dropout,
            pooling: self.pooling()?,
            class_count: self.class_count,
            image_size: self.image_size,
            patch: self.patch,
            vocab_size: self.vocab_size,
            n_cc: self.n_cc,
            n_lab: self.n_lab,
            task: self.task()?,
            lambda: self.lambda,
            mask_pad: self.mask_pad,
            standard_residual: self.standard_residual,
            ..MdtConfig::paper_task1()
        };
        let spec = AblationSpec::from_name(&self.ablation)
            .map_err(|e| usage(e.to_string()))?;
        let cfg = mdt_core::baselines::build_ablation(&spec, &base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            lr_drop_epoch: self.lr_drop_epoch,
            lr_drop_factor: self.lr_drop_factor,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            n_records: self.n_records,
            class_count: self.class_count,
            image_size: self.image_size,
            patch: self.patch,
            vocab_size: self.vocab_size,
            n_cc: self.n_cc,
            n_lab: self.n_lab,
            cross_modal_fraction: self.cross_modal_fraction,
            noise: self.noise,
            task: self.task()?,
            slices: self.slices,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignments_round_trip_through_text() {
        let mut cfg = RunConfig::default();
        cfg.set("dim", "32").unwrap();
        cfg.set("model", "image-only").unwrap();
        cfg.set("cross_modal_fraction", "0.9").unwrap();
        cfg.set("mask_pad", "true").unwrap();
        let text = cfg.to_text();

        let mut back = RunConfig::default();
        for line in text.lines() {
            back.apply_assignment(line).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("not_a_key", "1").unwrap_err();
        assert!(err.downcast_ref::<crate::UsageError>().is_some());
        let err = cfg.set("dim", "not-a-number").unwrap_err();
        assert!(err.downcast_ref::<crate::UsageError>().is_some());
    }

    #[test]
    fn ablation_flows_into_the_model_config() {
        let mut cfg = RunConfig::default();
        cfg.set("ablation", "ha0").unwrap();
        let m = cfg.mdt_config().unwrap();
        assert_eq!(m.n_bidirectional, 0);
        assert_eq!(m.n_self, 4);

        cfg.set("ablation", "no-image").unwrap();
        assert!(!cfg.mdt_config().unwrap().use_image);
    }
}
