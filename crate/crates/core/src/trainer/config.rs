//! Run configuration: one JSON document with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::GeneratorConfig;
use crate::error::{Error, Result};
use crate::losses::SegLossConfig;
use crate::metrics::SurfaceConvention;
use crate::network::ArchSpec;
use crate::theory::TheoryConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory holding `manifest.json`.
    pub path: PathBuf,
    /// When set, re-splits the labeled+unlabeled pool keeping this labeled fraction.
    pub labeled_ratio: Option<f64>,
    pub generator: GeneratorConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: PathBuf::from("data"),
            labeled_ratio: None,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub encoder_widths: Vec<usize>,
    pub depth: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_widths: vec![8, 16, 32],
            depth: 2,
        }
    }
}

impl NetworkConfig {
    pub fn arch(&self, input_channels: usize, class_channels: usize) -> ArchSpec {
        ArchSpec {
            input_channels,
            class_channels,
            encoder_widths: self.encoder_widths.clone(),
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Zero-block side as a fraction of the grid side.
    pub beta: f64,
    /// Random flips and quarter turns before cut-mix.
    pub flips_rotations: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            beta: 2.0 / 3.0,
            flips_rotations: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub seg: SegLossConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            seg: SegLossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub pretrain_steps: u64,
    /// `t_max` of the student phase.
    pub train_steps: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_momentum: f64,
    pub pseudo_threshold: f64,
    pub use_bg_branch: bool,
    pub use_mix_layer: bool,
    pub use_bcl: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            labeled_batch: 4,
            unlabeled_batch: 4,
            pretrain_steps: 300,
            train_steps: 1500,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            ema_momentum: 0.99,
            pseudo_threshold: 0.5,
            use_bg_branch: true,
            use_mix_layer: true,
            use_bcl: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub surface: SurfaceConvention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { seeds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub losses: LossConfig,
    pub trainer: TrainerConfig,
    pub metrics: MetricsConfig,
    pub theory: TheoryConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            augment: AugmentConfig::default(),
            losses: LossConfig::default(),
            trainer: TrainerConfig::default(),
            metrics: MetricsConfig::default(),
            theory: TheoryConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
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

/// Applies `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("override key {path:?} has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {path:?} descends into a non-object")))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("override {path:?} descends into a non-object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the optional file, then dotted overrides; validated.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            if !patch.is_object() {
                return Err(Error::config(format!("{}: top level must be an object", path.display())));
            }
            merge(&mut doc, patch);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if t.labeled_batch == 0 || t.unlabeled_batch == 0 {
            return bad("batches need at least one labeled and one unlabeled sample");
        }
        if t.pretrain_steps == 0 || t.train_steps == 0 {
            return bad("step counts must be positive");
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&t.momentum) || !(t.weight_decay >= 0.0) {
            return bad("momentum must lie in [0,1) and weight_decay be non-negative");
        }
        if !(0.0..=1.0).contains(&t.ema_momentum) {
            return bad("ema_momentum must lie in [0,1]");
        }
        if !(t.pseudo_threshold > 0.0 && t.pseudo_threshold < 1.0) {
            return bad("pseudo_threshold must lie in (0,1)");
        }
        if t.use_mix_layer && !t.use_bg_branch {
            return bad("use_mix_layer requires use_bg_branch");
        }
        if !(self.losses.alpha >= 0.0 && self.losses.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        let s = &self.losses.seg;
        if !(s.dice_weight >= 0.0 && s.ce_weight >= 0.0 && s.dice_smooth >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(s.prob_clamp > 0.0 && s.prob_clamp < 0.5) {
            return bad("prob_clamp must lie in (0, 0.5)");
        }
        if !(self.augment.beta > 0.0 && self.augment.beta < 1.0) {
            return bad("beta must lie in (0,1)");
        }
        if let Some(r) = self.data.labeled_ratio {
            if !(r > 0.0 && r < 1.0) {
                return bad("labeled_ratio must lie in (0,1)");
            }
        }
        if self.ablation.seeds == 0 {
            return bad("ablation needs at least one seed");
        }
        let th = &self.theory;
        if th.scenarios == 0
            || !(th.lr_min > 0.0 && th.lr_min <= th.lr_max)
            || !(th.grad_min > 0.0 && th.grad_min < th.grad_max)
            || !(th.mu_margin > 0.0 && th.mu_margin < 0.25)
        {
            return bad("theory sampling ranges are inconsistent");
        }
        self.network.arch(1, 1).validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
