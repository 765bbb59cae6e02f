//! Component ablation: supervised baseline plus four incremental variants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricMeans;
use crate::trainer::{evaluate_samples, pretrain_on, train_student_on, train_supervised, RunConfig, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Foreground decoder trained on labeled data only.
    Supervised,
    /// #1: semi-supervised, foreground branch only.
    FgOnly,
    /// #2: adds the background branch.
    PlusBg,
    /// #3: adds the mixing layer.
    PlusMix,
    /// #4: adds the consistency loss.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Supervised, Variant::FgOnly, Variant::PlusBg, Variant::PlusMix, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Supervised => "supervised",
            Variant::FgOnly => "fg_only",
            Variant::PlusBg => "plus_bg",
            Variant::PlusMix => "plus_mix",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// `(use_bg_branch, use_mix_layer, use_bcl)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::Supervised | Variant::FgOnly => (false, false, false),
            Variant::PlusBg => (true, false, false),
            Variant::PlusMix => (true, true, false),
            Variant::Full => (true, true, true),
        }
    }

    pub fn configure(self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.seed = seed;
        let (bg, mix, bcl) = self.flags();
        c.trainer.use_bg_branch = bg;
        c.trainer.use_mix_layer = mix;
        c.trainer.use_bcl = bcl;
        c
    }
}

pub const METRIC_NAMES: [&str; 4] = ["dsc", "jaccard", "hd95", "asd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub metric: &'static str,
    pub value: f64,
}

/// Trains one variant with `seed` and returns its test-set means.
pub fn run_variant(base: &RunConfig, data: &TrainData, variant: Variant, seed: u64) -> Result<MetricMeans> {
    let cfg = variant.configure(base, seed);
    let model = match variant {
        Variant::Supervised => {
            let steps = cfg.trainer.pretrain_steps + cfg.trainer.train_steps;
            train_supervised(&cfg, data, steps)?
        }
        _ => {
            let (mut teacher, _) = pretrain_on(&cfg, data, cfg.trainer.pretrain_steps)?;
            teacher.quantize_f32();
            train_student_on(&cfg, data, teacher, |_| {})?.student
        }
    };
    Ok(evaluate_samples(&cfg, &model, &data.test, data.class_count)?.mean)
}

/// Seeds `base.seed .. base.seed + n`.
pub fn seeds(base: &RunConfig) -> Vec<u64> {
    (0..base.ablation.seeds as u64).map(|k| base.seed + k).collect()
}

pub fn run_ablation(base: &RunConfig, data: &TrainData) -> Result<Vec<AblationRow>> {
    if data.test.is_empty() {
        return Err(Error::config("ablation needs test samples"));
    }
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .into_iter()
        .flat_map(|v| seeds(base).into_iter().map(move |s| (v, s)))
        .collect();
    let means: Vec<MetricMeans> = jobs
        .par_iter()
        .map(|&(v, s)| run_variant(base, data, v, s))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(jobs.len() * 4);
    for (&(variant, seed), m) in jobs.iter().zip(means) {
        for (metric, value) in METRIC_NAMES.into_iter().zip([m.dsc, m.jaccard, m.hd95, m.asd]) {
            rows.push(AblationRow { variant, seed, metric, value });
        }
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str = "variant,seed,metric,value";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.variant.name(), r.seed, r.metric, r.value));
    }
    s
}

/// Mean of `metric` per variant, over seeds, ignoring NaN entries.
pub fn variant_means(rows: &[AblationRow], metric: &str) -> Vec<(Variant, f64)> {
    Variant::ALL
        .into_iter()
        .filter_map(|v| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v && r.metric == metric && !r.value.is_nan())
                .map(|r| r.value)
                .collect();
            (!vals.is_empty()).then(|| (v, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}
