//! Labeled datasets, splitting and class balancing, evaluation metrics and
//! the training loop.

mod fit;
mod metrics;
mod prep;
mod report;

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::georef::ClassDictionary;
use crate::pointcloud::PointCloud;
use crate::rng::{seeded, stream_seed};

pub use fit::{
    class_key_values, dictionary_from_key_values, evaluate, predict_probabilities, train_model,
    write_metrics, write_timing, EpochRecord, OptimizerKind, TrainConfig, TrainOutcome,
    METRICS_HEADER,
};
pub use metrics::{
    argmax, auc_ovr, auc_per_class, binary_auc, binomial_interval, confusion_and_accuracy,
    softmax_rows, Confusion, EvalReport,
};
pub use prep::{Encoded, InputSpec, Normalization, Preprocessor};
pub use report::{format_report, reference_for, ReferenceRow, REFERENCE_LABEL, REFERENCE_RESULTS};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub cloud: PointCloud,
    pub label: usize,
}

/// Clouds with class indices into a dictionary. Ids are unique and every
/// label is a valid class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<LabeledItem>,
    dictionary: ClassDictionary,
}

impl LabeledDataset {
    pub fn new(items: Vec<LabeledItem>, dictionary: ClassDictionary) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if item.label >= dictionary.len() {
                return Err(Error::LabelOutOfRange {
                    label: item.label,
                    classes: dictionary.len(),
                });
            }
            if !seen.insert(item.cloud.id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate cloud id `{}`",
                    item.cloud.id
                )));
            }
        }
        Ok(Self { items, dictionary })
    }

    pub fn items(&self) -> &[LabeledItem] {
        &self.items
    }

    pub fn dictionary(&self) -> &ClassDictionary {
        &self.dictionary
    }

    pub fn num_classes(&self) -> usize {
        self.dictionary.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn clouds(&self) -> Vec<PointCloud> {
        self.items.iter().map(|i| i.cloud.clone()).collect()
    }

    /// Items per class, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.dictionary.len()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    fn subset(&self, mut keep: Vec<usize>) -> Self {
        keep.sort_unstable();
        Self {
            items: keep.into_iter().map(|i| self.items[i].clone()).collect(),
            dictionary: self.dictionary.clone(),
        }
    }

    /// Item indices grouped by class.
    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.dictionary.len()];
        for (i, item) in self.items.iter().enumerate() {
            groups[item.label].push(i);
        }
        groups
    }
}

/// Per-class shuffled split: `floor(fraction * support)` items of each class
/// go to train, the rest to test. Classes without items are skipped; both
/// halves keep the original item order.
pub fn stratified_split(
    ds: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in ds.by_class().into_iter().enumerate() {
        match members.len() {
            0 => continue,
            1 => return Err(Error::ClassTooSmall { class, count: 1 }),
            _ => {}
        }
        members.shuffle(&mut seeded(stream_seed(seed, class as u64)));
        // the epsilon keeps 0.8 * 100 from flooring to 79
        let n_train = (fraction * members.len() as f64 + 1e-9).floor() as usize;
        test.extend_from_slice(&members[n_train..]);
        members.truncate(n_train);
        train.extend(members);
    }
    Ok((ds.subset(train), ds.subset(test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    #[default]
    None,
    /// Draw extra copies of minority-class items up to the largest class.
    Up,
    /// Subsample every class down to the smallest one.
    Down,
}

impl Resample {
    pub fn name(self) -> &'static str {
        match self {
            Resample::None => "none",
            Resample::Up => "up",
            Resample::Down => "down",
        }
    }
}

impl std::fmt::Display for Resample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Resample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Resample::None),
            "up" => Ok(Resample::Up),
            "down" => Ok(Resample::Down),
            other => Err(Error::Config(format!(
                "unknown resample strategy '{other}'"
            ))),
        }
    }
}

/// Balances class counts. Classes without items are left empty. Upsampled
/// copies follow the originals and carry the id suffix `~dupN`.
pub fn resample(ds: &LabeledDataset, strategy: Resample, seed: u64) -> LabeledDataset {
    let groups = ds.by_class();
    let present = || groups.iter().filter(|g| !g.is_empty()).map(Vec::len);
    match strategy {
        Resample::None => ds.clone(),
        Resample::Down => {
            let Some(target) = present().min() else {
                return ds.clone();
            };
            let mut keep = Vec::new();
            for (class, g) in groups.iter().enumerate() {
                let mut rng = seeded(stream_seed(seed, class as u64));
                keep.extend(
                    index::sample(&mut rng, g.len(), target.min(g.len()))
                        .into_iter()
                        .map(|i| g[i]),
                );
            }
            ds.subset(keep)
        }
        Resample::Up => {
            let Some(target) = present().max() else {
                return ds.clone();
            };
            let mut items = ds.items.clone();
            for (class, g) in groups.iter().enumerate() {
                if g.is_empty() {
                    continue;
                }
                let mut rng = seeded(stream_seed(seed, class as u64));
                for k in 0..target - g.len() {
                    let mut item = ds.items[g[rng.random_range(0..g.len())]].clone();
                    item.cloud.id = format!("{}~dup{k}", item.cloud.id);
                    items.push(item);
                }
            }
            LabeledDataset {
                items,
                dictionary: ds.dictionary.clone(),
            }
        }
    }
}

#[cfg(test)]
mod tests;
