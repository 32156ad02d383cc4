//! The training loop: seeded mini-batches, cross-entropy, Adam, and a test
//! evaluation after every epoch.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::metrics::{softmax_rows, EvalReport};
use super::prep::{Encoded, Preprocessor};
use super::report::reference_for;
use super::{resample, LabeledDataset, Resample};
use crate::error::{Error, Result};
use crate::georef::ClassDictionary;
use crate::io::write_rows;
use crate::models::{Architecture, CnnConfig, Fusion, Mode, Model, ModelKind, PctConfig};
use crate::raster::RasterMode;
use crate::rng::{seeded, stream_seed};
use crate::tensor::Optimizer;

pub const METRICS_HEADER: [&str; 5] = [
    "epoch",
    "loss",
    "overall_accuracy",
    "auc_macro_ovr",
    "seconds",
];

// sub-stream ids under the root seed
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_RESAMPLE: u64 = 4;
const STREAM_BALANCE: u64 = 5;

/// Evaluation runs in chunks of this many items; eval-mode outputs do not
/// depend on the chunking.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Share of each class that goes to training.
    pub split_fraction: f64,
    pub resample: Resample,
    /// Quartered PCT widths and 128 points.
    pub tiny: bool,
    /// Raster side for the CNN models.
    pub res: usize,
    /// PCT input size; the preset's when unset.
    pub input_points: Option<usize>,
    /// CNN view fusion; the model's default when unset.
    pub fusion: Option<Fusion>,
    /// Shared dataset-wide rescale instead of per-cloud normalization; the
    /// model's default when unset.
    pub height_rescale: Option<bool>,
    pub raster_extent: f64,
    pub raster_mode: RasterMode,
    pub optimizer: OptimizerKind,
}

/// Update rule. Adam is the default; plain SGD barely moves the networks at
/// small learning rates and is kept for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (adam|sgd)"))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::PcTrees,
            batch_size: 32,
            epochs: 100,
            lr: 1e-5,
            seed: 0,
            split_fraction: 0.8,
            resample: Resample::None,
            tiny: false,
            res: 128,
            input_points: None,
            fusion: None,
            height_rescale: None,
            raster_extent: 2.0,
            raster_mode: RasterMode::Density,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            ));
        }
        if self.model == ModelKind::PcTrees && self.fusion.is_some() {
            return bad("fusion applies to the CNN models only".into());
        }
        if self.model != ModelKind::PcTrees && self.input_points.is_some() {
            return bad("input_points applies to pctrees only".into());
        }
        if self.res == 0 {
            return Err(Error::InvalidResolution(0));
        }
        if !(self.raster_extent.is_finite() && self.raster_extent > 0.0) {
            return Err(Error::InvalidExtent(self.raster_extent));
        }
        Ok(())
    }

    pub fn fusion(&self) -> Option<Fusion> {
        self.fusion.or(self.model.default_fusion())
    }

    pub fn height_rescale(&self) -> bool {
        self.height_rescale
            .unwrap_or(self.model.default_height_rescale())
    }

    pub fn architecture(&self, num_classes: usize) -> Result<Architecture> {
        self.validate()?;
        let arch = match self.fusion() {
            Some(fusion) => {
                Architecture::MultiView(CnnConfig::quarter(fusion, self.res, num_classes))
            }
            None => {
                let mut c = if self.tiny {
                    PctConfig::tiny(num_classes)
                } else {
                    PctConfig::full(num_classes)
                };
                if let Some(n) = self.input_points {
                    c.input_points = n;
                }
                Architecture::Pct(c)
            }
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Resolved values, for run manifests.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("model", self.model.name().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("seed", self.seed.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("resample", self.resample.to_string()),
            ("tiny", self.tiny.to_string()),
            ("height_rescale", self.height_rescale().to_string()),
        ];
        match self.fusion() {
            Some(f) => {
                kv.push(("fusion", f.to_string()));
                kv.push(("res", self.res.to_string()));
                kv.push(("raster_extent", self.raster_extent.to_string()));
                kv.push(("raster_mode", self.raster_mode.to_string()));
            }
            None => {
                if let Some(n) = self.input_points {
                    kv.push(("input_points", n.to_string()));
                }
            }
        }
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch's batches, weighted by
    /// batch size.
    pub loss: f64,
    /// Test-set evaluation after the epoch.
    pub report: EvalReport,
    /// Wall seconds spent on this epoch's training steps.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub kind: ModelKind,
    pub preprocessor: Preprocessor,
    pub dictionary: ClassDictionary,
    /// Test-set evaluation of the untrained model.
    pub initial: EvalReport,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// The last epoch's report (the untrained one if no epoch ran).
    pub fn final_report(&self) -> &EvalReport {
        self.history.last().map_or(&self.initial, |r| &r.report)
    }

    /// Writes the checkpoint plus everything needed to rebuild the inputs.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut extra = vec![("model".to_string(), self.kind.name().to_string())];
        extra.extend(self.preprocessor.to_key_values());
        extra.extend(class_key_values(&self.dictionary));
        self.model.save(dir, &extra)
    }
}

/// `class.<i> = <name>` pairs.
pub fn class_key_values(dictionary: &ClassDictionary) -> Vec<(String, String)> {
    dictionary
        .class_names()
        .iter()
        .enumerate()
        .map(|(i, n)| (format!("class.{i}"), n.clone()))
        .collect()
}

/// Inverse of [`class_key_values`].
pub fn dictionary_from_key_values(kv: &[(String, String)]) -> Result<ClassDictionary> {
    let mut names = Vec::new();
    while let Some((_, v)) = kv
        .iter()
        .rev()
        .find(|(k, _)| *k == format!("class.{}", names.len()))
    {
        names.push(v.clone());
    }
    if names.is_empty() {
        return Err(Error::ConfigMismatch(
            "model description lists no classes".into(),
        ));
    }
    Ok(ClassDictionary::from_class_names(names))
}

/// Class probabilities `[n][k]` in eval mode.
pub fn predict_probabilities(model: &mut Model, inputs: &Encoded) -> Result<Vec<Vec<f64>>> {
    let k = model.arch().num_classes();
    let mut probs = Vec::with_capacity(inputs.len());
    let all: Vec<usize> = (0..inputs.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = inputs.batch(chunk)?;
        let (net, mut s) = model.session(Mode::Eval, 0);
        let logits = net.forward(&mut s, &x)?;
        probs.extend(softmax_rows(logits.data(), k));
    }
    Ok(probs)
}

pub fn evaluate(model: &mut Model, inputs: &Encoded, labels: &[usize]) -> Result<EvalReport> {
    let probs = predict_probabilities(model, inputs)?;
    EvalReport::from_probabilities(&probs, labels, model.arch().num_classes())
}

/// Trains on `train` (balanced per `cfg.resample`) and evaluates on `test` after every epoch. `on_epoch`
/// sees each record as it is produced and may stop the run by returning
/// `false`. Results depend only on the config and the datasets.
pub fn train_model(
    cfg: &TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidCount(
            "training and test sets must be nonempty".into(),
        ));
    }
    if train.dictionary() != test.dictionary() {
        return Err(Error::ConfigMismatch(
            "training and test sets use different class dictionaries".into(),
        ));
    }
    let balanced = resample(train, cfg.resample, stream_seed(cfg.seed, STREAM_BALANCE));
    let train = &balanced;
    let arch = cfg.architecture(train.num_classes())?;
    let input = Preprocessor::input_for(&arch, cfg.raster_extent, cfg.raster_mode);
    let prep = Preprocessor::fit(
        cfg.height_rescale(),
        input,
        &train.clouds(),
        stream_seed(cfg.seed, STREAM_RESAMPLE),
    )?;
    let train_x = prep.encode(&train.clouds())?;
    let test_x = prep.encode(&test.clouds())?;
    let (train_y, test_y) = (train.labels(), test.labels());

    let mut model = Model::new(arch, stream_seed(cfg.seed, STREAM_INIT))?;
    let mut opt = match cfg.optimizer {
        OptimizerKind::Adam => Optimizer::adam(model.params.values(), cfg.lr),
        OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.lr },
    };
    let reference = Some(reference_for(cfg.model));
    let mut initial = evaluate(&mut model, &test_x, &test_y)?;
    initial.reference = reference;

    let shuffle_root = stream_seed(cfg.seed, STREAM_SHUFFLE);
    let dropout_root = stream_seed(cfg.seed, STREAM_DROPOUT);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut elapsed = 0.0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut seeded(stream_seed(shuffle_root, epoch as u64)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_x.batch(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (net, mut s) = model.session(Mode::Train, stream_seed(dropout_root, step));
            let loss = net.forward(&mut s, &x)?.cross_entropy(&y)?;
            loss.backward();
            let grads = s.grads();
            drop(s);
            opt.step(model.params.values_mut(), &grads)?;
            loss_sum += f64::from(loss.item()?) * batch.len() as f64;
            step += 1;
        }
        let seconds = start.elapsed().as_secs_f64();
        elapsed += seconds;
        let mut report = evaluate(&mut model, &test_x, &test_y)?;
        report.wall_time = elapsed;
        report.reference = reference;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            report,
            seconds,
        };
        let go_on = on_epoch(&record);
        history.push(record);
        if !go_on {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        kind: cfg.model,
        preprocessor: prep,
        dictionary: train.dictionary().clone(),
        initial,
        history,
    })
}

/// Per-epoch metrics. Wall-clock seconds make a file differ between
/// otherwise identical runs, so unless `with_time` is set the `seconds`
/// column is left empty and the timings go to [`write_timing`].
pub fn write_metrics(path: &Path, history: &[EpochRecord], with_time: bool) -> Result<()> {
    let rows = history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.loss.to_string(),
            r.report.overall_accuracy.to_string(),
            r.report
                .auc_macro_ovr
                .map_or(String::new(), |a| a.to_string()),
            if with_time {
                r.seconds.to_string()
            } else {
                String::new()
            },
        ]
    });
    write_rows(path, &METRICS_HEADER, rows)
}

/// `epoch,seconds` for every epoch.
pub fn write_timing(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let rows = history
        .iter()
        .map(|r| vec![r.epoch.to_string(), r.seconds.to_string()]);
    write_rows(path, &["epoch", "seconds"], rows)
}
