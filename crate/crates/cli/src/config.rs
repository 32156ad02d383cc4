//! Resolved run configuration: defaults, then `--config` files in order,
//! then `--set` pairs, then dedicated flags. Later sources win; unknown keys
//! are rejected.

use std::path::Path;
use std::str::FromStr;

use pctrees::io::read_key_values;
use pctrees::models::{Fusion, ModelKind};
use pctrees::synth::{DatasetOptions, PointCount};
use pctrees::train::{OptimizerKind, Resample};
use pctrees::{MatchOptions, PlotFrame, RasterSpec, TrainConfig};

use crate::error::CliError;

/// When the point-count filter runs relative to label matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStage {
    BeforeMatch,
    AfterMatch,
}

impl FilterStage {
    fn name(self) -> &'static str {
        match self {
            FilterStage::BeforeMatch => "before_match",
            FilterStage::AfterMatch => "after_match",
        }
    }
}

impl FromStr for FilterStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "before_match" => Ok(FilterStage::BeforeMatch),
            "after_match" => Ok(FilterStage::AfterMatch),
            _ => Err("expected before_match or after_match".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    /// Clouds need strictly more points than this.
    pub min_points: usize,
    pub filter_stage: FilterStage,
    pub raster: RasterSpec,
    pub matching: MatchOptions,
    pub top_k: usize,
    pub frame: PlotFrame,
    pub synth: DatasetOptions,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub split_fraction: f64,
    pub resample: Resample,
    pub tiny: bool,
    pub input_points: Option<usize>,
    pub fusion: Option<Fusion>,
    pub height_rescale: Option<bool>,
    /// PGM previews next to the raster binaries.
    pub pgm: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: train.seed,
            model: train.model,
            min_points: 1000,
            filter_stage: FilterStage::AfterMatch,
            raster: RasterSpec::default(),
            matching: MatchOptions::default(),
            top_k: 5,
            frame: PlotFrame::default(),
            synth: DatasetOptions::default(),
            batch_size: train.batch_size,
            epochs: train.epochs,
            lr: train.lr,
            optimizer: train.optimizer,
            split_fraction: train.split_fraction,
            resample: train.resample,
            tiny: train.tiny,
            input_points: train.input_points,
            fusion: train.fusion,
            height_rescale: train.height_rescale,
            pgm: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::config(format!("{key}: cannot parse `{value}`: {e}")))
}

/// `auto` (or empty) leaves the choice to the model.
fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match value {
        "" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".into(), T::to_string)
}

fn points_to_string(p: &PointCount) -> String {
    match p {
        PointCount::Fixed(n) => n.to_string(),
        PointCount::Uniform(lo, hi) => format!("{lo}..{hi}"),
    }
}

fn parse_points(value: &str) -> Result<PointCount, CliError> {
    match value.split_once("..") {
        Some((lo, hi)) => Ok(PointCount::Uniform(
            parse("points", lo)?,
            parse("points", hi)?,
        )),
        None => Ok(PointCount::Fixed(parse("points", value)?)),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "model" => self.model = parse(key, value)?,
            "min_points" => self.min_points = parse(key, value)?,
            "filter_stage" => self.filter_stage = parse(key, value)?,
            "res" => self.raster.res = parse(key, value)?,
            "extent" => self.raster.extent = parse(key, value)?,
            "raster_mode" => self.raster.mode = parse(key, value)?,
            "cell_size" => self.matching.cell_size = parse(key, value)?,
            "include_dead" => self.matching.include_dead = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "post_x" => self.frame.post_x = parse(key, value)?,
            "post_y" => self.frame.post_y = parse(key, value)?,
            "per_class" => self.synth.per_class = parse(key, value)?,
            "points" => self.synth.points = parse_points(value)?,
            "spacing" => self.synth.spacing = parse(key, value)?,
            "position_noise" => self.synth.position_noise = parse(key, value)?,
            "collide" => self.synth.collide = parse(key, value)?,
            "synth_post_x" => self.synth.frame.post_x = parse(key, value)?,
            "synth_post_y" => self.synth.frame.post_y = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "optimizer" => self.optimizer = parse(key, value)?,
            "split_fraction" => self.split_fraction = parse(key, value)?,
            "resample" => self.resample = parse(key, value)?,
            "tiny" => self.tiny = parse(key, value)?,
            "input_points" => self.input_points = parse_auto(key, value)?,
            "fusion" => self.fusion = parse_auto(key, value)?,
            "height_rescale" => self.height_rescale = parse_auto(key, value)?,
            "pgm" => self.pgm = parse(key, value)?,
            _ => return Err(CliError::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        for (k, v) in read_key_values(path)? {
            self.set(&k, &v)
                .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.detail)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` string.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn height_rescale(&self) -> bool {
        self.height_rescale
            .unwrap_or(self.model.default_height_rescale())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
            split_fraction: self.split_fraction,
            resample: self.resample,
            tiny: self.tiny,
            res: self.raster.res,
            input_points: self.input_points,
            fusion: self.fusion,
            height_rescale: self.height_rescale,
            raster_extent: self.raster.extent,
            raster_mode: self.raster.mode,
            optimizer: self.optimizer,
        }
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let pairs = [
            ("seed", self.seed.to_string()),
            ("model", self.model.to_string()),
            ("min_points", self.min_points.to_string()),
            ("filter_stage", self.filter_stage.name().to_string()),
            ("res", self.raster.res.to_string()),
            ("extent", self.raster.extent.to_string()),
            ("raster_mode", self.raster.mode.to_string()),
            ("cell_size", self.matching.cell_size.to_string()),
            ("include_dead", self.matching.include_dead.to_string()),
            ("top_k", self.top_k.to_string()),
            ("post_x", self.frame.post_x.to_string()),
            ("post_y", self.frame.post_y.to_string()),
            ("per_class", self.synth.per_class.to_string()),
            ("points", points_to_string(&self.synth.points)),
            ("spacing", self.synth.spacing.to_string()),
            ("position_noise", self.synth.position_noise.to_string()),
            ("collide", self.synth.collide.to_string()),
            ("synth_post_x", self.synth.frame.post_x.to_string()),
            ("synth_post_y", self.synth.frame.post_y.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("resample", self.resample.to_string()),
            ("tiny", self.tiny.to_string()),
            ("input_points", auto(&self.input_points)),
            ("fusion", auto(&self.fusion)),
            ("height_rescale", auto(&self.height_rescale)),
            ("pgm", self.pgm.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_values_round_trip() {
        let mut c = RunConfig::default();
        for pair in [
            "seed=9",
            "model=baselinepp",
            "points=10..20",
            "fusion=channels",
            "lr=0.001",
        ] {
            c.apply_pair(pair).unwrap();
        }
        let mut back = RunConfig::default();
        for (k, v) in c.to_key_values() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(c.synth.points, PointCount::Uniform(10, 20));
    }

    #[test]
    fn unknown_and_malformed_values_are_config_errors() {
        let mut c = RunConfig::default();
        let e = c.apply_pair("colour=red").unwrap_err();
        assert!(e.detail.contains("unknown config key `colour`"));
        assert!(c.apply_pair("seed=-1").is_err());
        assert!(c.apply_pair("novalue").is_err());
        assert!(c.apply_pair("model=resnet").is_err());
        c.apply_pair("input_points=auto").unwrap();
        assert_eq!(c.input_points, None);
    }

    #[test]
    fn defaults_follow_the_library() {
        let c = RunConfig::default();
        assert_eq!(
            (c.min_points, c.raster.res, c.matching.cell_size),
            (1000, 128, 1.0)
        );
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.filter_stage, FilterStage::AfterMatch);
    }
}
