use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Standard ResNet18 stage widths; the quarter backbone divides each by 4.
pub const RESNET18_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const RESNET18_BLOCKS: [usize; 4] = [2, 2, 2, 2];

/// How the six views of a tree reach the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Each view is its own single-channel image; per-view features are
    /// concatenated before the classifier.
    Separate,
    /// The six views are the channels of one image.
    Channels,
}

impl Fusion {
    pub fn input_channels(self) -> usize {
        match self {
            Fusion::Separate => 1,
            Fusion::Channels => 6,
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Separate => "separate",
            Fusion::Channels => "channels",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Fusion::Separate),
            "channels" => Ok(Fusion::Channels),
            _ => Err(Error::Config(format!(
                "unknown fusion `{s}` (separate|channels)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub input_channels: usize,
    pub fusion: Fusion,
    /// Raster side length in pixels.
    pub res: usize,
    pub num_classes: usize,
}

impl CnnConfig {
    /// Quarter-width ResNet18 backbone.
    pub fn quarter(fusion: Fusion, res: usize, num_classes: usize) -> Self {
        Self {
            stage_widths: RESNET18_WIDTHS.iter().map(|w| w / 4).collect(),
            blocks_per_stage: RESNET18_BLOCKS.to_vec(),
            input_channels: fusion.input_channels(),
            fusion,
            res,
            num_classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        let w = *self.stage_widths.last().unwrap_or(&0);
        match self.fusion {
            Fusion::Separate => 6 * w,
            Fusion::Channels => w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != self.fusion.input_channels() {
            return Err(Error::ConfigMismatch(format!(
                "{} fusion needs {} input channels, got {}",
                self.fusion,
                self.fusion.input_channels(),
                self.input_channels
            )));
        }
        if self.stage_widths.is_empty()
            || self.stage_widths.len() != self.blocks_per_stage.len()
            || self.stage_widths.contains(&0)
            || self.blocks_per_stage.contains(&0)
        {
            return Err(Error::Config(
                "stage widths and block counts must be nonempty, positive and paired".into(),
            ));
        }
        if self.res == 0 {
            return Err(Error::InvalidResolution(0));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PctConfig {
    pub input_points: usize,
    pub embed_dim: usize,
    pub sg_points: Vec<usize>,
    pub sg_neighbors: usize,
    pub sg_dims: Vec<usize>,
    pub attention_layers: usize,
    pub attention_dim: usize,
    pub fused_dim: usize,
    pub head_dims: Vec<usize>,
    pub dropout: f64,
    pub num_classes: usize,
    pub tiny: bool,
}

impl PctConfig {
    pub fn full(num_classes: usize) -> Self {
        Self {
            input_points: 1024,
            embed_dim: 64,
            sg_points: vec![512, 256],
            sg_neighbors: 32,
            sg_dims: vec![128, 256],
            attention_layers: 4,
            attention_dim: 256,
            fused_dim: 1024,
            head_dims: vec![512, 256],
            dropout: 0.5,
            num_classes,
            tiny: false,
        }
    }

    /// Every width quartered and 128 input points.
    pub fn tiny(num_classes: usize) -> Self {
        let full = Self::full(num_classes);
        let q = |v: &[usize]| v.iter().map(|d| d / 4).collect::<Vec<_>>();
        Self {
            input_points: 128,
            embed_dim: full.embed_dim / 4,
            sg_points: vec![64, 32],
            sg_dims: q(&full.sg_dims),
            attention_dim: full.attention_dim / 4,
            fused_dim: full.fused_dim / 4,
            head_dims: q(&full.head_dims),
            tiny: true,
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sg_points.is_empty() || self.sg_points.len() != self.sg_dims.len() {
            return bad("sg_points and sg_dims must be nonempty and equally long".into());
        }
        if self.sg_points.windows(2).any(|w| w[0] <= w[1]) {
            return bad(format!(
                "sg_points must be strictly decreasing, got {:?}",
                self.sg_points
            ));
        }
        if self.input_points < self.sg_points[0] {
            return Err(Error::InvalidCount(format!(
                "{} input points cannot supply {} centers",
                self.input_points, self.sg_points[0]
            )));
        }
        if self.attention_dim != *self.sg_dims.last().unwrap() {
            return bad(format!(
                "attention_dim {} must equal the last sg_dim {}",
                self.attention_dim,
                self.sg_dims.last().unwrap()
            ));
        }
        if !self.attention_dim.is_multiple_of(4) || self.attention_dim == 0 {
            return bad(format!(
                "attention_dim {} must be a positive multiple of 4",
                self.attention_dim
            ));
        }
        let mut available = self.input_points;
        for &p in &self.sg_points {
            if self.sg_neighbors == 0 || self.sg_neighbors > available {
                return Err(Error::InvalidCount(format!(
                    "{} neighbors requested from {available} points",
                    self.sg_neighbors
                )));
            }
            available = p;
        }
        if self.attention_layers == 0
            || self.head_dims.is_empty()
            || self.embed_dim == 0
            || self.fused_dim == 0
        {
            return bad("layer counts and widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    MultiView(CnnConfig),
    Pct(PctConfig),
}

impl Architecture {
    pub fn num_classes(&self) -> usize {
        match self {
            Architecture::MultiView(c) => c.num_classes,
            Architecture::Pct(c) => c.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::MultiView(c) => c.validate(),
            Architecture::Pct(c) => c.validate(),
        }
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut kv: Vec<(&str, String)> = Vec::new();
        match self {
            Architecture::MultiView(c) => {
                kv.push(("arch", "multiview".into()));
                kv.push(("fusion", c.fusion.to_string()));
                kv.push(("input_channels", c.input_channels.to_string()));
                kv.push(("res", c.res.to_string()));
                kv.push(("stage_widths", list(&c.stage_widths)));
                kv.push(("blocks_per_stage", list(&c.blocks_per_stage)));
                kv.push(("num_classes", c.num_classes.to_string()));
            }
            Architecture::Pct(c) => {
                kv.push(("arch", "pct".into()));
                kv.push(("tiny", c.tiny.to_string()));
                kv.push(("input_points", c.input_points.to_string()));
                kv.push(("embed_dim", c.embed_dim.to_string()));
                kv.push(("sg_points", list(&c.sg_points)));
                kv.push(("sg_neighbors", c.sg_neighbors.to_string()));
                kv.push(("sg_dims", list(&c.sg_dims)));
                kv.push(("attention_layers", c.attention_layers.to_string()));
                kv.push(("attention_dim", c.attention_dim.to_string()));
                kv.push(("fused_dim", c.fused_dim.to_string()));
                kv.push(("head_dims", list(&c.head_dims)));
                kv.push(("dropout", c.dropout.to_string()));
                kv.push(("num_classes", c.num_classes.to_string()));
            }
        }
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Parses the block written by [`Architecture::to_key_values`]; keys it
    /// does not know are ignored so callers can store extra metadata.
    pub fn from_key_values(kv: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("model description lacks `{key}`")))
        };
        fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        let num = |key: &str| -> Result<usize> { parse(key, get(key)?) };
        let list = |key: &str| -> Result<Vec<usize>> {
            get(key)?.split(',').map(|p| parse(key, p.trim())).collect()
        };
        let arch = match get("arch")? {
            "multiview" => Architecture::MultiView(CnnConfig {
                stage_widths: list("stage_widths")?,
                blocks_per_stage: list("blocks_per_stage")?,
                input_channels: num("input_channels")?,
                fusion: get("fusion")?.parse()?,
                res: num("res")?,
                num_classes: num("num_classes")?,
            }),
            "pct" => Architecture::Pct(PctConfig {
                input_points: num("input_points")?,
                embed_dim: num("embed_dim")?,
                sg_points: list("sg_points")?,
                sg_neighbors: num("sg_neighbors")?,
                sg_dims: list("sg_dims")?,
                attention_layers: num("attention_layers")?,
                attention_dim: num("attention_dim")?,
                fused_dim: num("fused_dim")?,
                head_dims: list("head_dims")?,
                dropout: parse("dropout", get("dropout")?)?,
                num_classes: num("num_classes")?,
                tiny: parse("tiny", get("tiny")?)?,
            }),
            other => return Err(Error::Config(format!("unknown arch `{other}`"))),
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// The three compared classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Per-cloud normalization, views as separate images.
    Baseline,
    /// Shared height-preserving rescale, views as channels.
    BaselinePlusPlus,
    /// Point-cloud transformer.
    PcTrees,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Baseline,
        ModelKind::BaselinePlusPlus,
        ModelKind::PcTrees,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::BaselinePlusPlus => "baselinepp",
            ModelKind::PcTrees => "pctrees",
        }
    }

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Baseline => "Baseline",
            ModelKind::BaselinePlusPlus => "Baseline++",
            ModelKind::PcTrees => "PCTreeS",
        }
    }

    pub fn default_fusion(self) -> Option<Fusion> {
        match self {
            ModelKind::Baseline => Some(Fusion::Separate),
            ModelKind::BaselinePlusPlus => Some(Fusion::Channels),
            ModelKind::PcTrees => None,
        }
    }

    /// Whether the model sees clouds rescaled by one dataset-wide factor
    /// (height preserving) rather than each normalized on its own.
    pub fn default_height_rescale(self) -> bool {
        !matches!(self, ModelKind::Baseline)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "baselinepp" | "baseline++" => Ok(ModelKind::BaselinePlusPlus),
            "pctrees" => Ok(ModelKind::PcTrees),
            _ => Err(Error::Config(format!(
                "unknown model `{s}` (baseline|baselinepp|pctrees)"
            ))),
        }
    }
}
