//! The three classifiers: a multi-view CNN with the six rasters as separate
//! images, the same backbone with the rasters as channels, and a
//! point-cloud transformer.
//!
//! A [`Model`] owns an architecture, its layer graph and the parameter and
//! buffer stores. Forward passes run inside a [`Session`], which borrows
//! the stores and decides whether parameters become gradient leaves:
//!
//! ```
//! use pctrees::models::{Architecture, Mode, Model, PctConfig};
//! use pctrees::Tensor;
//!
//! let mut model = Model::new(Architecture::Pct(PctConfig::tiny(3)), 7).unwrap();
//! let x = Tensor::new(&[2, 128, 3], (0..768).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
//! let (net, mut session) = model.session(Mode::Eval, 0);
//! let logits = net.forward(&mut session, &x).unwrap();
//! assert_eq!(logits.shape(), &[2, 3]);
//! ```

mod config;
mod layers;
mod params;
mod pct;
mod resnet;

use std::path::{Path, PathBuf};

pub use config::{
    Architecture, CnnConfig, Fusion, ModelKind, PctConfig, RESNET18_BLOCKS, RESNET18_WIDTHS,
};
pub use params::{BufferId, BufferStore, Mode, ParamId, ParamStore, Session};
pub use pct::{PctClassifier, PctTrace};
pub use resnet::MultiViewCnn;

use crate::error::{Error, Result};
use crate::io::{read_key_values, write_key_values};
use crate::tensor::{read_checkpoint, write_checkpoint, Float, Tensor};
use layers::Lbr;
use params::Builder;
use pct::OffsetAttention;

pub const WEIGHTS_FILE: &str = "weights.pctw";
pub const DESCRIPTION_FILE: &str = "model.txt";

#[derive(Debug, Clone)]
pub enum Net {
    MultiView(MultiViewCnn),
    Pct(PctClassifier),
}

impl Net {
    /// Logits `[n, classes]`; the input is `[n, 6, res, res]` views or
    /// `[n, points, 3]` coordinates depending on the network.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Net::MultiView(m) => m.forward(s, input),
            Net::Pct(m) => m.forward(s, input),
        }
    }

    pub fn as_pct(&self) -> Option<&PctClassifier> {
        match self {
            Net::Pct(m) => Some(m),
            Net::MultiView(_) => None,
        }
    }
}

/// Architecture, layer graph and parameters of one classifier.
#[derive(Debug, Clone)]
pub struct Model {
    arch: Architecture,
    net: Net,
    pub params: ParamStore<f32>,
    pub buffers: BufferStore<f32>,
}

impl Model {
    /// Builds the network with seeded Kaiming-uniform weights.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut b = Builder::new(seed);
        let net = match &arch {
            Architecture::MultiView(c) => Net::MultiView(MultiViewCnn::new(&mut b, c)),
            Architecture::Pct(c) => Net::Pct(PctClassifier::new(&mut b, c)),
        };
        Ok(Self {
            arch,
            net,
            params: b.params,
            buffers: b.buffers,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    /// Splits the model into its graph and a session over its own stores.
    pub fn session(&mut self, mode: Mode, seed: u64) -> (&Net, Session<'_, f32>) {
        (
            &self.net,
            Session::new(&self.params, &mut self.buffers, mode, seed),
        )
    }

    /// Writes `weights.pctw` and `model.txt` into `dir`. `extra` pairs are
    /// appended to the description after the architecture keys.
    pub fn save(&self, dir: &Path, extra: &[(String, String)]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut arrays = self.params.to_arrays();
        arrays.extend(self.buffers.to_arrays());
        write_checkpoint(&dir.join(WEIGHTS_FILE), &arrays)?;
        let mut kv = self.arch.to_key_values();
        kv.extend(extra.iter().cloned());
        write_key_values(&dir.join(DESCRIPTION_FILE), &kv)
    }

    /// Loads a model saved by [`Model::save`], returning the full
    /// description block alongside it.
    pub fn load(dir: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let desc: PathBuf = dir.join(DESCRIPTION_FILE);
        let kv = read_key_values(&desc)?;
        let arch = Architecture::from_key_values(&kv)?;
        let mut model = Model::new(arch, 0)?;
        let arrays = read_checkpoint(&dir.join(WEIGHTS_FILE))?;
        params::load_arrays(&mut model.params, &mut model.buffers, arrays)?;
        Ok((model, kv))
    }
}

/// Scalar count of a CNN backbone (stem through the last stage) with the
/// given widths.
pub fn backbone_param_count(input_channels: usize, widths: &[usize], blocks: &[usize]) -> usize {
    let mut b = Builder::new(0);
    resnet::ResNet::new(&mut b, "backbone", input_channels, widths, blocks);
    b.params.num_scalars()
}

#[derive(Debug, Clone)]
enum BlockKind {
    Lbr(Lbr),
    Attention(OffsetAttention),
}

/// A single building block with its own parameters, for verifying layers
/// in isolation.
#[derive(Debug, Clone)]
pub struct Block {
    kind: BlockKind,
    pub params: ParamStore<f32>,
    pub buffers: BufferStore<f32>,
}

impl Block {
    pub fn lbr(fan_in: usize, fan_out: usize, seed: u64) -> Self {
        let mut b = Builder::new(seed);
        let layer = Lbr::new(&mut b, "lbr", fan_in, fan_out);
        Self {
            kind: BlockKind::Lbr(layer),
            params: b.params,
            buffers: b.buffers,
        }
    }

    /// Offset-attention over width `d` (a multiple of 4).
    pub fn offset_attention(d: usize, seed: u64) -> Result<Self> {
        if d == 0 || !d.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "attention width {d} must be a positive multiple of 4"
            )));
        }
        let mut b = Builder::new(seed);
        let layer = OffsetAttention::new(&mut b, "sa", d);
        Ok(Self {
            kind: BlockKind::Attention(layer),
            params: b.params,
            buffers: b.buffers,
        })
    }

    pub fn forward<T: Float>(&self, s: &mut Session<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.kind {
            BlockKind::Lbr(l) => l.forward(s, x),
            BlockKind::Attention(a) => Ok(a.forward_traced(s, x)?.0),
        }
    }

    /// Normalized attention weights `[b, n, n]`; `None` for non-attention
    /// blocks.
    pub fn attention_weights<T: Float>(
        &self,
        s: &mut Session<T>,
        x: &Tensor<T>,
    ) -> Result<Option<Tensor<T>>> {
        match &self.kind {
            BlockKind::Attention(a) => Ok(Some(a.weights(s, x)?.0)),
            BlockKind::Lbr(_) => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests;
