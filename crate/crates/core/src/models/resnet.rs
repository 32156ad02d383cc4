//! ResNet18-topology backbone and the multi-view classifier built on it.

use super::config::{CnnConfig, Fusion};
use super::layers::{BatchNorm, Conv, Linear};
use super::params::{Builder, Session};
use crate::error::{shape_err, Result};
use crate::tensor::{Conv2dSpec, Float, Pool2dSpec, Tensor};

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    shortcut: Option<(Conv, BatchNorm)>,
}

impl BasicBlock {
    fn new(b: &mut Builder, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        b.scoped(name, |b| Self {
            conv1: Conv::new(b, "conv1", in_ch, out_ch, 3, Conv2dSpec::new(stride, 1)),
            bn1: BatchNorm::new(b, "bn1", out_ch),
            conv2: Conv::new(b, "conv2", out_ch, out_ch, 3, Conv2dSpec::new(1, 1)),
            bn2: BatchNorm::new(b, "bn2", out_ch),
            shortcut: (stride != 1 || in_ch != out_ch).then(|| {
                (
                    Conv::new(b, "down", in_ch, out_ch, 1, Conv2dSpec::new(stride, 0)),
                    BatchNorm::new(b, "down_bn", out_ch),
                )
            }),
        })
    }

    fn forward<T: Float>(&self, s: &mut Session<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(s, x)?;
        let h = self.bn1.forward(s, &h, 1)?.relu();
        let h = self.conv2.forward(s, &h)?;
        let h = self.bn2.forward(s, &h, 1)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let d = conv.forward(s, x)?;
                bn.forward(s, &d, 1)?
            }
            None => x.clone(),
        };
        Ok(h.add(&skip)?.relu())
    }
}

/// 7x7/2 stem, 3x3/2 max pool, stages of basic blocks (stride 2 from the
/// second stage on), global average pooling.
#[derive(Debug, Clone)]
pub(crate) struct ResNet {
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
    in_ch: usize,
}

impl ResNet {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        in_ch: usize,
        widths: &[usize],
        blocks: &[usize],
    ) -> Self {
        b.scoped(name, |b| {
            let stem = Conv::new(b, "stem", in_ch, widths[0], 7, Conv2dSpec::new(2, 3));
            let stem_bn = BatchNorm::new(b, "stem_bn", widths[0]);
            let mut layers = Vec::new();
            let mut prev = widths[0];
            for (stage, (&w, &n)) in widths.iter().zip(blocks).enumerate() {
                for i in 0..n {
                    let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                    layers.push(BasicBlock::new(
                        b,
                        &format!("layer{}.{}", stage + 1, i),
                        prev,
                        w,
                        stride,
                    ));
                    prev = w;
                }
            }
            Self {
                stem,
                stem_bn,
                blocks: layers,
                in_ch,
            }
        })
    }

    /// `[n, c, h, w]` images to `[n, width]` features.
    pub(crate) fn forward<T: Float>(&self, s: &mut Session<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != self.in_ch {
            return Err(shape_err!(
                "backbone expects [n, {}, h, w], got {:?}",
                self.in_ch,
                x.shape()
            ));
        }
        s.count_backbone_images(x.shape()[0]);
        let h = self.stem.forward(s, x)?;
        let mut h = self.stem_bn.forward(s, &h, 1)?.relu();
        h = h.max_pool2d(Pool2dSpec {
            kernel: 3,
            stride: 2,
            padding: 1,
        })?;
        for block in &self.blocks {
            h = block.forward(s, &h)?;
        }
        let (n, c) = (h.shape()[0], h.shape()[1]);
        let hw = h.shape()[2] * h.shape()[3];
        h.reshape(&[n, c, hw])?.mean_dim(2, false)
    }
}

/// Multi-view CNN: six rasters per tree, either as six single-channel
/// images through a shared backbone or as one six-channel image.
#[derive(Debug, Clone)]
pub struct MultiViewCnn {
    cfg: CnnConfig,
    backbone: ResNet,
    classifier: Linear,
}

impl MultiViewCnn {
    pub(crate) fn new(b: &mut Builder, cfg: &CnnConfig) -> Self {
        Self {
            backbone: ResNet::new(
                b,
                "backbone",
                cfg.input_channels,
                &cfg.stage_widths,
                &cfg.blocks_per_stage,
            ),
            classifier: Linear::new(b, "classifier", cfg.feature_dim(), cfg.num_classes, true),
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    /// `[n, 6, res, res]` stacked views to `[n, classes]` logits.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, views: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.cfg.res;
        if views.rank() != 4 || views.shape()[1..] != [6, r, r] {
            return Err(shape_err!(
                "multi-view input must be [n, 6, {r}, {r}], got {:?}",
                views.shape()
            ));
        }
        let n = views.shape()[0];
        let features = match self.cfg.fusion {
            Fusion::Separate => {
                let images = views.reshape(&[6 * n, 1, r, r])?;
                let f = self.backbone.forward(s, &images)?;
                let w = f.shape()[1];
                f.reshape(&[n, 6 * w])?
            }
            Fusion::Channels => self.backbone.forward(s, views)?,
        };
        self.classifier.forward(s, &features)
    }
}
