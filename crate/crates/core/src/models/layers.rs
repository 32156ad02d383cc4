use super::params::{BufferId, Builder, Mode, ParamId, Session};
use crate::error::Result;
use crate::tensor::{BatchNormMode, BatchNormSpec, Conv2dSpec, Float, Tensor};

/// Affine map over the last axis, `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        b.scoped(name, |b| Self {
            w: b.kaiming("weight", &[fan_in, fan_out], fan_in),
            b: bias.then(|| b.uniform("bias", &[fan_out], 1.0 / (fan_in as f64).sqrt())),
        })
    }

    pub(crate) fn forward<T: Float>(&self, s: &mut Session<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(&s.param(self.w)?)?;
        match self.b {
            Some(b) => y.add(&s.param(b)?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    stats: BufferId,
}

impl BatchNorm {
    pub(crate) fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        b.scoped(name, |b| Self {
            gamma: b.constant("gamma", &[channels], 1.0),
            beta: b.constant("beta", &[channels], 0.0),
            stats: b.running_stats("stats", channels),
        })
    }

    /// Normalizes over every axis except `axis`.
    pub(crate) fn forward<T: Float>(
        &self,
        s: &mut Session<T>,
        x: &Tensor<T>,
        axis: usize,
    ) -> Result<Tensor<T>> {
        let gamma = s.param(self.gamma)?;
        let beta = s.param(self.beta)?;
        let mode = match s.mode() {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval,
        };
        x.batch_norm(
            &gamma,
            &beta,
            s.stats(self.stats),
            mode,
            BatchNormSpec::channel_axis(axis),
        )
    }
}

/// Linear (no bias, the normalization absorbs it) -> batch norm over the
/// feature axis -> ReLU.
#[derive(Debug, Clone)]
pub(crate) struct Lbr {
    linear: Linear,
    bn: BatchNorm,
}

impl Lbr {
    pub(crate) fn new(b: &mut Builder, name: &str, fan_in: usize, fan_out: usize) -> Self {
        b.scoped(name, |b| Self {
            linear: Linear::new(b, "linear", fan_in, fan_out, false),
            bn: BatchNorm::new(b, "bn", fan_out),
        })
    }

    pub(crate) fn forward<T: Float>(&self, s: &mut Session<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.linear.forward(s, x)?;
        let axis = y.rank() - 1;
        Ok(self.bn.forward(s, &y, axis)?.relu())
    }
}

/// Square-kernel convolution without bias.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    spec: Conv2dSpec,
}

impl Conv {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        b.scoped(name, |b| Self {
            w: b.kaiming("weight", &[out_ch, in_ch, kernel, kernel], fan_in),
            spec,
        })
    }

    pub(crate) fn forward<T: Float>(&self, s: &mut Session<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&s.param(self.w)?, self.spec)
    }
}
