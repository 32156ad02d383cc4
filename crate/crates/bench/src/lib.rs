//! Fixtures shared by the kernel benchmarks.

use pctrees::models::{Architecture, CnnConfig, Fusion, Mode, Model, PctConfig};
use pctrees::pointcloud::{normalize_unit, resample_fixed};
use pctrees::synth::{default_archetypes, generate_cloud};
use pctrees::train::Preprocessor;
use pctrees::{PointCloud, RasterMode, RasterSpec, Tensor};

/// Unit-ball synthetic trees cycling through the default archetypes, each
/// with exactly `points` points.
pub fn trees(count: usize, points: usize, seed: u64) -> Vec<PointCloud> {
    let archetypes = default_archetypes();
    (0..count)
        .map(|i| {
            let a = &archetypes[i % archetypes.len()];
            let s = seed.wrapping_add(i as u64);
            let cloud = generate_cloud(a, points, s).expect("valid archetype");
            let cloud = resample_fixed(&cloud, points, s).expect("nonempty cloud");
            normalize_unit(&cloud).expect("nondegenerate cloud")
        })
        .collect()
}

/// Deterministic values in (-1, 1) without a random number generator.
pub fn filled(shape: &[usize], phase: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (i as f32 * 0.618 + phase).sin()).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// A model plus a batch already encoded for it.
pub struct Fixture {
    pub model: Model,
    pub input: Tensor<f32>,
}

impl Fixture {
    fn build(arch: Architecture, clouds: &[PointCloud]) -> Self {
        let input_spec = Preprocessor::input_for(&arch, 2.0, RasterMode::Density);
        let prep = Preprocessor::fit(true, input_spec, clouds, 0).expect("fit");
        let encoded = prep.encode(clouds).expect("encode");
        let all: Vec<usize> = (0..clouds.len()).collect();
        Self {
            input: encoded.batch(&all).expect("batch"),
            model: Model::new(arch, 1).expect("valid architecture"),
        }
    }

    /// Tiny transformer over `batch` clouds of 128 points.
    pub fn tiny_pct(batch: usize) -> Self {
        let arch = Architecture::Pct(PctConfig::tiny(3));
        Self::build(arch, &trees(batch, 512, 7))
    }

    /// Quarter-width multi-view CNN over `batch` clouds.
    pub fn cnn(batch: usize, fusion: Fusion, res: usize) -> Self {
        let arch = Architecture::MultiView(CnnConfig::quarter(fusion, res, 3));
        Self::build(arch, &trees(batch, 512, 7))
    }

    /// Eval-mode logits.
    pub fn forward(&mut self) -> Tensor<f32> {
        let (net, s) = self.model.session(Mode::Eval, 0);
        let mut s = s.track_grads(false);
        net.forward(&mut s, &self.input).expect("forward")
    }

    /// One training-mode forward and backward pass; returns the loss.
    pub fn train_step(&mut self, labels: &[usize]) -> f32 {
        let (net, mut s) = self.model.session(Mode::Train, 0);
        let loss = net
            .forward(&mut s, &self.input)
            .and_then(|l| l.cross_entropy(labels))
            .expect("forward");
        loss.backward();
        std::hint::black_box(s.grads());
        loss.item().expect("scalar loss")
    }
}

pub fn raster_spec(res: usize) -> RasterSpec {
    RasterSpec {
        res,
        extent: 2.0,
        mode: RasterMode::Density,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_produce_logits_of_the_right_shape() {
        let mut f = Fixture::tiny_pct(2);
        assert_eq!(f.forward().shape(), &[2, 3]);
        let mut f = Fixture::cnn(2, Fusion::Channels, 16);
        assert_eq!(f.forward().shape(), &[2, 3]);
        assert!(f.train_step(&[0, 1]).is_finite());
        assert_eq!(
            trees(4, 100, 0).iter().map(PointCloud::len).sum::<usize>(),
            400
        );
        assert_eq!(filled(&[2, 3], 0.0).shape(), &[2, 3]);
    }
}
