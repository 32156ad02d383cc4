//! Turning labeled clouds into network inputs.

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelKind};
use crate::pointcloud::{
    apply_scale, center, normalize_unit, resample_fixed, rescale_global, PointCloud,
};
use crate::raster::{project6, stack_channels, RasterMode, RasterSpec, NUM_VIEWS};
use crate::rng::stream_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Each cloud centered and shrunk into the unit ball on its own.
    Unit,
    /// Centered, then divided by one factor fitted on the training clouds,
    /// so relative heights survive.
    Global { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputSpec {
    /// Six projections per cloud, `[6, res, res]`.
    Views(RasterSpec),
    /// Exactly `count` points per cloud, `[count, 3]`.
    Points { count: usize },
}

/// Normalization plus input encoding, fitted once on the training set and
/// stored with the model so evaluation sees identical inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessor {
    pub normalization: Normalization,
    pub input: InputSpec,
    /// Root of the per-cloud resampling seeds.
    pub seed: u64,
}

/// FNV-1a; ties a cloud's resampling seed to its id rather than its
/// position in a batch.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Encoded inputs `[n, ...item_shape]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub item_shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        let per: usize = self.item_shape.iter().product();
        self.data.len().checked_div(per).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks the listed items into one tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let per: usize = self.item_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.item_shape);
        Tensor::new(&shape, data)
    }
}

impl Preprocessor {
    /// The input encoding an architecture expects.
    pub fn input_for(arch: &Architecture, extent: f64, mode: RasterMode) -> InputSpec {
        match arch {
            Architecture::MultiView(c) => InputSpec::Views(RasterSpec {
                res: c.res,
                extent,
                mode,
            }),
            Architecture::Pct(c) => InputSpec::Points {
                count: c.input_points,
            },
        }
    }

    /// Fits the normalization on `train` clouds.
    pub fn fit(
        height_rescale: bool,
        input: InputSpec,
        train: &[PointCloud],
        seed: u64,
    ) -> Result<Self> {
        let normalization = if height_rescale {
            let centered = train.iter().map(center).collect::<Result<Vec<_>>>()?;
            let (_, scale) = rescale_global(&centered)?;
            Normalization::Global { scale }
        } else {
            Normalization::Unit
        };
        Ok(Self {
            normalization,
            input,
            seed,
        })
    }

    /// Default normalization of each model family.
    pub fn for_model(
        kind: ModelKind,
        input: InputSpec,
        train: &[PointCloud],
        seed: u64,
    ) -> Result<Self> {
        Self::fit(kind.default_height_rescale(), input, train, seed)
    }

    pub fn normalize(&self, cloud: &PointCloud) -> Result<PointCloud> {
        match self.normalization {
            Normalization::Unit => normalize_unit(cloud),
            Normalization::Global { scale } => Ok(apply_scale(&[center(cloud)?], scale).remove(0)),
        }
    }

    pub fn item_shape(&self) -> Vec<usize> {
        match self.input {
            InputSpec::Views(spec) => vec![NUM_VIEWS, spec.res, spec.res],
            InputSpec::Points { count } => vec![count, 3],
        }
    }

    pub fn encode_one(&self, cloud: &PointCloud, out: &mut Vec<f32>) -> Result<()> {
        let c = self.normalize(cloud)?;
        match self.input {
            InputSpec::Views(spec) => {
                out.extend_from_slice(&stack_channels(&project6(&c, &spec)?).data)
            }
            InputSpec::Points { count } => {
                let r = resample_fixed(&c, count, stream_seed(self.seed, id_hash(&c.id)))?;
                out.extend(
                    r.points
                        .iter()
                        .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]),
                );
            }
        }
        Ok(())
    }

    pub fn encode(&self, clouds: &[PointCloud]) -> Result<Encoded> {
        let item_shape = self.item_shape();
        let mut data = Vec::with_capacity(clouds.len() * item_shape.iter().product::<usize>());
        for c in clouds {
            self.encode_one(c, &mut data)?;
        }
        Ok(Encoded { item_shape, data })
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![("resample_seed".to_string(), self.seed.to_string())];
        match self.normalization {
            Normalization::Unit => kv.push(("normalization".into(), "unit".into())),
            Normalization::Global { scale } => {
                kv.push(("normalization".into(), "global".into()));
                kv.push(("height_scale".into(), format!("{scale:e}")));
            }
        }
        match self.input {
            InputSpec::Views(spec) => {
                kv.push(("raster_extent".into(), spec.extent.to_string()));
                let mode = match spec.mode {
                    RasterMode::Occupancy => "occupancy",
                    RasterMode::Density => "density",
                };
                kv.push(("raster_mode".into(), mode.into()));
            }
            InputSpec::Points { .. } => {}
        }
        kv
    }

    /// Inverse of [`Preprocessor::to_key_values`]; the input size comes from
    /// the architecture.
    pub fn from_key_values(arch: &Architecture, kv: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            kv.iter()
                .rev()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
        };
        let need = |k: &str| {
            get(k).ok_or_else(|| Error::ConfigMismatch(format!("model description lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            need(k)?
                .parse::<f64>()
                .map_err(|_| Error::ConfigMismatch(format!("`{k}` is not a number")))
        };
        let normalization = match need("normalization")? {
            "unit" => Normalization::Unit,
            "global" => Normalization::Global {
                scale: num("height_scale")?,
            },
            other => {
                return Err(Error::ConfigMismatch(format!(
                    "unknown normalization `{other}`"
                )))
            }
        };
        let seed = need("resample_seed")?
            .parse()
            .map_err(|_| Error::ConfigMismatch("`resample_seed` is not an integer".into()))?;
        let input = match arch {
            Architecture::MultiView(_) => {
                let mode = need("raster_mode")?
                    .parse()
                    .map_err(|e: Error| Error::ConfigMismatch(e.to_string()))?;
                Self::input_for(arch, num("raster_extent")?, mode)
            }
            Architecture::Pct(_) => Self::input_for(arch, 0.0, RasterMode::default()),
        };
        Ok(Self {
            normalization,
            input,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CnnConfig, Fusion, PctConfig};
    use crate::pointcloud::Point3;

    fn tree(id: &str, h: f64) -> PointCloud {
        let pts = (0..40)
            .map(|i| {
                let t = i as f64 / 39.0;
                Point3::new(
                    100.0 + (7.0 * t).sin(),
                    50.0 + (5.0 * t).cos(),
                    20.0 + h * t,
                )
            })
            .collect();
        PointCloud::new(id, pts).unwrap()
    }

    #[test]
    fn global_scale_keeps_relative_heights() {
        let train = [tree("a", 4.0), tree("b", 10.0)];
        let p = Preprocessor::fit(true, InputSpec::Points { count: 16 }, &train, 0).unwrap();
        let Normalization::Global { scale } = p.normalization else {
            panic!("expected a global scale")
        };
        assert_eq!(scale, 10.0);
        let top = |c: &PointCloud| c.points.iter().map(|q| q.z).fold(f64::MIN, f64::max);
        assert!((top(&p.normalize(&train[0]).unwrap()) - 0.4).abs() < 1e-12);
        assert!((top(&p.normalize(&train[1]).unwrap()) - 1.0).abs() < 1e-12);
        let u = Preprocessor::fit(false, InputSpec::Points { count: 16 }, &train, 0).unwrap();
        assert_eq!(u.normalization, Normalization::Unit);
    }

    #[test]
    fn point_encoding_ignores_batch_position() {
        let clouds = [tree("a", 4.0), tree("b", 6.0)];
        let p = Preprocessor::fit(true, InputSpec::Points { count: 64 }, &clouds, 9).unwrap();
        let fwd = p.encode(&clouds).unwrap();
        let rev = p.encode(&[clouds[1].clone(), clouds[0].clone()]).unwrap();
        assert_eq!(fwd.item_shape, vec![64, 3]);
        assert_eq!(fwd.len(), 2);
        assert_eq!(fwd.data[..192], rev.data[192..]);
        let b = fwd.batch(&[1, 1, 0]).unwrap();
        assert_eq!(b.shape(), &[3, 64, 3]);
        assert_eq!(b.data()[..192], fwd.data[192..]);
    }

    #[test]
    fn view_encoding_shape_and_range() {
        let arch = Architecture::MultiView(CnnConfig::quarter(Fusion::Separate, 16, 3));
        let input = Preprocessor::input_for(&arch, 2.0, RasterMode::Density);
        let p = Preprocessor::fit(false, input, &[tree("a", 3.0)], 0).unwrap();
        let e = p.encode(&[tree("a", 3.0)]).unwrap();
        assert_eq!(e.item_shape, vec![6, 16, 16]);
        assert!(e.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(e.data.contains(&1.0));
    }

    #[test]
    fn description_round_trip() {
        let clouds = [tree("a", 4.0)];
        for arch in [
            Architecture::MultiView(CnnConfig::quarter(Fusion::Channels, 32, 3)),
            Architecture::Pct(PctConfig::tiny(3)),
        ] {
            for rescale in [false, true] {
                let input = Preprocessor::input_for(&arch, 2.0, RasterMode::Occupancy);
                let p = Preprocessor::fit(rescale, input, &clouds, 12).unwrap();
                let back = Preprocessor::from_key_values(&arch, &p.to_key_values()).unwrap();
                assert_eq!(back, p);
            }
        }
        let arch = Architecture::Pct(PctConfig::tiny(3));
        assert!(Preprocessor::from_key_values(&arch, &[]).is_err());
    }
}
