//! Tree-species classification from individual LiDAR point clouds.
//!
//! Geometry lives in [`pointcloud`], label matching in [`georef`], the
//! multi-view rasterizer in [`raster`], a small reverse-mode tensor engine in
//! [`tensor`], the classifiers in [`models`] and the training harness in
//! [`train`]. [`synth`] generates separable archetype forests for testing.

pub mod error;
pub mod georef;
pub mod io;
pub mod models;
pub mod pointcloud;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Category, Error, Result};
pub use georef::{CensusRecord, ClassDictionary, MatchOptions, MatchResult, PlotFrame};
pub use pointcloud::{Point3, PointCloud};
pub use raster::{ProjectionSet, Raster, RasterMode, RasterSpec, View};
pub use tensor::Tensor;
pub use train::{LabeledDataset, LabeledItem, TrainConfig};
