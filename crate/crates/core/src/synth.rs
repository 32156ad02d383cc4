//! Parametric synthetic trees with separable crown archetypes, so the
//! learning machinery can be checked without field data.
//!
//! A tree stands at the local origin with `z` up: a vertical trunk from the
//! ground to the crown base plus points on the crown surface, then isotropic
//! Gaussian jitter. [`generate_dataset`] places trees on a planar grid and
//! emits a matching census so the georeferencing path runs end to end.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::georef::{CensusRecord, ClassDictionary, PlotFrame};
use crate::io::{write_census, write_manifest, write_xyz, ManifestEntry};
use crate::pointcloud::{Point3, PointCloud};
use crate::rng::{item_seed, seeded, Rng};
use crate::train::{LabeledDataset, LabeledItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrownShape {
    /// Shallow dome whose apex is the tree top.
    Umbrella,
    /// Surface tapering linearly from the base radius to a point at the top.
    Cone,
    /// Spherical shell touching the tree top.
    Sphere,
    /// Hemisphere on the ground, radius in plan, height in elevation.
    Shrub,
}

impl CrownShape {
    pub fn name(self) -> &'static str {
        match self {
            CrownShape::Umbrella => "umbrella",
            CrownShape::Cone => "cone",
            CrownShape::Sphere => "sphere",
            CrownShape::Shrub => "shrub",
        }
    }
}

impl std::str::FromStr for CrownShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "umbrella" => Ok(CrownShape::Umbrella),
            "cone" => Ok(CrownShape::Cone),
            "sphere" => Ok(CrownShape::Sphere),
            "shrub" => Ok(CrownShape::Shrub),
            other => Err(Error::Config(format!("unknown crown shape '{other}'"))),
        }
    }
}

/// Umbrella dome depth and cone crown length as fractions of height.
const UMBRELLA_DEPTH: f64 = 0.15;
const CONE_LENGTH: f64 = 0.75;
/// Shrub stems reach this fraction of the height.
const SHRUB_STEM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub name: String,
    pub crown: CrownShape,
    /// `(min, max)` total height in meters.
    pub height_range: (f64, f64),
    /// `(min, max)` crown radius in meters.
    pub crown_radius_range: (f64, f64),
    /// Share of points on the trunk.
    pub trunk_fraction: f64,
    pub jitter_sigma: f64,
}

impl Archetype {
    pub fn validate(&self) -> Result<()> {
        let ordered =
            |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !ordered(self.height_range) || !ordered(self.crown_radius_range) {
            return Err(Error::Config(format!(
                "archetype {}: ranges must be positive and ordered",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.trunk_fraction) {
            return Err(Error::Config(format!(
                "archetype {}: trunk fraction outside [0, 1]",
                self.name
            )));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "archetype {}: jitter must be non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

/// Umbrella, shrub and cone with disjoint height ranges.
pub fn default_archetypes() -> Vec<Archetype> {
    vec![
        Archetype {
            name: "umbrella".into(),
            crown: CrownShape::Umbrella,
            height_range: (5.0, 7.0),
            crown_radius_range: (3.0, 4.5),
            trunk_fraction: 0.15,
            jitter_sigma: 0.05,
        },
        Archetype {
            name: "shrub".into(),
            crown: CrownShape::Shrub,
            height_range: (1.0, 2.5),
            crown_radius_range: (1.0, 2.0),
            trunk_fraction: 0.05,
            jitter_sigma: 0.05,
        },
        Archetype {
            name: "cone".into(),
            crown: CrownShape::Cone,
            height_range: (9.0, 12.0),
            crown_radius_range: (1.5, 2.5),
            trunk_fraction: 0.1,
            jitter_sigma: 0.05,
        },
    ]
}

/// A generated tree and the parameters drawn for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTree {
    pub cloud: PointCloud,
    pub height: f64,
    pub crown_radius: f64,
    /// Center of the crown solid (sphere center, dome or cone axis base).
    pub crown_center: Point3,
    /// Points `0..trunk_points` are trunk, the rest crown.
    pub trunk_points: usize,
}

fn unit_vector(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Draws one tree of `n` points.
pub fn generate_tree(a: &Archetype, n: usize, seed: u64, id: &str) -> Result<SynthTree> {
    if n == 0 {
        return Err(Error::InvalidCount(
            "a synthetic tree needs at least 1 point".into(),
        ));
    }
    a.validate()?;
    let mut rng = seeded(seed);
    let draw = |rng: &mut Rng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    };
    let h = draw(&mut rng, a.height_range);
    let r = draw(&mut rng, a.crown_radius_range);
    let tau = std::f64::consts::TAU;

    let (trunk_top, crown_center) = match a.crown {
        CrownShape::Umbrella => (
            h * (1.0 - UMBRELLA_DEPTH),
            Point3::new(0.0, 0.0, h * (1.0 - UMBRELLA_DEPTH)),
        ),
        CrownShape::Cone => (
            h * (1.0 - CONE_LENGTH),
            Point3::new(0.0, 0.0, h * (1.0 - CONE_LENGTH)),
        ),
        CrownShape::Sphere => ((h - 2.0 * r).max(0.0), Point3::new(0.0, 0.0, h - r)),
        CrownShape::Shrub => (h * SHRUB_STEM, Point3::new(0.0, 0.0, 0.0)),
    };
    let trunk_points = ((n as f64) * a.trunk_fraction).round() as usize;
    let mut points = Vec::with_capacity(n);
    for _ in 0..trunk_points {
        points.push(Point3::new(0.0, 0.0, rng.random_range(0.0..=trunk_top)));
    }
    for _ in trunk_points..n {
        let p = match a.crown {
            CrownShape::Umbrella => {
                // area-uniform in plan, dome height falls off quadratically
                let rho = r * rng.random::<f64>().sqrt();
                let phi = tau * rng.random::<f64>();
                let z = h - UMBRELLA_DEPTH * h * (rho / r).powi(2);
                Point3::new(rho * phi.cos(), rho * phi.sin(), z)
            }
            CrownShape::Cone => {
                // lateral area grows linearly with depth below the apex
                let len = CONE_LENGTH * h;
                let depth = len * rng.random::<f64>().sqrt();
                let rho = r * depth / len;
                let phi = tau * rng.random::<f64>();
                Point3::new(rho * phi.cos(), rho * phi.sin(), h - depth)
            }
            CrownShape::Sphere => {
                let u = unit_vector(&mut rng);
                Point3::new(
                    crown_center.x + r * u[0],
                    crown_center.y + r * u[1],
                    crown_center.z + r * u[2],
                )
            }
            CrownShape::Shrub => {
                let u = unit_vector(&mut rng);
                Point3::new(r * u[0], r * u[1], h * u[2].abs())
            }
        };
        points.push(p);
    }
    if a.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, a.jitter_sigma).expect("validated sigma");
        for p in &mut points {
            p.x += noise.sample(&mut rng);
            p.y += noise.sample(&mut rng);
            p.z += noise.sample(&mut rng);
        }
    }
    Ok(SynthTree {
        cloud: PointCloud::new(id, points)?.with_height(h),
        height: h,
        crown_radius: r,
        crown_center,
        trunk_points,
    })
}

/// One tree as a point cloud; deterministic per seed.
pub fn generate_cloud(a: &Archetype, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(generate_tree(a, n, seed, &format!("{}_{seed}", a.name))?.cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointCount {
    Fixed(usize),
    /// Uniform on the inclusive range.
    Uniform(usize, usize),
}

impl Default for PointCount {
    fn default() -> Self {
        PointCount::Uniform(800, 3000)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub per_class: usize,
    pub points: PointCount,
    /// Grid spacing between stems, meters.
    pub spacing: f64,
    /// Largest distance of a cloud or stem from its grid node, meters.
    pub position_noise: f64,
    /// Moves the second tree into the first tree's cell, creating one
    /// ambiguous cell for the matcher.
    pub collide: bool,
    pub frame: PlotFrame,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            per_class: 100,
            points: PointCount::default(),
            spacing: 10.0,
            position_noise: 0.3,
            collide: false,
            frame: PlotFrame {
                post_x: 500_000.0,
                post_y: 9_000_000.0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Items in archetype order, `per_class` each.
    pub dataset: LabeledDataset,
    /// One live stem per tree, tagged `T00000`, `T00001`, ...
    pub census: Vec<CensusRecord>,
    pub frame: PlotFrame,
}

/// Balanced labeled set, class index = archetype order. Cloud `i` uses the
/// seed `seed ^ i`, so any item can be regenerated on its own.
pub fn generate_dataset(
    archetypes: &[Archetype],
    opts: &DatasetOptions,
    seed: u64,
) -> Result<SynthDataset> {
    if archetypes.is_empty() {
        return Err(Error::InvalidCount(
            "at least one archetype is required".into(),
        ));
    }
    if opts.per_class == 0 {
        return Err(Error::InvalidCount("per_class must be at least 1".into()));
    }
    match opts.points {
        PointCount::Fixed(0) => {
            return Err(Error::InvalidCount("point count must be at least 1".into()))
        }
        PointCount::Uniform(lo, hi) if lo == 0 || lo > hi => {
            return Err(Error::InvalidCount(format!(
                "point range [{lo}, {hi}] is empty or starts at 0"
            )))
        }
        _ => {}
    }
    // noise must keep each location strictly inside its 1 m rounding cell
    if !(opts.spacing >= 1.0 && opts.position_noise >= 0.0 && opts.position_noise < 0.5) {
        return Err(Error::Config(
            "spacing must be >= 1 m and position noise < 0.5 m".into(),
        ));
    }
    let total = archetypes.len() * opts.per_class;
    let cols = (total as f64).sqrt().ceil() as usize;
    let mut items = Vec::with_capacity(total);
    let mut census = Vec::with_capacity(total);
    for i in 0..total {
        let class = i / opts.per_class;
        let a = &archetypes[class];
        let s = item_seed(seed, i);
        let mut rng = seeded(s ^ 0x005E_ED0F_7EE5);
        let n = match opts.points {
            PointCount::Fixed(n) => n,
            PointCount::Uniform(lo, hi) => rng.random_range(lo..=hi),
        };
        let id = format!("tree_{i:05}");
        let tree = generate_tree(a, n, s, &id)?;

        let node = if opts.collide && i == 1 { 0 } else { i };
        // nodes sit half a spacing inside the plot so offsets stay >= 0
        let (east, north) = (
            ((node % cols) as f64 + 0.5) * opts.spacing,
            ((node / cols) as f64 + 0.5) * opts.spacing,
        );
        let mut offset = || {
            if opts.position_noise > 0.0 {
                rng.random_range(-opts.position_noise..opts.position_noise)
            } else {
                0.0
            }
        };
        let (cx, cy) = (east + offset(), north + offset());
        let (sx, sy) = (east + offset(), north + offset());
        let cloud = tree
            .cloud
            .with_location(opts.frame.post_x + cx, opts.frame.post_y + cy);
        items.push(LabeledItem {
            cloud,
            label: class,
        });
        census.push(CensusRecord {
            tag: format!("T{i:05}"),
            species: a.name.clone(),
            east_offset: sx,
            north_offset: sy,
            dbh: Some((tree.height * 2.5 * 10.0).round() / 10.0),
            alive: true,
        });
    }
    let dictionary = ClassDictionary::closed(archetypes.iter().map(|a| a.name.clone()).collect());
    Ok(SynthDataset {
        dataset: LabeledDataset::new(items, dictionary)?,
        census,
        frame: opts.frame,
    })
}

/// Clouds file name inside the output directory.
pub const CLOUD_DIR: &str = "clouds";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CENSUS_FILE: &str = "census.csv";

/// Writes `clouds/<id>.xyz`, `manifest.csv` and `census.csv` under `dir`.
pub fn write_dataset(dir: &Path, synth: &SynthDataset) -> Result<()> {
    let mut entries = Vec::with_capacity(synth.dataset.len());
    for item in synth.dataset.items() {
        let c = &item.cloud;
        let rel = format!("{CLOUD_DIR}/{}.xyz", c.id);
        write_xyz(&dir.join(&rel), c)?;
        entries.push(ManifestEntry {
            id: c.id.clone(),
            path: rel,
            utm_x: c.location.map(|l| l[0]),
            utm_y: c.location.map(|l| l[1]),
            height: c.height,
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    write_census(&dir.join(CENSUS_FILE), &synth.census)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::georef::{match_by_rounding, MatchOptions};
    use crate::io::{load_manifest_clouds, read_census};
    use proptest::prelude::*;

    fn sphere(jitter: f64) -> Archetype {
        Archetype {
            name: "ball".into(),
            crown: CrownShape::Sphere,
            height_range: (8.0, 10.0),
            crown_radius_range: (2.0, 3.0),
            trunk_fraction: 0.2,
            jitter_sigma: jitter,
        }
    }

    #[test]
    fn noiseless_sphere_crown_lies_on_the_shell() {
        let t = generate_tree(&sphere(0.0), 500, 11, "s").unwrap();
        assert_eq!(t.trunk_points, 100);
        for p in &t.cloud.points[t.trunk_points..] {
            let d = p.dist2(&t.crown_center).sqrt();
            assert!(
                (d - t.crown_radius).abs() < 1e-9,
                "{d} vs {}",
                t.crown_radius
            );
        }
        for p in &t.cloud.points[..t.trunk_points] {
            assert_eq!((p.x, p.y), (0.0, 0.0));
            assert!(p.z >= 0.0 && p.z <= t.height - 2.0 * t.crown_radius);
        }
    }

    #[test]
    fn umbrella_top_is_the_sampled_height() {
        let a = &default_archetypes()[0];
        let t = generate_tree(a, 2000, 4, "u").unwrap();
        let zmax = t.cloud.points.iter().map(|p| p.z).fold(f64::MIN, f64::max);
        // the dome apex is sampled densely; jitter adds a few sigma at most
        assert!(
            (zmax - t.height).abs() < 5.0 * a.jitter_sigma,
            "{zmax} vs {}",
            t.height
        );
        assert!(t.height >= a.height_range.0 && t.height <= a.height_range.1);
    }

    #[test]
    fn cone_and_shrub_respect_their_envelopes() {
        let arch = default_archetypes();
        let mut cone = arch[2].clone();
        cone.jitter_sigma = 0.0;
        let t = generate_tree(&cone, 1000, 9, "c").unwrap();
        let len = CONE_LENGTH * t.height;
        for p in &t.cloud.points[t.trunk_points..] {
            let rho = (p.x * p.x + p.y * p.y).sqrt();
            let expect = t.crown_radius * (t.height - p.z) / len;
            assert!((rho - expect).abs() < 1e-9);
        }
        let mut shrub = arch[1].clone();
        shrub.jitter_sigma = 0.0;
        let t = generate_tree(&shrub, 1000, 9, "s").unwrap();
        for p in &t.cloud.points[t.trunk_points..] {
            let e = (p.x / t.crown_radius).powi(2)
                + (p.y / t.crown_radius).powi(2)
                + (p.z / t.height).powi(2);
            assert!((e - 1.0).abs() < 1e-9 && p.z >= 0.0);
        }
    }

    #[test]
    fn zero_points_rejected() {
        assert!(matches!(
            generate_cloud(&sphere(0.1), 0, 1),
            Err(Error::InvalidCount(_))
        ));
    }

    #[test]
    fn invalid_archetypes_rejected() {
        let mut a = sphere(0.1);
        a.height_range = (5.0, 2.0);
        assert!(a.validate().is_err());
        let mut a = sphere(0.1);
        a.trunk_fraction = 1.5;
        assert!(a.validate().is_err());
        let mut a = sphere(0.1);
        a.crown_radius_range = (0.0, 1.0);
        assert!(generate_cloud(&a, 10, 0).is_err());
    }

    #[test]
    fn balanced_dataset_with_unique_cells() {
        let opts = DatasetOptions {
            per_class: 100,
            points: PointCount::Fixed(20),
            ..Default::default()
        };
        let s = generate_dataset(&default_archetypes(), &opts, 3).unwrap();
        assert_eq!(s.dataset.len(), 300);
        assert_eq!(s.dataset.class_counts(), vec![100, 100, 100]);
        assert!(!s.dataset.dictionary().is_open());
        let clouds: Vec<PointCloud> = s.dataset.items().iter().map(|i| i.cloud.clone()).collect();
        let m = match_by_rounding(&clouds, &s.census, &s.frame, &MatchOptions::default()).unwrap();
        assert_eq!(m.match_rate, 1.0);
        assert_eq!(m.ambiguous_cells, 0);
        for (cloud, tag) in &m.pairs {
            assert_eq!(cloud["tree_".len()..], tag[1..]);
        }
    }

    #[test]
    fn collision_creates_one_ambiguous_cell() {
        let opts = DatasetOptions {
            per_class: 5,
            points: PointCount::Fixed(10),
            collide: true,
            ..Default::default()
        };
        let s = generate_dataset(&default_archetypes(), &opts, 3).unwrap();
        let clouds: Vec<PointCloud> = s.dataset.items().iter().map(|i| i.cloud.clone()).collect();
        let m = match_by_rounding(&clouds, &s.census, &s.frame, &MatchOptions::default()).unwrap();
        assert_eq!(m.ambiguous_cells, 1);
        assert_eq!(m.pairs.len(), 13);
    }

    #[test]
    fn point_counts_cover_both_sides_of_the_filter() {
        let opts = DatasetOptions {
            per_class: 20,
            ..Default::default()
        };
        let s = generate_dataset(&default_archetypes(), &opts, 5).unwrap();
        let n: Vec<usize> = s.dataset.items().iter().map(|i| i.cloud.len()).collect();
        assert!(n.iter().all(|&k| (800..=3000).contains(&k)));
        assert!(n.iter().any(|&k| k <= 1000) && n.iter().any(|&k| k > 1000));
    }

    #[test]
    fn disjoint_heights_separate_class_means() {
        let opts = DatasetOptions {
            per_class: 30,
            points: PointCount::Fixed(50),
            ..Default::default()
        };
        let s = generate_dataset(&default_archetypes(), &opts, 8).unwrap();
        let mut sums = [0.0; 3];
        for item in s.dataset.items() {
            sums[item.label] += item.cloud.height.unwrap();
        }
        let means: Vec<f64> = sums.iter().map(|s| s / 30.0).collect();
        // shrub < umbrella < cone
        assert!(means[1] < means[0] && means[0] < means[2]);
    }

    #[test]
    fn files_round_trip_through_the_readers() {
        let dir = tempfile::tempdir().unwrap();
        let opts = DatasetOptions {
            per_class: 2,
            points: PointCount::Fixed(30),
            ..Default::default()
        };
        let s = generate_dataset(&default_archetypes(), &opts, 1).unwrap();
        write_dataset(dir.path(), &s).unwrap();
        let clouds = load_manifest_clouds(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(clouds.len(), 6);
        for (c, item) in clouds.iter().zip(s.dataset.items()) {
            assert_eq!(c.id, item.cloud.id);
            assert_eq!(c.len(), 30);
            let [x, y] = c.location.unwrap();
            let [ex, ey] = item.cloud.location.unwrap();
            assert!((x - ex).abs() < 1e-6 && (y - ey).abs() < 1e-6);
        }
        assert_eq!(
            read_census(&dir.path().join(CENSUS_FILE)).unwrap(),
            s.census
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn generation_is_bit_exact_per_seed(seed in any::<u64>(), per_class in 1usize..4) {
            let opts = DatasetOptions { per_class, points: PointCount::Uniform(5, 40), ..Default::default() };
            let a = generate_dataset(&default_archetypes(), &opts, seed).unwrap();
            let b = generate_dataset(&default_archetypes(), &opts, seed).unwrap();
            prop_assert_eq!(a.dataset.items(), b.dataset.items());
            prop_assert_eq!(a.census, b.census);
        }

        #[test]
        fn items_regenerate_independently(seed in any::<u64>(), i in 0usize..6) {
            let opts = DatasetOptions { per_class: 2, points: PointCount::Fixed(25), ..Default::default() };
            let arch = default_archetypes();
            let s = generate_dataset(&arch, &opts, seed).unwrap();
            let alone = generate_tree(&arch[i / 2], 25, item_seed(seed, i), "x").unwrap();
            prop_assert_eq!(&s.dataset.items()[i].cloud.points, &alone.cloud.points);
        }
    }
}
