//! Point-set representation of a single segmented tree and the geometric
//! preprocessing applied before rasterization or embedding.
//!
//! Geometry is kept in `f64`; planar locations in a projected metric frame
//! reach ~10^5 m and would lose sub-meter precision in `f32`. Conversion to
//! single precision happens only when a cloud is turned into a model input.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    /// Lexicographic order on `(x, y, z)`, total over finite values.
    pub fn lex_cmp(&self, other: &Point3) -> Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
    }
}

/// One tree: its LiDAR returns plus optional planar location and height.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub id: String,
    pub points: Vec<Point3>,
    /// Planar `(x, y)` in meters, in the shared matching frame.
    pub location: Option<[f64; 2]>,
    pub height: Option<f64>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty or non-finite point sets.
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        Ok(Self {
            id,
            points,
            location: None,
            height: None,
        })
    }

    pub fn with_location(mut self, x: f64, y: f64) -> Self {
        self.location = Some([x, y]);
        self
    }

    pub fn with_height(mut self, height: f64) -> Self {
        self.height = Some(height);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same id, location and height with a different point set.
    pub fn with_points(&self, points: Vec<Point3>) -> Self {
        Self {
            id: self.id.clone(),
            points,
            location: self.location,
            height: self.height,
        }
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    fn max_abs_coord(&self) -> f64 {
        self.points.iter().map(Point3::max_abs).fold(0.0, f64::max)
    }
}

pub fn centroid(cloud: &PointCloud) -> Result<Point3> {
    cloud.ensure_nonempty()?;
    Ok(mean(&cloud.points))
}

fn mean(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let (sx, sy, sz) = points.iter().fold((0.0, 0.0, 0.0), |(sx, sy, sz), p| {
        (sx + p.x, sy + p.y, sz + p.z)
    });
    Point3::new(sx / n, sy / n, sz / n)
}

/// Moves the horizontal centroid to the origin and the lowest return to
/// `z = 0`, so `z` keeps its meaning as height above ground.
pub fn center(cloud: &PointCloud) -> Result<PointCloud> {
    let c = centroid(cloud)?;
    let zmin = cloud
        .points
        .iter()
        .map(|p| p.z)
        .fold(f64::INFINITY, f64::min);
    let mut points: Vec<Point3> = cloud
        .points
        .iter()
        .map(|p| Point3::new(p.x - c.x, p.y - c.y, p.z - zmin))
        .collect();
    // A second pass removes the residual of the first subtraction so that
    // centering is idempotent to rounding precision.
    let r = mean(&points);
    if r.x != 0.0 || r.y != 0.0 {
        for p in &mut points {
            p.x -= r.x;
            p.y -= r.y;
        }
    }
    Ok(cloud.with_points(points))
}

/// Divides every cloud by one shared factor, the largest absolute coordinate
/// over the whole collection, so relative tree sizes survive normalization.
pub fn rescale_global(clouds: &[PointCloud]) -> Result<(Vec<PointCloud>, f64)> {
    let mut scale: f64 = 0.0;
    for cloud in clouds {
        cloud.ensure_nonempty()?;
        scale = scale.max(cloud.max_abs_coord());
    }
    if scale == 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok((apply_scale(clouds, scale), scale))
}

/// Divides every coordinate by a previously computed global scale.
pub fn apply_scale(clouds: &[PointCloud], scale: f64) -> Vec<PointCloud> {
    clouds
        .iter()
        .map(|c| {
            c.with_points(
                c.points
                    .iter()
                    .map(|p| Point3::new(p.x / scale, p.y / scale, p.z / scale))
                    .collect(),
            )
        })
        .collect()
}

/// Per-cloud alternative to [`rescale_global`]: center, then shrink into the
/// unit ball by the cloud's own largest point norm.
pub fn normalize_unit(cloud: &PointCloud) -> Result<PointCloud> {
    let centered = center(cloud)?;
    let radius = centered.points.iter().map(Point3::norm).fold(0.0, f64::max);
    if radius == 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok(centered.with_points(
        centered
            .points
            .iter()
            .map(|p| Point3::new(p.x / radius, p.y / radius, p.z / radius))
            .collect(),
    ))
}

/// Farthest-point sampling. Returns indices into `points` in selection order.
///
/// The start point is the one farthest from the centroid and every tie is
/// broken toward the lexicographically smallest `(x, y, z)`. Both rules only
/// look at coordinates, so the selected sequence does not depend on the
/// order of `points`. The centroid is accumulated in sorted order for the
/// same reason.
pub fn fps_indices(points: &[Point3], n: usize) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if n == 0 {
        return Err(Error::InvalidCount(
            "fps sample count must be at least 1".into(),
        ));
    }
    if n >= points.len() {
        return Ok((0..points.len()).collect());
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].lex_cmp(&points[b]).then(a.cmp(&b)));
    let sorted: Vec<Point3> = order.iter().map(|&i| points[i]).collect();

    let c = mean(&sorted);
    let mut seed = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in sorted.iter().enumerate() {
        let d = p.dist2(&c);
        if d > best {
            best = d;
            seed = i;
        }
    }

    let mut selected = vec![false; sorted.len()];
    let mut min_d: Vec<f64> = sorted.iter().map(|p| p.dist2(&sorted[seed])).collect();
    let mut out = Vec::with_capacity(n);
    selected[seed] = true;
    out.push(order[seed]);
    while out.len() < n {
        let mut next = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if !selected[i] && d > best {
                best = d;
                next = i;
            }
        }
        selected[next] = true;
        out.push(order[next]);
        let q = sorted[next];
        for (d, p) in min_d.iter_mut().zip(&sorted) {
            let nd = p.dist2(&q);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(out)
}

pub fn fps(cloud: &PointCloud, n: usize) -> Result<PointCloud> {
    let idx = fps_indices(&cloud.points, n)?;
    Ok(cloud.with_points(idx.into_iter().map(|i| cloud.points[i]).collect()))
}

/// Indices of the `k` points nearest to `query`, nearest first; equal
/// distances resolve to the smaller index.
pub fn knn_indices(points: &[Point3], query: &Point3, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidCount("knn requires k >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidCount(format!(
            "knn k = {k} exceeds {} points",
            points.len()
        )));
    }
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.dist2(query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(cand.into_iter().map(|(_, i)| i).collect())
}

pub fn knn(cloud: &PointCloud, query: &Point3, k: usize) -> Result<Vec<usize>> {
    knn_indices(&cloud.points, query, k)
}

/// Keeps clouds with strictly more than `min` points.
pub fn filter_min_points(clouds: &[PointCloud], min: usize) -> Vec<PointCloud> {
    clouds.iter().filter(|c| c.len() > min).cloned().collect()
}

/// Brings a cloud to exactly `n` points: a seeded subset without
/// replacement when it is large enough (original order kept), otherwise all
/// points followed by draws with replacement.
pub fn resample_fixed(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidCount(
            "resample size must be at least 1".into(),
        ));
    }
    cloud.ensure_nonempty()?;
    let mut rng = seeded(seed);
    let len = cloud.len();
    let points = if len >= n {
        let mut idx = index::sample(&mut rng, len, n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| cloud.points[i]).collect()
    } else {
        let mut pts = cloud.points.clone();
        pts.extend((len..n).map(|_| cloud.points[rng.random_range(0..len)]));
        pts
    };
    Ok(cloud.with_points(points))
}
