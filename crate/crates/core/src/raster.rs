//! Six-view orthogonal rasterization of a point cloud.
//!
//! All views share one world-unit window so that the same physical size
//! maps to the same pixel footprint across a dataset. Horizontal axes span
//! `[-extent/2, extent/2]`; for side views the vertical axis spans
//! `[0, extent]` because clouds are grounded at `z = 0`.
//!
//! Orientation table (image column axis `u`, image row axis `v`; row 0 is
//! the largest `v`), as seen by a viewer standing on the named side:
//!
//! | view   | u   | v |
//! |--------|-----|---|
//! | top    | x   | y |
//! | bottom | -x  | y |
//! | front  | -x  | z |
//! | back   | x   | z |
//! | left   | -y  | z |
//! | right  | y   | z |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};

pub const NUM_VIEWS: usize = 6;
pub const PCTR_MAGIC: &[u8; 4] = b"PCTR";
pub const PCTR_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Top,
    Bottom,
    Front,
    Back,
    Left,
    Right,
}

impl View {
    pub const ALL: [View; NUM_VIEWS] = [
        View::Top,
        View::Bottom,
        View::Front,
        View::Back,
        View::Left,
        View::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            View::Top => "top",
            View::Bottom => "bottom",
            View::Front => "front",
            View::Back => "back",
            View::Left => "left",
            View::Right => "right",
        }
    }

    fn is_vertical(self) -> bool {
        matches!(self, View::Top | View::Bottom)
    }

    /// In-plane coordinates `(u, v)` of a point for this view.
    pub fn plane(self, p: &Point3) -> (f64, f64) {
        match self {
            View::Top => (p.x, p.y),
            View::Bottom => (-p.x, p.y),
            View::Front => (-p.x, p.z),
            View::Back => (p.x, p.z),
            View::Left => (-p.y, p.z),
            View::Right => (p.y, p.z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RasterMode {
    /// 1 where at least one point lands.
    Occupancy,
    /// Point count divided by the raster's maximum count.
    #[default]
    Density,
}

impl RasterMode {
    pub fn name(self) -> &'static str {
        match self {
            RasterMode::Occupancy => "occupancy",
            RasterMode::Density => "density",
        }
    }

    fn code(self) -> u32 {
        match self {
            RasterMode::Occupancy => 0,
            RasterMode::Density => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(RasterMode::Occupancy),
            1 => Some(RasterMode::Density),
            _ => None,
        }
    }
}

impl std::fmt::Display for RasterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RasterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupancy" => Ok(RasterMode::Occupancy),
            "density" => Ok(RasterMode::Density),
            other => Err(Error::Config(format!("unknown raster mode '{other}'"))),
        }
    }
}

/// Row-major single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Raster {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Counter-clockwise quarter turn of the image.
    pub fn rot90(&self) -> Raster {
        let (h, w) = (self.height, self.width);
        let mut values = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                // new[w-1-c][r] = old[r][c]
                values[(w - 1 - c) * h + r] = self.values[r * w + c];
            }
        }
        Raster {
            width: h,
            height: w,
            values,
        }
    }

    pub fn mirror_columns(&self) -> Raster {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.width) {
            row.reverse();
        }
        Raster {
            values,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSpec {
    pub res: usize,
    /// Window side length in (normalized) world units.
    pub extent: f64,
    pub mode: RasterMode,
}

impl Default for RasterSpec {
    fn default() -> Self {
        Self {
            res: 128,
            extent: 2.0,
            mode: RasterMode::Density,
        }
    }
}

impl RasterSpec {
    fn validate(&self) -> Result<()> {
        if self.res == 0 {
            return Err(Error::InvalidResolution(self.res));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::InvalidExtent(self.extent));
        }
        Ok(())
    }
}

/// The six views of one cloud, in [`View::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub views: [Raster; NUM_VIEWS],
    /// Points that fell outside the window in any view and were clamped to
    /// the border.
    pub clipped: usize,
}

impl ProjectionSet {
    pub fn view(&self, v: View) -> &Raster {
        &self.views[View::ALL.iter().position(|&x| x == v).unwrap()]
    }

    pub fn res(&self) -> usize {
        self.views[0].width
    }
}

fn pixel(coord: f64, lo: f64, cell: f64, res: usize) -> (usize, bool) {
    let t = ((coord - lo) / cell).floor();
    let outside = coord < lo || coord > lo + cell * res as f64;
    let idx = if t < 0.0 {
        0
    } else if t >= res as f64 {
        res - 1
    } else {
        t as usize
    };
    (idx, outside)
}

fn project_counted(cloud: &PointCloud, view: View, spec: &RasterSpec) -> Result<(Raster, usize)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    spec.validate()?;
    let res = spec.res;
    let cell = spec.extent / res as f64;
    let lo_u = -spec.extent / 2.0;
    let lo_v = if view.is_vertical() { lo_u } else { 0.0 };

    let mut counts = vec![0u32; res * res];
    let mut clipped = 0;
    for p in &cloud.points {
        let (u, v) = view.plane(p);
        let (col, cu) = pixel(u, lo_u, cell, res);
        let (vi, cv) = pixel(v, lo_v, cell, res);
        if cu || cv {
            clipped += 1;
        }
        counts[(res - 1 - vi) * res + col] += 1;
    }
    let values = match spec.mode {
        RasterMode::Occupancy => counts.iter().map(|&c| (c > 0) as u32 as f32).collect(),
        RasterMode::Density => {
            let max = *counts.iter().max().unwrap() as f32;
            counts.iter().map(|&c| c as f32 / max).collect()
        }
    };
    Ok((
        Raster {
            width: res,
            height: res,
            values,
        },
        clipped,
    ))
}

pub fn project(cloud: &PointCloud, view: View, spec: &RasterSpec) -> Result<Raster> {
    project_counted(cloud, view, spec).map(|(r, _)| r)
}

pub fn project6(cloud: &PointCloud, spec: &RasterSpec) -> Result<ProjectionSet> {
    let mut clipped = 0;
    let mut views = Vec::with_capacity(NUM_VIEWS);
    for v in View::ALL {
        let (r, c) = project_counted(cloud, v, spec)?;
        clipped = clipped.max(c);
        views.push(r);
    }
    Ok(ProjectionSet {
        views: views.try_into().expect("six views"),
        clipped,
    })
}

/// The six views as one `6 x res x res` channel-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedViews {
    pub res: usize,
    pub data: Vec<f32>,
}

impl StackedViews {
    pub fn shape(&self) -> [usize; 3] {
        [NUM_VIEWS, self.res, self.res]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.res * self.res;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn split(&self) -> ProjectionSet {
        let views = (0..NUM_VIEWS)
            .map(|c| Raster {
                width: self.res,
                height: self.res,
                values: self.channel(c).to_vec(),
            })
            .collect::<Vec<_>>();
        ProjectionSet {
            views: views.try_into().expect("six views"),
            clipped: 0,
        }
    }
}

pub fn stack_channels(ps: &ProjectionSet) -> StackedViews {
    let res = ps.res();
    let mut data = Vec::with_capacity(NUM_VIEWS * res * res);
    for v in &ps.views {
        data.extend_from_slice(&v.values);
    }
    StackedViews { res, data }
}

/// Binary PGM (P5), 8-bit, `round(255 * v)`.
pub fn write_pgm(raster: &Raster, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(raster.values.len() + 32);
    write!(out, "P5\n{} {}\n255\n", raster.width, raster.height).unwrap();
    out.extend(
        raster
            .values
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw float dump of a projection set.
///
/// Header (24 bytes, little-endian): magic `PCTR`, `u32` view count, `u32`
/// resolution, `u32` mode (0 occupancy, 1 density), `f32` extent, `u32`
/// clipped point count. Payload: views x res x res `f32`, row-major.
pub fn write_pctr(ps: &ProjectionSet, spec: &RasterSpec, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = ps.res() as u32;
    let mut header = Vec::with_capacity(PCTR_HEADER_LEN);
    header.extend_from_slice(PCTR_MAGIC);
    header.extend_from_slice(&(NUM_VIEWS as u32).to_le_bytes());
    header.extend_from_slice(&res.to_le_bytes());
    header.extend_from_slice(&spec.mode.code().to_le_bytes());
    header.extend_from_slice(&(spec.extent as f32).to_le_bytes());
    header.extend_from_slice(&(ps.clipped as u32).to_le_bytes());
    let io = |e| Error::io(path, e);
    w.write_all(&header).map_err(io)?;
    for v in &ps.views {
        for x in &v.values {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_pctr(path: &Path) -> Result<(ProjectionSet, RasterSpec)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < PCTR_HEADER_LEN || &bytes[..4] != PCTR_MAGIC {
        return Err(Error::format(path, "missing PCTR header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let views = word(4) as usize;
    let res = word(8) as usize;
    let mode = RasterMode::from_code(word(12))
        .ok_or_else(|| Error::format(path, "unknown raster mode code"))?;
    let extent = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let clipped = word(20) as usize;
    if views != NUM_VIEWS {
        return Err(Error::format(
            path,
            format!("expected 6 views, found {views}"),
        ));
    }
    let expected = PCTR_HEADER_LEN + views * res * res * 4;
    if bytes.len() != expected || res == 0 {
        return Err(Error::format(
            path,
            format!(
                "payload length {} does not match header ({expected})",
                bytes.len()
            ),
        ));
    }
    let floats: Vec<f32> = bytes[PCTR_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut ps = StackedViews { res, data: floats }.split();
    ps.clipped = clipped;
    Ok((ps, RasterSpec { res, extent, mode }))
}
