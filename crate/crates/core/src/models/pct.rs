//! Point-cloud transformer: per-point embedding, two sample-and-group
//! stages, stacked offset-attention and a pooled classification head.

use super::config::PctConfig;
use super::layers::{Lbr, Linear};
use super::params::{Builder, Mode, Session};
use crate::error::{shape_err, Error, Result};
use crate::pointcloud::{fps_indices, knn_indices, Point3};
use crate::tensor::{Float, Tensor};

/// Farthest-point sampling followed by k-nearest-neighbor grouping; each
/// center's feature is the max over its neighborhood of
/// `LBR(LBR([f_j, f_j - f_c]))`.
#[derive(Debug, Clone)]
pub(crate) struct SampleGroup {
    centers: usize,
    neighbors: usize,
    lbr1: Lbr,
    lbr2: Lbr,
}

impl SampleGroup {
    fn new(
        b: &mut Builder,
        name: &str,
        centers: usize,
        neighbors: usize,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        b.scoped(name, |b| Self {
            centers,
            neighbors,
            lbr1: Lbr::new(b, "lbr1", 2 * in_dim, out_dim),
            lbr2: Lbr::new(b, "lbr2", out_dim, out_dim),
        })
    }

    fn forward<T: Float>(
        &self,
        s: &mut Session<T>,
        coords: &[Vec<Point3>],
        feats: &Tensor<T>,
    ) -> Result<(Vec<Vec<Point3>>, Tensor<T>)> {
        let (m, k) = (self.centers, self.neighbors);
        let mut center_idx = Vec::with_capacity(coords.len());
        let mut group_idx = Vec::with_capacity(coords.len());
        let mut new_coords = Vec::with_capacity(coords.len());
        for pts in coords {
            if pts.len() < m {
                return Err(Error::InvalidCount(format!(
                    "{} points cannot supply {m} centers",
                    pts.len()
                )));
            }
            let idx = fps_indices(pts, m)?;
            let mut groups = Vec::with_capacity(m * k);
            for &c in &idx {
                groups.extend(knn_indices(pts, &pts[c], k)?);
            }
            new_coords.push(idx.iter().map(|&i| pts[i]).collect());
            center_idx.push(idx);
            group_idx.push(groups);
        }
        let (bsz, d) = (coords.len(), feats.shape()[2]);
        let center = feats.gather_rows(&center_idx)?.reshape(&[bsz, m, 1, d])?;
        let neigh = feats.gather_rows(&group_idx)?.reshape(&[bsz, m, k, d])?;
        let rel = neigh.sub(&center)?;
        let h = Tensor::concat(&[neigh, rel], 3)?;
        let h = self.lbr1.forward(s, &h)?;
        let h = self.lbr2.forward(s, &h)?;
        Ok((new_coords, h.max_dim(2, false)?))
    }
}

/// Offset-attention over `[b, n, d]` features.
///
/// `E = Q K^T` is softmax-normalized over keys, then each column is
/// divided by its sum over queries, so every point's aggregated output is a
/// convex combination of values. The layer returns `LBR(f - F_sa) + f`.
#[derive(Debug, Clone)]
pub(crate) struct OffsetAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    trans: Lbr,
}

impl OffsetAttention {
    pub(crate) fn new(b: &mut Builder, name: &str, d: usize) -> Self {
        b.scoped(name, |b| Self {
            q: Linear::new(b, "q", d, d / 4, false),
            k: Linear::new(b, "k", d, d / 4, false),
            v: Linear::new(b, "v", d, d, true),
            trans: Lbr::new(b, "trans", d, d),
        })
    }

    /// Normalized weights `Ā` (`[b, n, n]`, rows sum to 1) and values.
    pub(crate) fn weights<T: Float>(
        &self,
        s: &mut Session<T>,
        f: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if f.rank() != 3 {
            return Err(shape_err!(
                "offset attention expects [b, n, d], got {:?}",
                f.shape()
            ));
        }
        let q = self.q.forward(s, f)?;
        let k = self.k.forward(s, f)?;
        let v = self.v.forward(s, f)?;
        let energy = q.matmul(&k.transpose_last2()?)?;
        // softmax over keys, then L1 over queries, fused in log space:
        // a_ij / sum_i a_ij = softmax_i(e_ij - lse_i). The two-step form
        // loses whole rows of Ā when a column of `a` underflows to zero.
        let m = energy.max_dim(2, true)?.detach();
        let lse = energy.sub(&m)?.exp().sum_dim(2, true)?.ln().add(&m)?;
        let abar = energy.sub(&lse)?.softmax(1)?.transpose_last2()?;
        Ok((abar, v))
    }

    pub(crate) fn forward_traced<T: Float>(
        &self,
        s: &mut Session<T>,
        f: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (abar, v) = self.weights(s, f)?;
        let fsa = abar.matmul(&v)?;
        let out = self.trans.forward(s, &f.sub(&fsa)?)?.add(f)?;
        Ok((out, abar))
    }
}

/// Intermediate results of one forward pass.
#[derive(Debug, Clone)]
pub struct PctTrace<T: Float> {
    /// Per-point embedding, `[b, n, embed_dim]`.
    pub embedded: Tensor<T>,
    /// Centers kept by the last sample-and-group stage.
    pub centers: Vec<Vec<Point3>>,
    /// Neighbor-embedding output, `[b, centers, attention_dim]`.
    pub grouped: Tensor<T>,
    /// Normalized attention weights per layer, `[b, centers, centers]`.
    pub attention: Vec<Tensor<T>>,
    pub logits: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct PctClassifier {
    cfg: PctConfig,
    embed1: Lbr,
    embed2: Lbr,
    stages: Vec<SampleGroup>,
    attention: Vec<OffsetAttention>,
    fuse: Lbr,
    head: Vec<Lbr>,
    out: Linear,
}

impl PctClassifier {
    pub(crate) fn new(b: &mut Builder, cfg: &PctConfig) -> Self {
        let e = cfg.embed_dim;
        let embed1 = Lbr::new(b, "embed1", 3, e);
        let embed2 = Lbr::new(b, "embed2", e, e);
        let mut prev = e;
        let mut stages = Vec::new();
        for (i, (&m, &d)) in cfg.sg_points.iter().zip(&cfg.sg_dims).enumerate() {
            stages.push(SampleGroup::new(
                b,
                &format!("sg{}", i + 1),
                m,
                cfg.sg_neighbors,
                prev,
                d,
            ));
            prev = d;
        }
        let d = cfg.attention_dim;
        let attention = (0..cfg.attention_layers)
            .map(|i| OffsetAttention::new(b, &format!("sa{}", i + 1), d))
            .collect();
        let fuse = Lbr::new(b, "fuse", cfg.attention_layers * d, cfg.fused_dim);
        let mut prev = 2 * cfg.fused_dim;
        let mut head = Vec::new();
        for (i, &h) in cfg.head_dims.iter().enumerate() {
            head.push(Lbr::new(b, &format!("head{}", i + 1), prev, h));
            prev = h;
        }
        let out = Linear::new(b, "out", prev, cfg.num_classes, true);
        Self {
            cfg: cfg.clone(),
            embed1,
            embed2,
            stages,
            attention,
            fuse,
            head,
            out,
        }
    }

    pub fn config(&self) -> &PctConfig {
        &self.cfg
    }

    fn check_input<T: Float>(&self, points: &Tensor<T>) -> Result<()> {
        let n = self.cfg.input_points;
        if points.rank() != 3 || points.shape()[1..] != [n, 3] {
            return Err(shape_err!(
                "point input must be [b, {n}, 3], got {:?}",
                points.shape()
            ));
        }
        Ok(())
    }

    /// Two per-point LBR blocks: `[b, n, 3] -> [b, n, embed_dim]`.
    pub fn point_embed<T: Float>(
        &self,
        s: &mut Session<T>,
        points: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if points.rank() != 3 || points.shape()[2] != 3 {
            return Err(shape_err!(
                "point_embed expects [b, n, 3], got {:?}",
                points.shape()
            ));
        }
        let h = self.embed1.forward(s, points)?;
        self.embed2.forward(s, &h)
    }

    /// All sample-and-group stages.
    pub fn neighbor_embed<T: Float>(
        &self,
        s: &mut Session<T>,
        points: &Tensor<T>,
        feats: &Tensor<T>,
    ) -> Result<(Vec<Vec<Point3>>, Tensor<T>)> {
        let (b, n) = (points.shape()[0], points.shape()[1]);
        let raw = points.data();
        let mut coords: Vec<Vec<Point3>> = (0..b)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let p = &raw[(i * n + j) * 3..][..3];
                        Point3::new(p[0].to_f64(), p[1].to_f64(), p[2].to_f64())
                    })
                    .collect()
            })
            .collect();
        let mut f = feats.clone();
        for stage in &self.stages {
            let (c, g) = stage.forward(s, &coords, &f)?;
            coords = c;
            f = g;
        }
        Ok((coords, f))
    }

    pub fn forward_traced<T: Float>(
        &self,
        s: &mut Session<T>,
        points: &Tensor<T>,
    ) -> Result<PctTrace<T>> {
        self.check_input(points)?;
        let embedded = self.point_embed(s, points)?;
        let (centers, grouped) = self.neighbor_embed(s, points, &embedded)?;
        let mut x = grouped.clone();
        let mut layers = Vec::with_capacity(self.attention.len());
        let mut attention = Vec::with_capacity(self.attention.len());
        for sa in &self.attention {
            let (y, w) = sa.forward_traced(s, &x)?;
            layers.push(y.clone());
            attention.push(w);
            x = y;
        }
        let fused = self.fuse.forward(s, &Tensor::concat(&layers, 2)?)?;
        let pooled = Tensor::concat(&[fused.max_dim(1, false)?, fused.mean_dim(1, false)?], 1)?;
        let mut h = pooled;
        for lbr in &self.head {
            h = lbr.forward(s, &h)?;
            if s.mode() == Mode::Train && self.cfg.dropout > 0.0 {
                let p = self.cfg.dropout;
                h = h.dropout(p, s.rng())?;
            }
        }
        let logits = self.out.forward(s, &h)?;
        Ok(PctTrace {
            embedded,
            centers,
            grouped,
            attention,
            logits,
        })
    }

    /// `[b, input_points, 3] -> [b, classes]` logits.
    pub fn forward<T: Float>(&self, s: &mut Session<T>, points: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(s, points)?.logits)
    }
}
