//! Named parameter storage, deterministic initialization and the per-pass
//! [`Session`] that turns stored values into graph leaves.

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{shape_err, Error, Result};
use crate::rng::{seeded, Rng};
use crate::tensor::{numel, Float, NamedArray, RunningStats, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Trainable arrays in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
}

impl<T: Float> ParamStore<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.values
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::from_f64(Float::to_f64(*x))).collect())
                .collect(),
        }
    }
}

/// Batch-norm running statistics in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferStore<T> {
    names: Vec<String>,
    stats: Vec<RunningStats<T>>,
}

impl<T: Float> BufferStore<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stats(&self, id: BufferId) -> &RunningStats<T> {
        &self.stats[id.0]
    }

    pub fn cast<U: Float>(&self) -> BufferStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(Float::to_f64(*x))).collect();
        BufferStore {
            names: self.names.clone(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    mean: conv(&s.mean),
                    var: conv(&s.var),
                })
                .collect(),
        }
    }
}

impl ParamStore<f32> {
    pub(crate) fn to_arrays(&self) -> Vec<NamedArray> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((name, shape), data)| NamedArray {
                name: name.clone(),
                shape: shape.clone(),
                data: data.clone(),
            })
            .collect()
    }
}

impl BufferStore<f32> {
    pub(crate) fn to_arrays(&self) -> Vec<NamedArray> {
        let mut out = Vec::with_capacity(2 * self.names.len());
        for (name, s) in self.names.iter().zip(&self.stats) {
            for (suffix, data) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                out.push(NamedArray {
                    name: format!("{name}.{suffix}"),
                    shape: vec![data.len()],
                    data: data.clone(),
                });
            }
        }
        out
    }
}

/// Overwrites every parameter and buffer from `arrays`. Names must cover
/// the stores exactly and shapes must agree.
pub(crate) fn load_arrays(
    params: &mut ParamStore<f32>,
    buffers: &mut BufferStore<f32>,
    arrays: Vec<NamedArray>,
) -> Result<()> {
    let mut by_name: HashMap<String, NamedArray> = HashMap::new();
    for a in arrays {
        if by_name.contains_key(&a.name) {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint repeats `{}`",
                a.name
            )));
        }
        by_name.insert(a.name.clone(), a);
    }
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let a = by_name
            .remove(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks `{name}`")))?;
        if a.shape != shape {
            return Err(shape_err!(
                "`{name}`: checkpoint shape {:?}, model expects {:?}",
                a.shape,
                shape
            ));
        }
        Ok(a.data)
    };
    for i in 0..params.len() {
        params.values[i] = take(&params.names[i], &params.shapes[i])?;
    }
    for i in 0..buffers.len() {
        let ch = buffers.stats[i].mean.len();
        let name = &buffers.names[i];
        buffers.stats[i] = RunningStats {
            mean: take(&format!("{name}.running_mean"), &[ch])?,
            var: take(&format!("{name}.running_var"), &[ch])?,
        };
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has unknown entry `{extra}`"
        )));
    }
    Ok(())
}

/// Registers parameters with seeded initial values. Names are the
/// `.`-joined scope path.
pub(crate) struct Builder {
    pub(crate) params: ParamStore<f32>,
    pub(crate) buffers: BufferStore<f32>,
    rng: Rng,
    scope: Vec<String>,
}

impl Builder {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            params: ParamStore::new(),
            buffers: BufferStore::new(),
            rng: seeded(seed),
            scope: Vec::new(),
        }
    }

    pub(crate) fn scoped<R>(
        &mut self,
        name: impl Into<String>,
        f: impl FnOnce(&mut Self) -> R,
    ) -> R {
        self.scope.push(name.into());
        let out = f(self);
        self.scope.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.scope.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, values: Vec<f32>) -> ParamId {
        let full = self.full_name(name);
        debug_assert!(
            !self.params.names.contains(&full),
            "duplicate parameter {full}"
        );
        self.params.names.push(full);
        self.params.shapes.push(shape);
        self.params.values.push(values);
        ParamId(self.params.len() - 1)
    }

    /// Uniform on `[-bound, bound]`.
    pub(crate) fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let values = (0..numel(shape))
            .map(|_| self.rng.random_range(-bound..=bound) as f32)
            .collect();
        self.push(name, shape.to_vec(), values)
    }

    /// Kaiming-uniform for ReLU networks: bound `sqrt(6 / fan_in)`.
    pub(crate) fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        self.uniform(name, shape, (6.0 / fan_in as f64).sqrt())
    }

    pub(crate) fn constant(&mut self, name: &str, shape: &[usize], v: f32) -> ParamId {
        self.push(name, shape.to_vec(), vec![v; numel(shape)])
    }

    pub(crate) fn running_stats(&mut self, name: &str, channels: usize) -> BufferId {
        let full = self.full_name(name);
        self.buffers.names.push(full);
        self.buffers.stats.push(RunningStats::new(channels));
        BufferId(self.buffers.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// State of one forward pass: which parameters became leaves, the mode,
/// the dropout stream and bookkeeping counters.
pub struct Session<'a, T: Float> {
    params: &'a ParamStore<T>,
    buffers: &'a mut BufferStore<T>,
    mode: Mode,
    track_grads: bool,
    leaves: Vec<Option<Tensor<T>>>,
    rng: Rng,
    backbone_images: usize,
}

impl<'a, T: Float> Session<'a, T> {
    /// Gradients are tracked in train mode and not in eval mode; see
    /// [`Session::track_grads`].
    pub fn new(
        params: &'a ParamStore<T>,
        buffers: &'a mut BufferStore<T>,
        mode: Mode,
        seed: u64,
    ) -> Self {
        Self {
            leaves: vec![None; params.len()],
            params,
            buffers,
            mode,
            track_grads: mode == Mode::Train,
            rng: seeded(seed),
            backbone_images: 0,
        }
    }

    pub fn track_grads(mut self, on: bool) -> Self {
        self.track_grads = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub(crate) fn param(&mut self, id: ParamId) -> Result<Tensor<T>> {
        if let Some(t) = &self.leaves[id.0] {
            return Ok(t.clone());
        }
        let shape = self.params.shape(id);
        let data = self.params.value(id).to_vec();
        let t = if self.track_grads {
            Tensor::param(shape, data)?
        } else {
            Tensor::new(shape, data)?
        };
        self.leaves[id.0] = Some(t.clone());
        Ok(t)
    }

    /// Substitutes an externally built tensor for a parameter, e.g. to
    /// differentiate with respect to it in a gradient check.
    pub fn bind(&mut self, id: ParamId, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.params.shape(id) {
            return Err(shape_err!(
                "bind {:?} to parameter of shape {:?}",
                t.shape(),
                self.params.shape(id)
            ));
        }
        self.leaves[id.0] = Some(t);
        Ok(())
    }

    pub(crate) fn stats(&mut self, id: BufferId) -> &mut RunningStats<T> {
        &mut self.buffers.stats[id.0]
    }

    pub(crate) fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    pub(crate) fn count_backbone_images(&mut self, n: usize) {
        self.backbone_images += n;
    }

    /// Images pushed through a CNN backbone so far.
    pub fn backbone_images(&self) -> usize {
        self.backbone_images
    }

    /// Gradient per parameter after `backward`; zeros where a parameter was
    /// unused.
    pub fn grads(&self) -> Vec<Vec<T>> {
        self.leaves
            .iter()
            .zip(&self.params.values)
            .map(|(leaf, v)| {
                leaf.as_ref()
                    .and_then(Tensor::grad)
                    .unwrap_or_else(|| vec![T::zero(); v.len()])
            })
            .collect()
    }
}
