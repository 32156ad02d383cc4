use super::{cast, numel, Float, Tensor};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd {
            a[i + a.len() - nd]
        } else {
            1
        };
        let db = if i + b.len() >= nd {
            b[i + b.len() - nd]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `shape` viewed inside `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let mut strides = vec![0; nd];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let o = i + nd - shape.len();
        strides[o] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` over a broadcast iteration space.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[nd - 1];
    let (la, lb) = (sa[nd - 1], sb[nd - 1]);
    let outer = numel(&out[..nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut ba, mut bb) = (0usize, 0usize);
    for o in 0..outer {
        let base = o * last;
        for j in 0..last {
            f(base + j, ba + j * la, bb + j * lb);
        }
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            ba += sa[d];
            bb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ba -= sa[d] * out[d];
            bb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Splits `shape` around `dim` into `(outer, len, inner)`.
pub(crate) fn split_dim(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    (numel(&shape[..dim]), shape[dim], numel(&shape[dim + 1..]))
}

impl<T: Float> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| {
            shape_err!(
                "cannot broadcast {:?} with {:?}",
                self.shape(),
                other.shape()
            )
        })?;
        let sa = broadcast_strides(self.shape(), &out_shape);
        let sb = broadcast_strides(other.shape(), &out_shape);
        let (x, y) = (self.data(), other.data());
        let mut out = vec![T::zero(); numel(&out_shape)];
        let same = self.shape() == other.shape();
        let apply = |a: T, b: T| match op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        };
        if same {
            for ((o, &a), &b) in out.iter_mut().zip(x).zip(y) {
                *o = apply(a, b);
            }
        } else {
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = apply(x[i], y[j]));
        }
        let (a, b) = (self.clone(), other.clone());
        let shape = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let (x, y) = (a.data(), b.data());
                let mut ga = a.requires_grad().then(|| vec![T::zero(); x.len()]);
                let mut gb = b.requires_grad().then(|| vec![T::zero(); y.len()]);
                let mut step = |o: usize, i: usize, j: usize| {
                    let go = g[o];
                    let (da, db) = match op {
                        BinOp::Add => (go, go),
                        BinOp::Sub => (go, -go),
                        BinOp::Mul => (go * y[j], go * x[i]),
                        BinOp::Div => (go / y[j], -go * x[i] / (y[j] * y[j])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += db;
                    }
                };
                if same {
                    for o in 0..g.len() {
                        step(o, o, o);
                    }
                } else {
                    for_each_broadcast(&shape, &sa, &sb, step);
                }
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Div)
    }

    fn unary<F, D>(&self, f: F, df: D) -> Tensor<T>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + 'static,
    {
        let out: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(
                x.data().iter().zip(g).map(|(&v, &gi)| df(v, gi)).collect(),
            )]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |v| if v > T::zero() { v } else { T::zero() },
            |v, g| if v > T::zero() { g } else { T::zero() },
        )
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.unary(move |v| v * s, move |_, g| g * s)
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.unary(move |v| v + s, |_, g| g)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|v| v.exp(), |v, g| g * v.exp())
    }

    /// Natural logarithm; the input must be positive.
    pub fn ln(&self) -> Tensor<T> {
        self.unary(|v| v.ln(), |v, g| g / v)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(
            |v| v.tanh(),
            |v, g| {
                let t = v.tanh();
                g * (T::one() - t * t)
            },
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n: T = cast(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim >= self.rank() {
            return Err(shape_err!(
                "dim {dim} out of range for shape {:?}",
                self.shape()
            ));
        }
        Ok(())
    }

    fn reduced_shape(&self, dim: usize, keepdim: bool) -> Vec<usize> {
        let mut s = self.shape().to_vec();
        if keepdim {
            s[dim] = 1;
        } else {
            s.remove(dim);
        }
        s
    }

    pub fn sum_dim(&self, dim: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.check_dim(dim)?;
        let (outer, len, inner) = split_dim(self.shape(), dim);
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        Ok(Tensor::from_op(
            self.reduced_shape(dim, keepdim),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        gx[(o * len + l) * inner..(o * len + l + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn mean_dim(&self, dim: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.check_dim(dim)?;
        let len: T = cast(self.shape()[dim] as f64);
        Ok(self.sum_dim(dim, keepdim)?.scale(T::one() / len))
    }

    /// Maximum along `dim`; the gradient flows to the first maximal entry.
    pub fn max_dim(&self, dim: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.check_dim(dim)?;
        let (outer, len, inner) = split_dim(self.shape(), dim);
        if len == 0 {
            return Err(shape_err!("max over empty dim {dim}"));
        }
        let x = self.data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let v = x[base + i];
                    let slot = o * inner + i;
                    if v > out[slot] || l == 0 {
                        out[slot] = v;
                        arg[slot] = base + i;
                    }
                }
            }
        }
        let n = x.len();
        Ok(Tensor::from_op(
            self.reduced_shape(dim, keepdim),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); n];
                for (slot, &src) in arg.iter().enumerate() {
                    gx[src] += g[slot];
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Softmax along `dim`, stabilized by max subtraction.
    pub fn softmax(&self, dim: usize) -> Result<Tensor<T>> {
        self.check_dim(dim)?;
        let (outer, len, inner) = split_dim(self.shape(), dim);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - m).exp();
                    out[at(l)] = e;
                    s += e;
                }
                for l in 0..len {
                    out[at(l)] /= s;
                }
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(shape_err!(
                "transpose needs rank >= 2, got {:?}",
                self.shape()
            ));
        }
        let (m, n) = (self.shape()[r - 2], self.shape()[r - 1]);
        let batch = numel(&self.shape()[..r - 2]);
        let tr = move |src: &[T]| {
            let mut dst = vec![T::zero(); src.len()];
            for b in 0..batch {
                let (s, d) = (&src[b * m * n..], &mut dst[b * m * n..]);
                for i in 0..m {
                    for j in 0..n {
                        d[j * m + i] = s[i * n + j];
                    }
                }
            }
            dst
        };
        let mut shape = self.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let out = tr(self.data());
        let back = move |g: &[T]| {
            let mut dst = vec![T::zero(); g.len()];
            for b in 0..batch {
                let (s, d) = (&g[b * m * n..], &mut dst[b * m * n..]);
                for j in 0..n {
                    for i in 0..m {
                        d[i * n + j] = s[j * m + i];
                    }
                }
            }
            vec![Some(dst)]
        };
        Ok(Tensor::from_op(shape, out, vec![self.clone()], back))
    }

    /// Matrix product.
    ///
    /// * `[.., m, k] x [k, n] -> [.., m, n]` (leading axes of the left
    ///   operand are flattened into rows),
    /// * `[b, m, k] x [b, k, n] -> [b, m, n]` (batched).
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err!(
                "matmul needs rank >= 2, got {:?} x {:?}",
                sa,
                sb
            ));
        }
        let k = sa[sa.len() - 1];
        if sb[sb.len() - 2] != k {
            return Err(shape_err!("matmul inner dims differ: {:?} x {:?}", sa, sb));
        }
        let n = sb[sb.len() - 1];
        if sb.len() == 2 {
            let rows = numel(&sa[..sa.len() - 1]);
            let mut out = vec![T::zero(); rows * n];
            T::gemm(
                rows,
                k,
                n,
                self.data(),
                false,
                other.data(),
                false,
                &mut out,
                false,
            );
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            let (a, b) = (self.clone(), other.clone());
            return Ok(Tensor::from_op(
                shape,
                out,
                vec![self.clone(), other.clone()],
                move |g| {
                    let ga = a.requires_grad().then(|| {
                        let mut ga = vec![T::zero(); rows * k];
                        T::gemm(rows, n, k, g, false, b.data(), true, &mut ga, false);
                        ga
                    });
                    let gb = b.requires_grad().then(|| {
                        let mut gb = vec![T::zero(); k * n];
                        T::gemm(k, rows, n, a.data(), true, g, false, &mut gb, false);
                        gb
                    });
                    vec![ga, gb]
                },
            ));
        }
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err!("unsupported matmul shapes {:?} x {:?}", sa, sb));
        }
        let (batch, m) = (sa[0], sa[1]);
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &self.data()[bi * m * k..],
                false,
                &other.data()[bi * k * n..],
                false,
                &mut out[bi * m * n..],
                false,
            );
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![batch, m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[bi * m * n..],
                            false,
                            &b.data()[bi * k * n..],
                            true,
                            &mut ga[bi * m * k..],
                            false,
                        );
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); batch * k * n];
                    for bi in 0..batch {
                        T::gemm(
                            k,
                            m,
                            n,
                            &a.data()[bi * m * k..],
                            true,
                            &g[bi * m * n..],
                            false,
                            &mut gb[bi * k * n..],
                            false,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Concatenation along `dim`; all other axes must agree.
    pub fn concat(xs: &[Tensor<T>], dim: usize) -> Result<Tensor<T>> {
        let first = xs
            .first()
            .ok_or_else(|| shape_err!("concat of zero tensors"))?;
        first.check_dim(dim)?;
        for x in xs {
            let ok = x.rank() == first.rank()
                && x.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == dim || a == b);
            if !ok {
                return Err(shape_err!(
                    "concat shape {:?} vs {:?} on dim {dim}",
                    x.shape(),
                    first.shape()
                ));
            }
        }
        let (outer, _, inner) = split_dim(first.shape(), dim);
        let lens: Vec<usize> = xs.iter().map(|x| x.shape()[dim]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (x, &l) in xs.iter().zip(&lens) {
                out.extend_from_slice(&x.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[dim] = total;
        Ok(Tensor::from_op(shape, out, xs.to_vec(), move |g| {
            let mut grads: Vec<Vec<T>> = lens
                .iter()
                .map(|&l| Vec::with_capacity(outer * l * inner))
                .collect();
            let mut at = 0;
            for _ in 0..outer {
                for (gx, &l) in grads.iter_mut().zip(&lens) {
                    gx.extend_from_slice(&g[at..at + l * inner]);
                    at += l * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Row gather: `self` is `[b, n, d]`, `index[b]` lists rows of batch
    /// entry `b` (all lists equally long, `m`); the result is `[b, m, d]`.
    pub fn gather_rows(&self, index: &[Vec<usize>]) -> Result<Tensor<T>> {
        if self.rank() != 3 || index.len() != self.shape()[0] {
            return Err(shape_err!(
                "gather_rows expects [b, n, d] with b index lists, got {:?} and {} lists",
                self.shape(),
                index.len()
            ));
        }
        let (n, d) = (self.shape()[1], self.shape()[2]);
        let m = index.first().map_or(0, Vec::len);
        if index
            .iter()
            .any(|ix| ix.len() != m || ix.iter().any(|&i| i >= n))
        {
            return Err(shape_err!(
                "gather_rows index lists must share length and stay below {n}"
            ));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(index.len() * m * d);
        for (b, ix) in index.iter().enumerate() {
            for &i in ix {
                out.extend_from_slice(&x[(b * n + i) * d..(b * n + i + 1) * d]);
            }
        }
        let index = index.to_vec();
        let len = x.len();
        Ok(Tensor::from_op(
            vec![index.len(), m, d],
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); len];
                for (b, ix) in index.iter().enumerate() {
                    for (j, &i) in ix.iter().enumerate() {
                        let src = &g[(b * m + j) * d..(b * m + j + 1) * d];
                        for (acc, &v) in
                            gx[(b * n + i) * d..(b * n + i + 1) * d].iter_mut().zip(src)
                        {
                            *acc += v;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}
