use super::{Float, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Lays receptive fields out as a `(c*kh*kw) x (n*oh*ow)` matrix.
    fn im2col<T: Float>(&self, x: &[T]) -> Vec<T> {
        let (ohw, cols) = (self.oh * self.ow, self.cols());
        let mut out = vec![T::zero(); self.rows() * cols];
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (c * self.kh + i) * self.kw + j;
                    let row = &mut out[r * cols..(r + 1) * cols];
                    for b in 0..self.n {
                        let plane = &x[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + i) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * self.w..][..self.w];
                            let dst = &mut row[b * ohw + oy * self.ow..][..self.ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + j) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im<T: Float>(&self, cols_data: &[T]) -> Vec<T> {
        let (ohw, cols) = (self.oh * self.ow, self.cols());
        let mut dx = vec![T::zero(); self.n * self.c * self.h * self.w];
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (c * self.kh + i) * self.kw + j;
                    let row = &cols_data[r * cols..(r + 1) * cols];
                    for b in 0..self.n {
                        let plane =
                            &mut dx[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + i) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * self.w..][..self.w];
                            let src = &row[b * ohw + oy * self.ow..][..self.ow];
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * self.stride + j) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// `[f, n*ohw]` <-> `[n, f, ohw]`.
fn fm_to_nf<T: Float>(src: &[T], f: usize, n: usize, ohw: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for fi in 0..f {
        for b in 0..n {
            dst[(b * f + fi) * ohw..][..ohw].copy_from_slice(&src[fi * n * ohw + b * ohw..][..ohw]);
        }
    }
    dst
}

fn nf_to_fm<T: Float>(src: &[T], f: usize, n: usize, ohw: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for fi in 0..f {
        for b in 0..n {
            dst[fi * n * ohw + b * ohw..][..ohw].copy_from_slice(&src[(b * f + fi) * ohw..][..ohw]);
        }
    }
    dst
}

impl<T: Float> Tensor<T> {
    /// 2-D cross-correlation (no kernel flip) of `[n, c, h, w]` input with
    /// `[f, c, kh, kw]` kernels.
    pub fn conv2d(&self, kernels: &Tensor<T>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        let (xs, ks) = (self.shape(), kernels.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(shape_err!("conv2d input {:?} vs kernels {:?}", xs, ks));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, kh, kw) = (ks[0], ks[2], ks[3]);
        let (oh, ow) = match (
            out_len(h, kh, spec.stride, spec.padding),
            out_len(w, kw, spec.stride, spec.padding),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(shape_err!(
                    "kernel {kh}x{kw} does not fit {h}x{w} with padding {}",
                    spec.padding
                ))
            }
        };
        let geo = Geometry {
            n,
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride: spec.stride,
            pad: spec.padding,
        };
        let cols = geo.im2col(self.data());
        let (rows, ncols) = (geo.rows(), geo.cols());
        let mut fm = vec![T::zero(); f * ncols];
        T::gemm(
            f,
            rows,
            ncols,
            kernels.data(),
            false,
            &cols,
            false,
            &mut fm,
            false,
        );
        let out = fm_to_nf(&fm, f, n, oh * ow);

        let (x, k) = (self.clone(), kernels.clone());
        Ok(Tensor::from_op(
            vec![n, f, oh, ow],
            out,
            vec![self.clone(), kernels.clone()],
            move |g| {
                let gfm = nf_to_fm(g, f, n, oh * ow);
                let gk = k.requires_grad().then(|| {
                    let mut gk = vec![T::zero(); f * rows];
                    T::gemm(f, ncols, rows, &gfm, false, &cols, true, &mut gk, false);
                    gk
                });
                let gx = x.requires_grad().then(|| {
                    let mut gcols = vec![T::zero(); rows * ncols];
                    T::gemm(
                        rows,
                        f,
                        ncols,
                        k.data(),
                        true,
                        &gfm,
                        false,
                        &mut gcols,
                        false,
                    );
                    geo.col2im(&gcols)
                });
                vec![gx, gk]
            },
        ))
    }

    /// Max pooling over `[n, c, h, w]`; padded cells never win.
    pub fn max_pool2d(&self, spec: Pool2dSpec) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(shape_err!("max_pool2d expects [n, c, h, w], got {:?}", xs));
        }
        let (nc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (oh, ow) = match (
            out_len(h, spec.kernel, spec.stride, spec.padding),
            out_len(w, spec.kernel, spec.stride, spec.padding),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(shape_err!("pool window does not fit {h}x{w}")),
        };
        let x = self.data();
        let mut out = vec![T::zero(); nc * oh * ow];
        let mut arg = vec![0usize; nc * oh * ow];
        for p in 0..nc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut at = usize::MAX;
                    for i in 0..spec.kernel {
                        let iy = (oy * spec.stride + i) as isize - spec.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..spec.kernel {
                            let ix = (ox * spec.stride + j) as isize - spec.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = (p * h + iy as usize) * w + ix as usize;
                            if at == usize::MAX || x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best;
                    arg[o] = at;
                }
            }
        }
        let len = x.len();
        Ok(Tensor::from_op(
            vec![xs[0], xs[1], oh, ow],
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); len];
                for (o, &src) in arg.iter().enumerate() {
                    gx[src] += g[o];
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_2x2() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let k = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        let y = x.conv2d(&k, Conv2dSpec::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.]);
    }

    #[test]
    fn identity_kernel() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = Tensor::<f64>::new(&[2, 3, 4, 5], data.clone()).unwrap();
        let mut k = vec![0.0; 9];
        for c in 0..3 {
            k[c * 3 + c] = 1.0;
        }
        let k = Tensor::new(&[3, 3, 1, 1], k).unwrap();
        let y = x.conv2d(&k, Conv2dSpec::new(1, 0)).unwrap();
        assert_eq!(y.data(), data.as_slice());
    }

    #[test]
    fn stride_padding_shape() {
        let x = Tensor::<f32>::zeros(&[2, 1, 64, 64]);
        let k = Tensor::<f32>::zeros(&[4, 1, 7, 7]);
        let y = x.conv2d(&k, Conv2dSpec::new(2, 3)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 32, 32]);
        let p = y
            .max_pool2d(Pool2dSpec {
                kernel: 3,
                stride: 2,
                padding: 1,
            })
            .unwrap();
        assert_eq!(p.shape(), &[2, 4, 16, 16]);
        assert!(x
            .conv2d(&Tensor::zeros(&[1, 2, 3, 3]), Conv2dSpec::new(1, 0))
            .is_err());
        assert!(Tensor::<f32>::zeros(&[1, 1, 2, 2])
            .conv2d(&Tensor::zeros(&[1, 1, 3, 3]), Conv2dSpec::new(1, 0))
            .is_err());
    }

    #[test]
    fn max_pool_routes_gradient() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1., 4., 3., 2.]).unwrap();
        let y = x
            .max_pool2d(Pool2dSpec {
                kernel: 2,
                stride: 2,
                padding: 0,
            })
            .unwrap();
        assert_eq!(y.data(), &[4.]);
        y.sum().backward();
        assert_eq!(x.grad().unwrap(), vec![0., 1., 0., 0.]);
    }
}
