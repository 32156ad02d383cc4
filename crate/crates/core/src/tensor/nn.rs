use rand::Rng;

use super::ops::split_dim;
use super::{cast, Float, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormSpec {
    /// Channel axis; statistics are taken over every other axis.
    pub axis: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormSpec {
    pub fn channel_axis(axis: usize) -> Self {
        Self {
            axis,
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<T: Float> Tensor<T> {
    pub fn batch_norm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        stats: &mut RunningStats<T>,
        mode: BatchNormMode,
        spec: BatchNormSpec,
    ) -> Result<Tensor<T>> {
        if spec.axis >= self.rank() {
            return Err(shape_err!(
                "batch_norm axis {} for shape {:?}",
                spec.axis,
                self.shape()
            ));
        }
        let (outer, ch, inner) = split_dim(self.shape(), spec.axis);
        if gamma.shape() != [ch]
            || beta.shape() != [ch]
            || stats.mean.len() != ch
            || stats.var.len() != ch
        {
            return Err(shape_err!(
                "batch_norm parameters do not match {ch} channels"
            ));
        }
        let count = outer * inner;
        if count == 0 {
            return Err(shape_err!("batch_norm over empty batch"));
        }
        let m: T = cast(count as f64);
        let eps: T = cast(spec.eps);
        let x = self.data();
        let at = move |o: usize, c: usize, i: usize| (o * ch + c) * inner + i;

        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for c in 0..ch {
                    let mut s = T::zero();
                    for o in 0..outer {
                        for i in 0..inner {
                            s += x[at(o, c, i)];
                        }
                    }
                    let mu = s / m;
                    let mut v = T::zero();
                    for o in 0..outer {
                        for i in 0..inner {
                            let d = x[at(o, c, i)] - mu;
                            v += d * d;
                        }
                    }
                    mean[c] = mu;
                    var[c] = v / m;
                }
                let mom: T = cast(spec.momentum);
                let unbias: T = if count > 1 {
                    m / (m - T::one())
                } else {
                    T::one()
                };
                for c in 0..ch {
                    stats.mean[c] = (T::one() - mom) * stats.mean[c] + mom * mean[c];
                    stats.var[c] = (T::one() - mom) * stats.var[c] + mom * var[c] * unbias;
                }
                (mean, var)
            }
            BatchNormMode::Eval => (stats.mean.clone(), stats.var.clone()),
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = at(o, c, 0);
                for i in 0..inner {
                    let h = (x[base + i] - mean[c]) * inv_std[c];
                    xhat[base + i] = h;
                    out[base + i] = g[c] * h + b[c];
                }
            }
        }

        let (xt, gt, bt) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |gy| {
                let mut sum_g = vec![T::zero(); ch];
                let mut sum_gx = vec![T::zero(); ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = at(o, c, 0);
                        for i in 0..inner {
                            sum_g[c] += gy[base + i];
                            sum_gx[c] += gy[base + i] * xhat[base + i];
                        }
                    }
                }
                let gamma = gt.data();
                let gx = xt.requires_grad().then(|| {
                    let mut gx = vec![T::zero(); gy.len()];
                    for o in 0..outer {
                        for c in 0..ch {
                            let base = at(o, c, 0);
                            let k = gamma[c] * inv_std[c];
                            for i in 0..inner {
                                gx[base + i] = match mode {
                                    BatchNormMode::Train => {
                                        k / m
                                            * (m * gy[base + i]
                                                - sum_g[c]
                                                - xhat[base + i] * sum_gx[c])
                                    }
                                    BatchNormMode::Eval => k * gy[base + i],
                                };
                            }
                        }
                    }
                    gx
                });
                vec![
                    gx,
                    gt.requires_grad().then(|| sum_gx.clone()),
                    bt.requires_grad().then(|| sum_g.clone()),
                ]
            },
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`.
    pub fn dropout(&self, p: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep: T = cast(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.mul(&Tensor::new(self.shape(), mask)?)
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)` for
    /// `[n, k]` logits.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 || self.shape()[0] != labels.len() {
            return Err(shape_err!(
                "cross_entropy expects [n, k] logits for {} labels, got {:?}",
                labels.len(),
                self.shape()
            ));
        }
        let (n, k) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let x = self.data();
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * k..(r + 1) * k];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let s: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + s.ln();
            loss += lse - row[label];
            for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let nf: T = cast(n as f64);
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            vec![],
            vec![loss / nf],
            vec![self.clone()],
            move |g| {
                let scale = g[0] / nf;
                let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * k + l] -= scale;
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = seeded(1);
        let data: Vec<f64> = (0..4 * 3 * 2 * 2)
            .map(|_| rng.random_range(-3.0..5.0))
            .collect();
        let x = Tensor::new(&[4, 3, 2, 2], data).unwrap();
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let mut stats = RunningStats::new(3);
        let y = x
            .batch_norm(
                &gamma,
                &beta,
                &mut stats,
                BatchNormMode::Train,
                BatchNormSpec::channel_axis(1),
            )
            .unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..4).map(move |i| (n, i)))
                .map(|(n, i)| y.data()[(n * 3 + c) * 4 + i])
                .collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        assert!(stats.mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f32>::new(&[2, 2], vec![1.0, -4.0, 2.0, 8.0]).unwrap();
        let gamma = Tensor::zeros(&[2]);
        let beta = Tensor::new(&[2], vec![0.5, -1.5]).unwrap();
        let mut stats = RunningStats::new(2);
        let y = x
            .batch_norm(
                &gamma,
                &beta,
                &mut stats,
                BatchNormMode::Train,
                BatchNormSpec::channel_axis(1),
            )
            .unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::<f64>::new(&[1, 2], vec![3.0, 3.0]).unwrap();
        let mut stats = RunningStats {
            mean: vec![1.0, 3.0],
            var: vec![4.0, 1.0],
        };
        let before = stats.clone();
        let y = x
            .batch_norm(
                &Tensor::full(&[2], 1.0),
                &Tensor::zeros(&[2]),
                &mut stats,
                BatchNormMode::Eval,
                BatchNormSpec::channel_axis(1),
            )
            .unwrap();
        assert!((y.data()[0] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert_eq!(y.data()[1], 0.0);
        assert_eq!(stats, before);
    }

    #[test]
    fn cross_entropy_values() {
        let x = Tensor::<f64>::zeros(&[3, 6]);
        let l = x.cross_entropy(&[0, 3, 5]).unwrap().item().unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        let confident = Tensor::<f64>::new(&[1, 2], vec![200.0, -200.0]).unwrap();
        assert!(confident.cross_entropy(&[0]).unwrap().item().unwrap() < 1e-12);
        assert!(matches!(
            x.cross_entropy(&[0, 1, 6]),
            Err(Error::LabelOutOfRange {
                label: 6,
                classes: 6
            })
        ));
    }

    #[test]
    fn dropout_scales_survivors() {
        let x = Tensor::<f32>::full(&[1000], 1.0);
        let y = x.dropout(0.5, &mut seeded(0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
        assert!(x.dropout(1.0, &mut seeded(0)).is_err());
    }
}
