//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index;

use super::{Float, Tensor};
use crate::error::{shape_err, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per input (seeded sample).
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Extra steps `h/10, h/100, ...` tried per coordinate; the smallest
    /// error counts. A ReLU or max switch straddled by the larger step
    /// drops out at a smaller one, a wrong gradient fails at every step.
    pub refinements: usize,
}

impl GradCheckConfig {
    /// `f32` arithmetic: `h = 1e-2` refined down to `1e-4`, relative error
    /// below `1e-2`. Rounding noise in `f32` grows like `eps |f| / h`, so
    /// the ladder starts high and only steps down to dodge a kink.
    pub fn single() -> Self {
        Self {
            step: 1e-2,
            tolerance: 1e-2,
            floor: 1e-2,
            max_coords: None,
            seed: 0,
            refinements: 2,
        }
    }

    /// `f64` arithmetic: `h = 1e-5` (near the cube root of machine
    /// epsilon) refined down to `1e-8`, relative error below `1e-5`.
    /// Gradients under the `1e-3` floor are compared in absolute terms.
    pub fn double() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
            refinements: 3,
        }
    }

    pub fn sampled(mut self, coords: usize) -> Self {
        self.max_coords = Some(coords);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates that passed only at a refined step.
    pub refined: usize,
    pub passed: bool,
}

/// Checks `f` (scalar-valued) at a single input.
pub fn grad_check<T, F>(
    f: F,
    shape: &[usize],
    x: &[T],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Float,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    grad_check_inputs(
        |xs: &[Tensor<T>]| f(&xs[0]),
        &[(shape.to_vec(), x.to_vec())],
        cfg,
    )
}

/// Checks `f` (scalar-valued) with respect to every listed input.
pub fn grad_check_inputs<T, F>(
    f: F,
    inputs: &[(Vec<usize>, Vec<T>)],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Float,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let leaves = inputs
        .iter()
        .map(|(s, d)| Tensor::param(s, d.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(shape_err!(
            "grad_check needs a scalar function, got {:?}",
            out.shape()
        ));
    }
    out.backward();

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let xs = inputs
            .iter()
            .enumerate()
            .map(|(i, (s, d))| {
                let mut d = d.clone();
                if i == which {
                    d[coord] = T::from_f64(d[coord].to_f64() + delta);
                }
                Tensor::new(s, d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(f(&xs)?.item()?.to_f64())
    };

    let mut rng = seeded(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        refined: 0,
        passed: true,
    };
    for (which, (leaf, (_, data))) in leaves.iter().zip(inputs).enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![T::zero(); data.len()]);
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < data.len() => {
                let mut c = index::sample(&mut rng, data.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..data.len()).collect(),
        };
        for coord in coords {
            let a = analytic[coord].to_f64();
            let mut best: Option<(f64, f64)> = None;
            let mut step = cfg.step;
            for attempt in 0..=cfg.refinements {
                // the perturbed coordinate is rounded to T, so use the step
                // that was actually applied
                let x0 = data[coord].to_f64();
                let hp = T::from_f64(x0 + step).to_f64() - x0;
                let hm = x0 - T::from_f64(x0 - step).to_f64();
                let numeric = (eval(which, coord, step)? - eval(which, coord, -step)?) / (hp + hm);
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
                if best.is_none_or(|(r, _)| rel < r) {
                    best = Some((rel, abs));
                }
                if rel < cfg.tolerance {
                    report.refined += usize::from(attempt > 0);
                    break;
                }
                step /= 10.0;
            }
            let (rel, abs) = best.expect("at least one step");
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
