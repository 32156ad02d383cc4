use super::{cast, Float};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Vec<T>>) -> Self {
        let m: Vec<Vec<T>> = shapes
            .into_iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

fn check<T>(params: &[Vec<T>], grads: &[Vec<T>]) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(shape_err!("optimizer: gradients do not match parameters"));
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Float>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    check(params, grads)?;
    if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.len() != p.len())
    {
        return Err(shape_err!("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (T, T) = (cast(cfg.beta1), cast(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr: T = cast(cfg.lr);
    let eps: T = cast(cfg.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn sgd_step<T: Float>(params: &mut [Vec<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
    check(params, grads)?;
    let lr: T = cast(lr);
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &d) in p.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam {
        cfg: AdamConfig,
        state: AdamState<T>,
    },
    Sgd {
        lr: f64,
    },
}

impl<T: Float> Optimizer<T> {
    pub fn adam(params: &[Vec<T>], lr: f64) -> Self {
        Optimizer::Adam {
            cfg: AdamConfig::with_lr(lr),
            state: AdamState::new(params),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>]) -> Result<()> {
        match self {
            Optimizer::Adam { cfg, state } => adam_step(params, grads, state, cfg),
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
        }
    }
}
