use std::collections::BTreeMap;

use sapiens_tensor::{Float, Tensor};

use super::config::{decays, LayerMultipliers, TrainConfig};
use crate::error::{Error, Result};
use crate::vit::ParamStore;

/// One AdamW step on a flat parameter slice. Weight decay is decoupled and
/// applied before the moment update: `p <- p (1 - lr wd)`, then the
/// bias-corrected Adam step. `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<F: Float>(
    param: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powf(t as f64);
    let bc2 = 1.0 - beta2.powf(t as f64);
    let shrink = F::of_f64(1.0 - lr * weight_decay);
    let (b1, b2) = (F::of_f64(beta1), F::of_f64(beta2));
    let (c1, c2) = (F::of_f64(1.0 - beta1), F::of_f64(1.0 - beta2));
    let (lr, eps) = (F::of_f64(lr), F::of_f64(eps));
    let (bc1, bc2) = (F::of_f64(bc1), F::of_f64(bc2));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + c1 * g;
        v[i] = b2 * v[i] + c2 * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        param[i] = param[i] * shrink - lr * mh / (vh.sqrt() + eps);
    }
}

/// AdamW state keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamW<F: Float = f32> {
    pub m: BTreeMap<String, Vec<F>>,
    pub v: BTreeMap<String, Vec<F>>,
    pub step: u64,
}

/// Global L2 norm over every gradient.
pub fn global_grad_norm<F: Float>(grads: &BTreeMap<String, Vec<F>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

impl<F: Float> AdamW<F> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }

    /// Applies one update to every trainable tensor in `weights` from its
    /// accumulated gradient, returning the pre-clip gradient norm. Tensors
    /// are replaced by fresh leaves, so their graphs are dropped.
    pub fn step(
        &mut self,
        weights: &mut ParamStore<F>,
        lr: f64,
        mults: &LayerMultipliers,
        cfg: &TrainConfig,
    ) -> Result<f64> {
        let mut grads = BTreeMap::new();
        for (name, t) in weights.iter() {
            if !t.is_requires_grad() {
                continue;
            }
            let g = t.grad().unwrap_or_else(|| vec![F::zero(); t.numel()]);
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("non-finite gradient in `{name}`")));
            }
            grads.insert(name.clone(), g);
        }
        let norm = global_grad_norm(&grads);
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = F::of_f64(cfg.grad_clip / norm);
            grads.values_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x *= s);
        }
        self.step += 1;
        for (name, g) in grads {
            let t = weights.get(&name)?;
            let mut p = t.to_vec();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![F::zero(); p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![F::zero(); p.len()]);
            let wd = if decays(&name) { cfg.weight_decay } else { 0.0 };
            adamw_update(
                &mut p,
                &g,
                m,
                v,
                self.step,
                lr * mults.for_param(&name),
                wd,
                cfg.beta1,
                cfg.beta2,
                cfg.eps,
            );
            let fresh = Tensor::new(p, t.shape())?.requires_grad(true);
            weights.insert(name, fresh);
        }
        Ok(norm)
    }
}
