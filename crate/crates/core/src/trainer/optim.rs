use crate::autodiff::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of a flat parameter slice at step `t`
/// (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(shape_err(format!(
            "Adam buffers differ in length: param {}, grad {}, m {}, v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("Adam step index starts at 1".into()));
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one = T::one();
    let c1 = one - T::of(cfg.beta1.powf(t as f64));
    let c2 = one - T::of(cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam state over the trainable entries of a parameter store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| {
                p.trainable.then(|| (Tensor::zeros(p.value.shape().to_vec()), Tensor::zeros(p.value.shape().to_vec())))
            })
            .collect();
        Adam { config, step: 0, moments }
    }

    /// Applies the accumulated gradients of `store` with learning rate `lr`.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(shape_err("optimizer was built for a different parameter store"));
        }
        self.step += 1;
        for (p, slot) in store.iter_mut().zip(&mut self.moments) {
            if let Some((m, v)) = slot {
                adam_step(p.value.data_mut(), p.grad.data(), m.data_mut(), v.data_mut(), self.step, lr, &self.config)?;
            }
        }
        Ok(())
    }
}

/// Global L2 norm of the trainable gradients.
pub fn grad_norm<T: Real>(store: &ParamStore<T>) -> f64 {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(_, p)| p.grad.data().iter().map(|g| g.as_f64() * g.as_f64()))
        .sum::<f64>()
        .sqrt()
}

/// Rescales the gradients so their global norm does not exceed `max_norm`.
pub fn clip_grad_norm<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for p in store.iter_mut().filter(|p| p.trainable) {
            p.grad.data_mut().iter_mut().for_each(|g| *g = *g * s);
        }
    }
    norm
}
