//! Central finite-difference gradient checks.

use super::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares reverse-mode gradients of the scalar function `f` against central
/// differences with step `h` over every input coordinate; returns the largest
/// relative error.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[j]);
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Gradient check over the trainable parameters of `store`, probing every
/// `stride`-th scalar of the flattened parameter space.
pub fn check_param_gradients<F>(store: &mut ParamStore<f64>, f: F, h: f64, stride: usize) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward_into(out, store)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).item())
    };

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    let mut flat = 0usize;
    for id in ids {
        let n = store.get(id).value.numel();
        for j in 0..n {
            flat += 1;
            if !(flat - 1).is_multiple_of(stride.max(1)) {
                continue;
            }
            let analytic = store.get(id).grad.data()[j];
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}
