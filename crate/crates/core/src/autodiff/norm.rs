use super::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Biased (population) variance.
    pub var: Tensor<T>,
    /// Elements per channel.
    pub count: usize,
}

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(format!(
            "batch_norm over {c} channels got gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if h * w == 0 {
        return Err(shape_err("batch_norm needs a non-empty spatial extent"));
    }
    Ok((b, c, h * w))
}

fn normalize<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    (b, c, hw): (usize, usize, usize),
) -> (Tensor<T>, Vec<T>) {
    let mut xhat = vec![T::zero(); x.numel()];
    let mut y = vec![T::zero(); x.numel()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let (g, bt) = (gamma.data()[ci], beta.data()[ci]);
            for i in base..base + hw {
                let n = (x.data()[i] - mean[ci]) * inv_std[ci];
                xhat[i] = n;
                y[i] = g * n + bt;
            }
        }
    }
    (Tensor::new(x.shape().to_vec(), y).unwrap(), xhat)
}

pub(crate) fn batch_norm_backward<T: Real>(
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = dy.dims4().expect("validated in forward");
    let hw = h * w;
    let n = T::of((b * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (p, (gs, xs)) in dy.data().chunks(hw).zip(xhat.chunks(hw)).enumerate() {
        let ci = p % c;
        for (&g, &xh) in gs.iter().zip(xs) {
            dgamma[ci] = dgamma[ci] + g * xh;
            dbeta[ci] = dbeta[ci] + g;
        }
    }
    let mut dx = vec![T::zero(); dy.numel()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let scale = gamma.data()[ci] * inv_std[ci];
            for i in base..base + hw {
                dx[i] = if batch_stats {
                    // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                    scale * (dy.data()[i] - (dbeta[ci] + xhat[i] * dgamma[ci]) / n)
                } else {
                    scale * dy.data()[i]
                };
            }
        }
    }
    (
        Tensor::new(dy.shape().to_vec(), dx).unwrap(),
        Tensor::new(vec![c], dgamma).unwrap(),
        Tensor::new(vec![c], dbeta).unwrap(),
    )
}

impl<T: Real> Tape<T> {
    /// Batch normalization with statistics of the current batch over
    /// `(B, H, W)`. Returns the output and the batch statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let dims @ (b, c, hw) = check(xv, gv, bv)?;
        let count = b * hw;
        let nf = T::of(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for (p, plane) in xv.data().chunks(hw).enumerate() {
            mean[p % c] = mean[p % c] + plane.iter().copied().sum();
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let m = mean[ci];
                var[ci] = var[ci] + xv.data()[base..base + hw].iter().map(|&v| (v - m) * (v - m)).sum();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / nf);
        let eps_t = T::of(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let (y, xhat) = normalize(xv, gv, bv, &mean, &inv_std, dims);
        let stats = BatchStats { mean: Tensor::new(vec![c], mean)?, var: Tensor::new(vec![c], var)?, count };
        let v = self.derive(y, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats: true }, &[x, gamma, beta]);
        Ok((v, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let dims @ (_, c, _) = check(xv, gv, bv)?;
        if mean.shape() != [c] || var.shape() != [c] {
            return Err(shape_err(format!("running statistics must have shape [{c}]")));
        }
        let eps_t = T::of(eps);
        let inv_std: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let (y, xhat) = normalize(xv, gv, bv, mean.data(), &inv_std, dims);
        Ok(self.derive(y, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats: false }, &[x, gamma, beta]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_value_channel_normalizes_to_unit() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_f64(vec![2, 1, 1, 1], &[1.0, 3.0]).unwrap());
        let g = tape.input(Tensor::full(vec![1], 1.0));
        let b = tape.input(Tensor::zeros(vec![1]));
        let eps = 1e-12;
        let (y, stats) = tape.batch_norm_train(x, g, b, eps).unwrap();
        // direct formula: (x - 2) / sqrt(1 + eps)
        let expect = [-1.0 / (1.0f64 + eps).sqrt(), 1.0 / (1.0f64 + eps).sqrt()];
        for (got, want) in tape.value(y).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(stats.mean.data(), &[2.0]);
        assert_eq!(stats.var.data(), &[1.0]);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_fn(vec![2, 3, 2, 2], |i| (i as f64).sin()));
        let g = tape.input(Tensor::zeros(vec![3]));
        let b = tape.input(Tensor::full(vec![3], 0.7));
        let (y, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::zeros(vec![1, 3, 2, 2]));
        let g = tape.input(Tensor::zeros(vec![2]));
        let b = tape.input(Tensor::zeros(vec![2]));
        assert!(tape.batch_norm_train(x, g, b, 1e-5).is_err());
    }
}
