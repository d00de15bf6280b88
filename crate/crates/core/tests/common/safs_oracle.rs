//! Scale-adaptive selection fixtures and a scalar re-derivation.

use safseg::nn::{Ctx, Linear, Safs, SafsState};
use safseg::{Mode, ParamStore, Tensor};

pub fn build(n: usize, c: usize, seed: u64) -> (ParamStore<f64>, Safs) {
    let mut store = ParamStore::new();
    let mut r = super::rng(seed);
    let safs = Safs::new(&mut store, "safs", n, c, 2, &mut r).unwrap();
    // Non-zero biases so every parameter matters.
    for p in store.iter_mut() {
        if p.value.ndim() == 1 {
            let fill = super::uniform(p.value.shape(), -0.5, 0.5, &mut r);
            p.value = fill;
        }
    }
    (store, safs)
}

pub fn run(store: &ParamStore<f64>, safs: &Safs, maps: &[Tensor<f64>]) -> (Tensor<f64>, SafsState<f64>) {
    let mut cx = Ctx::new(store, Mode::Eval);
    let vars: Vec<_> = maps.iter().map(|m| cx.tape.constant(m.clone())).collect();
    let (out, state) = safs.forward(&mut cx, &vars).unwrap();
    (cx.tape.value(out).clone(), state)
}

fn linear(store: &ParamStore<f64>, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.weight).value.data();
    let b = store.get(l.bias.unwrap()).value.data();
    (0..l.out_features).map(|o| b[o] + (0..l.in_features).map(|i| w[o * l.in_features + i] * x[i]).sum::<f64>()).collect()
}

/// Scalar re-derivation: squeeze the summed maps, shared reduction with
/// ReLU, one projection per branch, softmax across branches per channel.
pub fn oracle(store: &ParamStore<f64>, safs: &Safs, maps: &[Tensor<f64>]) -> Tensor<f64> {
    let s = maps[0].shape().to_vec();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; maps[0].numel()];
    for bi in 0..b {
        let p: Vec<f64> = (0..c)
            .map(|ch| {
                let base = (bi * c + ch) * hw;
                (0..hw).map(|k| maps.iter().map(|m| m.data()[base + k]).sum::<f64>()).sum::<f64>() / hw as f64
            })
            .collect();
        let z: Vec<f64> = linear(store, &safs.reduce, &p).into_iter().map(|v| v.max(0.0)).collect();
        let logits: Vec<Vec<f64>> = safs.branches.iter().map(|l| linear(store, l, &z)).collect();
        for ch in 0..c {
            let m = logits.iter().map(|l| l[ch]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l[ch] - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            let base = (bi * c + ch) * hw;
            for k in 0..hw {
                out[base + k] = maps.iter().zip(&e).map(|(mp, ei)| ei / tot * mp.data()[base + k]).sum();
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

pub fn maps(n: usize, shape: &[usize], seed: u64) -> Vec<Tensor<f64>> {
    let mut r = super::rng(seed);
    (0..n).map(|_| super::uniform(shape, -2.0, 2.0, &mut r)).collect()
}
