//! Finite-difference gradient checks for every op, loss and block.

use safseg::autodiff::{check_gradients, check_param_gradients};
use safseg::losses::{ce_loss, combined_loss, iou_loss, ms_ssim_loss, ssim_loss, LossSpec, LossTerm, SsimConfig};
use safseg::nn::{BlockConfig, BlockKind, ConvBlock, Ctx, Safs, SeBlock};
use safseg::{Mode, Model, NetworkConfig, ParamStore, Result, Tape, Tensor, Var};

use super::{distinct, off_zero, rng, uniform};

pub const H: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;
/// Step for the whole-network check: ReLU and max-pool kinks can sit within
/// 1e-6 of a sample point.
pub const NET_H: f64 = 1e-7;
pub const SEEDS: u64 = 20;

type Inputs = fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor<f64>>;
type Graph = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Inputs,
    pub f: Graph,
}

/// Sum of `y` weighted by fixed non-uniform coefficients, so that outputs
/// whose plain sum is constant (softmax, batch norm) still get a signal.
pub fn wsum(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let w = Tensor::from_fn(shape, |i| 0.3 + (i as f64 * 0.618_033_988_7).fract());
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn binary_mask(r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(shape, 0.0, 1.0, r).map(|v| if v < 0.5 { 0.0 } else { 1.0 })
}

pub fn op_cases() -> Vec<Case> {
    vec![
        Case { name: "add", inputs: |r| vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], f: |t, v| { let y = t.add(v[0], v[1])?; wsum(t, y) } },
        Case { name: "sub", inputs: |r| vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], f: |t, v| { let y = t.sub(v[0], v[1])?; wsum(t, y) } },
        Case { name: "mul", inputs: |r| vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], f: |t, v| { let y = t.mul(v[0], v[1])?; wsum(t, y) } },
        Case { name: "div", inputs: |r| vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], 0.5, 2.0, r)], f: |t, v| { let y = t.div(v[0], v[1])?; wsum(t, y) } },
        Case { name: "scale", inputs: |r| vec![uniform(&[5], -1.0, 1.0, r)], f: |t, v| { let y = t.scale(v[0], -1.7); wsum(t, y) } },
        Case { name: "offset", inputs: |r| vec![uniform(&[5], -1.0, 1.0, r)], f: |t, v| { let y = t.offset(v[0], 0.4); let y = t.mul(y, y)?; wsum(t, y) } },
        Case { name: "neg", inputs: |r| vec![uniform(&[5], -1.0, 1.0, r)], f: |t, v| { let y = t.neg(v[0]); wsum(t, y) } },
        Case { name: "log", inputs: |r| vec![uniform(&[6], 0.2, 3.0, r)], f: |t, v| { let y = t.log(v[0]); wsum(t, y) } },
        Case { name: "powf", inputs: |r| vec![uniform(&[6], 0.2, 3.0, r)], f: |t, v| { let y = t.powf(v[0], 0.37); wsum(t, y) } },
        Case {
            name: "clamp",
            inputs: |r| vec![off_zero(&[8], r).map(|v| v * 2.0)],
            f: |t, v| { let y = t.clamp(v[0], -0.999, 1.001); wsum(t, y) },
        },
        Case { name: "relu", inputs: |r| vec![off_zero(&[8], r)], f: |t, v| { let y = t.relu(v[0]); wsum(t, y) } },
        Case { name: "sigmoid", inputs: |r| vec![uniform(&[8], -4.0, 4.0, r)], f: |t, v| { let y = t.sigmoid(v[0]); wsum(t, y) } },
        Case { name: "sum", inputs: |r| vec![uniform(&[2, 4], -1.0, 1.0, r)], f: |t, v| { let s = t.sum(v[0]); t.mul(s, s) } },
        Case { name: "mean", inputs: |r| vec![uniform(&[2, 4], -1.0, 1.0, r)], f: |t, v| { let s = t.mean(v[0]); t.mul(s, s) } },
        Case { name: "softmax", inputs: |r| vec![uniform(&[2, 3, 4], -2.0, 2.0, r)], f: |t, v| { let y = t.softmax(v[0], 1)?; wsum(t, y) } },
        Case {
            name: "sum_per_sample",
            inputs: |r| vec![uniform(&[3, 2, 2], -1.0, 1.0, r)],
            f: |t, v| { let s = t.sum_per_sample(v[0])?; let s = t.mul(s, s)?; wsum(t, s) },
        },
        Case { name: "reshape", inputs: |r| vec![uniform(&[2, 6], -1.0, 1.0, r)], f: |t, v| { let y = t.reshape(v[0], &[3, 4])?; wsum(t, y) } },
        Case {
            name: "concat",
            inputs: |r| vec![uniform(&[2, 1, 3], -1.0, 1.0, r), uniform(&[2, 2, 3], -1.0, 1.0, r)],
            f: |t, v| { let y = t.concat(&[v[0], v[1]], 1)?; wsum(t, y) },
        },
        Case { name: "narrow", inputs: |r| vec![uniform(&[2, 5, 2], -1.0, 1.0, r)], f: |t, v| { let y = t.narrow(v[0], 1, 1, 3)?; wsum(t, y) } },
        Case {
            name: "conv2d",
            inputs: |r| vec![uniform(&[2, 2, 5, 5], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -0.5, 0.5, r), uniform(&[3], -0.5, 0.5, r)],
            f: |t, v| { let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?; wsum(t, y) },
        },
        Case {
            name: "conv2d_strided",
            inputs: |r| vec![uniform(&[1, 2, 6, 6], -1.0, 1.0, r), uniform(&[2, 2, 3, 3], -0.5, 0.5, r)],
            f: |t, v| { let y = t.conv2d(v[0], v[1], None, 2, 0)?; wsum(t, y) },
        },
        Case {
            name: "fully_connected",
            inputs: |r| vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[2, 4], -1.0, 1.0, r), uniform(&[2], -1.0, 1.0, r)],
            f: |t, v| { let y = t.fully_connected(v[0], v[1], Some(v[2]))?; wsum(t, y) },
        },
        Case {
            name: "batch_norm_train",
            inputs: |r| vec![uniform(&[2, 3, 3, 3], -1.0, 1.0, r), uniform(&[3], 0.5, 1.5, r), uniform(&[3], -0.5, 0.5, r)],
            f: |t, v| { let (y, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?; wsum(t, y) },
        },
        Case {
            name: "batch_norm_eval",
            inputs: |r| vec![uniform(&[2, 3, 2, 2], -1.0, 1.0, r), uniform(&[3], 0.5, 1.5, r), uniform(&[3], -0.5, 0.5, r)],
            f: |t, v| {
                let mean = Tensor::from_f64(vec![3], &[0.1, -0.2, 0.3])?;
                let var = Tensor::from_f64(vec![3], &[0.5, 1.5, 2.0])?;
                let y = t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                wsum(t, y)
            },
        },
        Case { name: "max_pool2", inputs: |r| vec![distinct(&[2, 2, 4, 4], r)], f: |t, v| { let y = t.max_pool2(v[0])?; wsum(t, y) } },
        Case { name: "avg_pool2", inputs: |r| vec![uniform(&[1, 2, 4, 6], -1.0, 1.0, r)], f: |t, v| { let y = t.avg_pool2(v[0])?; wsum(t, y) } },
        Case {
            name: "upsample_bilinear2",
            inputs: |r| vec![uniform(&[1, 2, 3, 4], -1.0, 1.0, r)],
            f: |t, v| { let y = t.upsample_bilinear2(v[0])?; wsum(t, y) },
        },
        Case {
            name: "global_avg_pool",
            inputs: |r| vec![uniform(&[2, 3, 3, 2], -1.0, 1.0, r)],
            f: |t, v| { let y = t.global_avg_pool(v[0])?; let y = t.mul(y, y)?; wsum(t, y) },
        },
        Case {
            name: "channel_scale",
            inputs: |r| vec![uniform(&[2, 3, 2, 2], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)],
            f: |t, v| { let y = t.channel_scale(v[0], v[1])?; wsum(t, y) },
        },
        Case {
            name: "window_filter",
            inputs: |r| vec![uniform(&[1, 2, 6, 7], -1.0, 1.0, r)],
            f: |t, v| { let y = t.window_filter(v[0], &[0.2, 0.5, 0.3])?; wsum(t, y) },
        },
    ]
}

fn seg_pair(r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Vec<Tensor<f64>> {
    vec![uniform(shape, 0.05, 0.95, r), binary_mask(r, shape)]
}

pub fn loss_cases() -> Vec<Case> {
    vec![
        Case { name: "ce_loss", inputs: |r| seg_pair(r, &[2, 1, 4, 4]), f: |t, v| ce_loss(t, v[0], v[1]) },
        Case { name: "ssim_loss", inputs: |r| seg_pair(r, &[1, 1, 16, 16]), f: |t, v| ssim_loss(t, v[0], v[1], &SsimConfig::default()) },
        Case {
            name: "ssim_loss_gaussian",
            inputs: |r| seg_pair(r, &[1, 1, 13, 13]),
            f: |t, v| {
                let cfg = SsimConfig { window: safseg::losses::Window::Gaussian(1.5), ..SsimConfig::default() };
                ssim_loss(t, v[0], v[1], &cfg)
            },
        },
        Case {
            name: "ms_ssim_loss",
            inputs: |r| seg_pair(r, &[1, 1, 22, 22]),
            f: |t, v| ms_ssim_loss(t, v[0], v[1], &SsimConfig::default().with_scales(2)),
        },
        Case { name: "iou_loss", inputs: |r| seg_pair(r, &[2, 1, 4, 4]), f: |t, v| iou_loss(t, v[0], v[1]) },
        Case {
            name: "combined_loss",
            inputs: |r| seg_pair(r, &[1, 1, 12, 12]),
            f: |t, v| {
                let spec = LossSpec { terms: vec![(LossTerm::Ce, 1.0), (LossTerm::Ssim, 0.5), (LossTerm::Iou, 2.0)] };
                Ok(combined_loss(t, v[0], v[1], &spec, &SsimConfig::default())?.total)
            },
        },
    ]
}

/// Worst relative error of `case` over `seeds` seeds.
pub fn run_case(case: &Case, seeds: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut r = rng(seed * 7919 + case.name.len() as u64);
        let inputs = (case.inputs)(&mut r);
        worst = worst.max(check_gradients(case.f, &inputs, H)?);
    }
    Ok(worst)
}

fn with_ctx<'s>(tape: &mut Tape<f64>, store: &'s ParamStore<f64>, mode: Mode) -> Ctx<'s, f64> {
    Ctx { tape: std::mem::replace(tape, Tape::new()), store, mode }
}

/// Parameter and input gradients of a conv block (`kind`) optionally
/// followed by SE attention, in train mode.
pub fn block_case(kind: BlockKind, se: bool, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let block = ConvBlock::new(&mut store, "b", BlockConfig::new(2, 3, kind), &mut r)?;
    let att = if se { Some(SeBlock::new(&mut store, "se", 3, 2, &mut r)?) } else { None };
    let x = off_zero(&[2, 2, 4, 4], &mut r);
    let f = |t: &mut Tape<f64>, s: &ParamStore<f64>, xv: Option<Var>| -> Result<Var> {
        let mut cx = with_ctx(t, s, Mode::Train);
        let xi = xv.unwrap_or_else(|| cx.tape.constant(x.clone()));
        let mut y = block.forward(&mut cx, xi)?;
        if let Some(a) = &att {
            y = a.forward(&mut cx, y)?;
        }
        let out = wsum(&mut cx.tape, y)?;
        *t = cx.tape;
        Ok(out)
    };
    let p = check_param_gradients(&mut store, |t, s| f(t, s, None), H, 1)?;
    let i = check_gradients(|t, v| f(t, &store, Some(v[0])), std::slice::from_ref(&x), H)?;
    Ok(p.max(i))
}

/// Gradients of scale-adaptive selection with `n` branches, loss `sum(F̂)`
/// weighted, with respect to its parameters and every input map.
pub fn safs_case(n: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let safs = Safs::new(&mut store, "safs", n, 4, 2, &mut r)?;
    let maps: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut r)).collect();
    let f = |t: &mut Tape<f64>, s: &ParamStore<f64>, vars: Option<&[Var]>| -> Result<Var> {
        let mut cx = with_ctx(t, s, Mode::Train);
        let vs: Vec<Var> = match vars {
            Some(v) => v.to_vec(),
            None => maps.iter().map(|m| cx.tape.constant(m.clone())).collect(),
        };
        let (fused, _) = safs.forward(&mut cx, &vs)?;
        let out = wsum(&mut cx.tape, fused)?;
        *t = cx.tape;
        Ok(out)
    };
    let p = check_param_gradients(&mut store, |t, s| f(t, s, None), H, 1)?;
    let i = check_gradients(|t, v| f(t, &store, Some(v)), &maps, H)?;
    Ok(p.max(i))
}

/// End-to-end check of a tiny adaptive-fusion network under the combined
/// loss, probing every `stride`-th parameter and every input pixel.
pub fn network_case(seed: u64, stride: usize, h: f64) -> Result<f64> {
    let cfg = NetworkConfig::unet(16, 2, 4).with_fusion(safseg::Fusion::Adaptive, 2);
    let model = Model::<f64>::build(&cfg, seed)?;
    let mut r = rng(seed + 100);
    let x = uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut r);
    let g = binary_mask(&mut r, &[2, 1, 16, 16]);
    let spec = LossSpec::new(&LossTerm::ALL);
    let ssim = SsimConfig::default();
    let f = |t: &mut Tape<f64>, s: &ParamStore<f64>, xv: Option<Var>| -> Result<Var> {
        let mut cx = with_ctx(t, s, Mode::Train);
        let xi = xv.unwrap_or_else(|| cx.tape.constant(x.clone()));
        let gi = cx.tape.constant(g.clone());
        let out = model.forward_graph(&mut cx, xi)?;
        let loss = combined_loss(&mut cx.tape, out.probs, gi, &spec, &ssim)?.total;
        *t = cx.tape;
        Ok(loss)
    };
    let mut store = model.params().clone();
    let p = check_param_gradients(&mut store, |t, s| f(t, s, None), h, stride)?;
    let i = check_gradients(|t, v| f(t, &store, Some(v[0])), std::slice::from_ref(&x), h)?;
    Ok(p.max(i))
}
