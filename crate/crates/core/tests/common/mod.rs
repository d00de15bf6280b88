//! Independent loop-based oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad_suite;
pub mod safs_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safseg::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

/// Values bounded away from zero so relu kinks stay out of reach of the
/// finite-difference step.
pub fn off_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.random_range(0.05..1.0);
        if r.random::<bool>() { m } else { -m }
    })
}

/// Distinct values so max pooling has no ties.
pub fn distinct(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        v.swap(i, r.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub fn binary(n: usize, density: f64, r: &mut ChaCha8Rng) -> Vec<u8> {
    (0..n).map(|_| u8::from(r.random::<f64>() < density)).collect()
}

fn at(t: &Tensor<f64>, i: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((i[0] * s[1] + i[1]) * s[2] + i[2]) * s[3] + i[3]]
}

pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let (bn, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; bn * co * ho * wo];
    for n in 0..bn {
        for o in 0..co {
            for r in 0..ho {
                for c in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..ci {
                        for u in 0..k {
                            for v in 0..k {
                                let (y, xx) = ((r * stride + u) as isize - pad as isize, (c * stride + v) as isize - pad as isize);
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    acc += at(x, [n, i, y as usize, xx as usize]) * at(w, [o, i, u, v]);
                                }
                            }
                        }
                    }
                    out[((n * co + o) * ho + r) * wo + c] = acc;
                }
            }
        }
    }
    Tensor::new(vec![bn, co, ho, wo], out).unwrap()
}

fn map_planes(x: &Tensor<f64>, ho: usize, wo: usize, f: impl Fn(&dyn Fn(usize, usize) -> f64, usize, usize) -> f64) -> Tensor<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for p in 0..b * c {
        let get = |r: usize, col: usize| x.data()[(p * h + r) * w + col];
        for r in 0..ho {
            for col in 0..wo {
                out.push(f(&get, r, col));
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out).unwrap()
}

pub fn max_pool2(x: &Tensor<f64>) -> Tensor<f64> {
    map_planes(x, x.shape()[2] / 2, x.shape()[3] / 2, |g, r, c| {
        g(2 * r, 2 * c).max(g(2 * r, 2 * c + 1)).max(g(2 * r + 1, 2 * c)).max(g(2 * r + 1, 2 * c + 1))
    })
}

pub fn avg_pool2(x: &Tensor<f64>) -> Tensor<f64> {
    map_planes(x, x.shape()[2] / 2, x.shape()[3] / 2, |g, r, c| {
        (g(2 * r, 2 * c) + g(2 * r, 2 * c + 1) + g(2 * r + 1, 2 * c) + g(2 * r + 1, 2 * c + 1)) / 4.0
    })
}

/// Bilinear 2x up-sampling, half-pixel centers, edge clamping.
pub fn upsample2(x: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    map_planes(x, 2 * h, 2 * w, |g, r, c| {
        let (r0, r1, fr) = coord(r, h);
        let (c0, c1, fc) = coord(c, w);
        let top = g(r0, c0) * (1.0 - fc) + g(r0, c1) * fc;
        let bot = g(r1, c0) * (1.0 - fc) + g(r1, c1) * fc;
        top * (1.0 - fr) + bot * fr
    })
}

pub fn fully_connected(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    Tensor::from_fn(vec![n, dout], |idx| {
        let (i, o) = (idx / dout, idx % dout);
        b.data()[o] + (0..din).map(|k| w.data()[o * din + k] * x.data()[i * din + k]).sum::<f64>()
    })
}

/// SSIM and contrast-structure terms of two `k x k` windows given as closures, uniform weights,
/// population statistics computed in two passes. Returns `(ssim, cs)`.
pub fn window_ssim(x: &dyn Fn(usize, usize) -> f64, y: &dyn Fn(usize, usize) -> f64, k: usize, c1: f64, c2: f64) -> (f64, f64) {
    let n = (k * k) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for u in 0..k {
        for v in 0..k {
            mx += x(u, v);
            my += y(u, v);
        }
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for u in 0..k {
        for v in 0..k {
            let (dx, dy) = (x(u, v) - mx, y(u, v) - my);
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
    let cs = (2.0 * cxy + c2) / (vx + vy + c2);
    (lum * cs, cs)
}

/// Mean `(ssim, cs)` over every stride-1 window of two `h x w` maps.
pub fn mean_window_ssim(p: &[f64], g: &[f64], h: usize, w: usize, k: usize, c1: f64, c2: f64) -> (f64, f64) {
    let (mut s, mut cs) = (0.0, 0.0);
    let count = ((h - k + 1) * (w - k + 1)) as f64;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (a, b) = window_ssim(&|u, v| p[(r + u) * w + c + v], &|u, v| g[(r + u) * w + c + v], k, c1, c2);
            s += a;
            cs += b;
        }
    }
    (s / count, cs / count)
}

/// `1 - mean SSIM`, one window at a time.
pub fn brute_ssim_loss(p: &[f64], g: &[f64], h: usize, w: usize, k: usize, c1: f64, c2: f64) -> f64 {
    1.0 - mean_window_ssim(p, g, h, w, k, c1, c2).0
}

fn halve(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let t = Tensor::new(vec![1, 1, h, w], x.to_vec()).unwrap();
    avg_pool2(&t).into_data()
}

/// Two-scale MS-SSIM loss with weights `(w0, w1)`: contrast-structure mean
/// at full resolution, SSIM mean after one 2x mean pool.
#[allow(clippy::too_many_arguments)]
pub fn brute_ms_ssim_loss_2(p: &[f64], g: &[f64], h: usize, w: usize, k: usize, c1: f64, c2: f64, wts: (f64, f64)) -> f64 {
    let (_, cs0) = mean_window_ssim(p, g, h, w, k, c1, c2);
    let (p1, g1) = (halve(p, h, w), halve(g, h, w));
    let (s1, _) = mean_window_ssim(&p1, &g1, h / 2, w / 2, k, c1, c2);
    1.0 - cs0.max(1e-6).powf(wts.0) * s1.max(1e-6).powf(wts.1)
}

/// `(tp, fp, tn, fn)` by pixel counting.
pub fn count(pred: &[u8], truth: &[u8]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => c.0 += 1,
            (1, 0) => c.1 += 1,
            (0, 0) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}

pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 { 1.0 } else { num as f64 / den as f64 }
}
