//! Pooling, interpolation and per-channel spatial ops on `[B, C, H, W]` maps.

use super::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Source index pairs and weights for 2x bilinear up-sampling along one axis
/// (half-pixel centers, corners not aligned).
pub(crate) fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn max_pool2_backward<T: Real>(x: &Tensor<T>, argmax: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let d = dx.data_mut();
    for (&src, &gv) in argmax.iter().zip(g.data()) {
        d[src] = d[src] + gv;
    }
    dx
}

pub(crate) fn avg_pool2_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4().unwrap();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let d = dx.data_mut();
    for plane in 0..b * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = g.data()[(plane * ho + oy) * wo + ox] * quarter;
                for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = (plane * h + 2 * oy + dy) * w + 2 * ox + dxo;
                    d[i] = d[i] + gv;
                }
            }
        }
    }
    dx
}

pub(crate) fn upsample2_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4().unwrap();
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let d = dx.data_mut();
    for plane in 0..b * c {
        let base = plane * h * w;
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::of(1.0 - ly), T::of(ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::of(1.0 - lx), T::of(lx));
                let gv = g.data()[(plane * 2 * h + oy) * 2 * w + ox];
                d[base + y0 * w + x0] = d[base + y0 * w + x0] + gv * wy0 * wx0;
                d[base + y0 * w + x1] = d[base + y0 * w + x1] + gv * wy0 * wx1;
                d[base + y1 * w + x0] = d[base + y1 * w + x0] + gv * wy1 * wx0;
                d[base + y1 * w + x1] = d[base + y1 * w + x1] + gv * wy1 * wx1;
            }
        }
    }
    dx
}

pub(crate) fn global_avg_pool_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let inv = T::one() / T::of(hw as f64);
    Tensor::from_fn(x.shape().to_vec(), |i| g.data()[i / hw] * inv)
}

pub(crate) fn channel_scale_backward<T: Real>(x: &Tensor<T>, s: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (_, _, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let dx = Tensor::from_fn(x.shape().to_vec(), |i| g.data()[i] * s.data()[i / hw]);
    let mut ds = Tensor::zeros(s.shape().to_vec());
    for (plane, d) in ds.data_mut().iter_mut().enumerate() {
        let r = plane * hw..(plane + 1) * hw;
        *d = g.data()[r.clone()].iter().zip(&x.data()[r]).map(|(&a, &b)| a * b).sum();
    }
    (dx, ds)
}

fn filter_dims(h: usize, w: usize, k: usize) -> (usize, usize) {
    (h + 1 - k, w + 1 - k)
}

pub(crate) fn window_filter_forward<T: Real>(x: &Tensor<T>, taps: &[T]) -> Tensor<T> {
    let (b, c, h, w) = x.dims4().unwrap();
    let k = taps.len();
    let (ho, wo) = filter_dims(h, w, k);
    let mut tmp = vec![T::zero(); h * wo];
    let mut out = vec![T::zero(); b * c * ho * wo];
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for ox in 0..wo {
                let row = &src[y * w + ox..y * w + ox + k];
                tmp[y * wo + ox] = row.iter().zip(taps).map(|(&v, &t)| v * t).sum();
            }
        }
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = (0..k).map(|i| tmp[(oy + i) * wo + ox] * taps[i]).sum();
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out).unwrap()
}

pub(crate) fn window_filter_backward<T: Real>(x: &Tensor<T>, taps: &[T], g: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4().unwrap();
    let k = taps.len();
    let (ho, wo) = filter_dims(h, w, k);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dtmp = vec![T::zero(); h * wo];
    for plane in 0..b * c {
        dtmp.fill(T::zero());
        let gp = &g.data()[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = gp[oy * wo + ox];
                for (i, &t) in taps.iter().enumerate() {
                    dtmp[(oy + i) * wo + ox] = dtmp[(oy + i) * wo + ox] + gv * t;
                }
            }
        }
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for ox in 0..wo {
                let gv = dtmp[y * wo + ox];
                for (j, &t) in taps.iter().enumerate() {
                    dst[y * w + ox + j] = dst[y * w + ox + j] + gv * t;
                }
            }
        }
    }
    dx
}

impl<T: Real> Tape<T> {
    /// 2x2 max pooling with stride 2. Ties route the gradient to the first
    /// maximum in row-major window order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, h, w) = xv.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("max_pool2 needs even spatial dims, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (plane * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (plane * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if xv.data()[i] > xv.data()[best] {
                            best = i;
                        }
                    }
                    out.push(xv.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![b, c, ho, wo], out)?;
        Ok(self.derive(value, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// 2x2 mean pooling with stride 2; a trailing odd row/column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, h, w) = xv.dims4()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(shape_err(format!("avg_pool2 needs at least 2x2 input, got {h}x{w}")));
        }
        let quarter = T::of(0.25);
        let value = Tensor::from_fn(vec![b, c, ho, wo], |i| {
            let (plane, rest) = (i / (ho * wo), i % (ho * wo));
            let (oy, ox) = (rest / wo, rest % wo);
            let at = |dy: usize, dx: usize| xv.data()[(plane * h + 2 * oy + dy) * w + 2 * ox + dx];
            (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter
        });
        Ok(self.derive(value, Op::AvgPool2(x), &[x]))
    }

    /// 2x bilinear up-sampling (corners not aligned).
    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, h, w) = xv.dims4()?;
        let (ty, tx) = (upsample_taps(h), upsample_taps(w));
        let mut out = Vec::with_capacity(b * c * 4 * h * w);
        for plane in 0..b * c {
            let src = &xv.data()[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, ly) in &ty {
                let (wy0, wy1) = (T::of(1.0 - ly), T::of(ly));
                for &(x0, x1, lx) in &tx {
                    let (wx0, wx1) = (T::of(1.0 - lx), T::of(lx));
                    let top = src[y0 * w + x0] * wx0 + src[y0 * w + x1] * wx1;
                    let bottom = src[y1 * w + x0] * wx0 + src[y1 * w + x1] * wx1;
                    out.push(top * wy0 + bottom * wy1);
                }
            }
        }
        let value = Tensor::new(vec![b, c, 2 * h, 2 * w], out)?;
        Ok(self.derive(value, Op::Upsample2(x), &[x]))
    }

    /// Spatial mean per channel: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, h, w) = xv.dims4()?;
        let hw = h * w;
        if hw == 0 {
            return Err(shape_err("global_avg_pool over an empty map"));
        }
        let n = T::of(hw as f64);
        let data = xv.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() / n).collect();
        let value = Tensor::new(vec![b, c], data)?;
        Ok(self.derive(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// `x[b, c, :, :] * s[b, c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if self.shape(s) != [b, c] {
            return Err(shape_err(format!("channel_scale: scale {:?} does not match [{b}, {c}]", self.shape(s))));
        }
        let hw = h * w;
        let (xv, sv) = (self.value(x), self.value(s));
        let value = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] * sv.data()[i / hw]);
        Ok(self.derive(value, Op::ChannelScale { x, s }, &[x, s]))
    }

    /// Valid-mode separable window filter: each output is the weighted sum of
    /// a `K x K` window with weights `taps[i] * taps[j]`.
    pub fn window_filter(&mut self, x: Var, taps: &[f64]) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let k = taps.len();
        if k == 0 || h < k || w < k {
            return Err(shape_err(format!("window of {k} does not fit a {h}x{w} map")));
        }
        let taps: Vec<T> = taps.iter().map(|&t| T::of(t)).collect();
        let value = window_filter_forward(self.value(x), &taps);
        Ok(self.derive(value, Op::WindowFilter { x, taps }, &[x]))
    }
}
