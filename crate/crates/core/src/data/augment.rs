//! Training-time augmentation: quarter-turn rotations, flips and colour
//! jitter.

use rand::Rng;

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Probability of applying each transform.
    pub p: f64,
    pub rotate: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p: 0.5,
            rotate: true,
            hflip: true,
            vflip: true,
            brightness: 0.25,
            contrast: 0.25,
            saturation: 0.25,
            hue: 0.04,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { p: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(config_err(format!("augmentation probability must lie in [0, 1], got {}", self.p)));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} jitter must be non-negative, got {v}")));
            }
        }
        if self.hue > 0.5 {
            return Err(config_err("hue jitter cannot exceed 0.5"));
        }
        Ok(())
    }
}

/// A composition of a clockwise quarter-turn rotation, then a horizontal
/// and a vertical flip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Geometric {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Geometric {
    pub fn is_identity(&self) -> bool {
        self.quarter_turns.is_multiple_of(4) && !self.hflip && !self.vflip
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Input pixel that lands on output pixel `(r, c)` of an `h x w` input.
    pub fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = self.output_size(h, w);
        let r = if self.vflip { oh - 1 - r } else { r };
        let c = if self.hflip { ow - 1 - c } else { c };
        match self.quarter_turns % 4 {
            0 => (r, c),
            1 => (h - 1 - c, r),
            2 => (h - 1 - r, w - 1 - c),
            _ => (c, w - 1 - r),
        }
    }

    /// Applies the transform to every plane of a `[H, W]` or `[C, H, W]` map.
    pub fn apply<T: Real>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            ref s => return Err(shape_err(format!("cannot transform a map of shape {s:?}"))),
        };
        if self.is_identity() {
            return Ok(t.clone());
        }
        let (oh, ow) = self.output_size(h, w);
        let mut data = Vec::with_capacity(t.numel());
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let (sr, sc) = self.source(r, col, h, w);
                    data.push(t.data()[ch * h * w + sr * w + sc]);
                }
            }
        }
        let shape = if t.ndim() == 2 { vec![oh, ow] } else { vec![c, oh, ow] };
        Tensor::new(shape, data)
    }
}

pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Colour jitter factors; each is applied when present.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jitter {
    pub brightness: Option<f32>,
    pub contrast: Option<f32>,
    pub saturation: Option<f32>,
    pub hue: Option<f32>,
}

impl Jitter {
    /// Applies the factors to a `[3, H, W]` image and clamps to `[0, 1]`.
    pub fn apply(&self, image: &mut Tensor<f32>) -> Result<()> {
        let (c, h, w) = match *image.shape() {
            [c, h, w] => (c, h, w),
            ref s => return Err(shape_err(format!("colour jitter needs [3, H, W], got {s:?}"))),
        };
        if c != 3 {
            return Err(shape_err(format!("colour jitter needs 3 channels, got {c}")));
        }
        let n = h * w;
        let d = image.data_mut();
        let clamp = |v: f32| v.clamp(0.0, 1.0);
        if let Some(b) = self.brightness {
            d.iter_mut().for_each(|v| *v = clamp(*v * b));
        }
        if let Some(k) = self.contrast {
            let mean = (0..n).map(|i| gray(d[i], d[n + i], d[2 * n + i])).sum::<f32>() / n as f32;
            d.iter_mut().for_each(|v| *v = clamp(mean + (*v - mean) * k));
        }
        if let Some(s) = self.saturation {
            for i in 0..n {
                let g = gray(d[i], d[n + i], d[2 * n + i]);
                for ch in 0..3 {
                    d[ch * n + i] = clamp(g + (d[ch * n + i] - g) * s);
                }
            }
        }
        if let Some(shift) = self.hue {
            for i in 0..n {
                let (hh, s, v) = rgb_to_hsv(d[i], d[n + i], d[2 * n + i]);
                let (r, g, b) = hsv_to_rgb(hh + shift, s, v);
                d[i] = clamp(r);
                d[n + i] = clamp(g);
                d[2 * n + i] = clamp(b);
            }
        }
        Ok(())
    }
}

/// Draws one set of transforms. Each transform is applied with probability
/// `p`; a rotation picks uniformly among 90, 180 and 270 degrees.
pub fn sample_transforms<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> (Geometric, Jitter) {
    let mut hit = |enabled: bool| enabled && rng.random::<f64>() < cfg.p;
    let rotate = hit(cfg.rotate);
    let hflip = hit(cfg.hflip);
    let vflip = hit(cfg.vflip);
    let jitter = hit(cfg.brightness > 0.0 || cfg.contrast > 0.0 || cfg.saturation > 0.0 || cfg.hue > 0.0);
    let quarter_turns = if rotate { rng.random_range(1..4u8) } else { 0 };
    let geo = Geometric { quarter_turns, hflip, vflip };
    let mut factor = |delta: f64| (delta > 0.0).then(|| rng.random_range(1.0 - delta..=1.0 + delta) as f32);
    let jit = if jitter {
        Jitter {
            brightness: factor(cfg.brightness),
            contrast: factor(cfg.contrast),
            saturation: factor(cfg.saturation),
            hue: (cfg.hue > 0.0).then(|| rng.random_range(-cfg.hue..=cfg.hue) as f32),
        }
    } else {
        Jitter::default()
    };
    (geo, jit)
}

/// Augments an aligned `[3, H, W]` image and `[H, W]` / `[1, H, W]` mask.
/// Geometry applies to both; colour jitter to the image only.
pub fn augment<R: Rng>(
    image: &Tensor<f32>,
    mask: &Tensor<f32>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let ih = &image.shape()[image.ndim().saturating_sub(2)..];
    let mh = &mask.shape()[mask.ndim().saturating_sub(2)..];
    if ih != mh {
        return Err(shape_err(format!("image {:?} and mask {:?} are not aligned", image.shape(), mask.shape())));
    }
    let (geo, jit) = sample_transforms(cfg, rng);
    let mut img = geo.apply(image)?;
    jit.apply(&mut img)?;
    Ok((img, geo.apply(mask)?))
}
