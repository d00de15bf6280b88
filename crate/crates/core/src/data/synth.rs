//! Synthetic tissue-like images with elliptical tumour regions.
//!
//! Tumour blobs carry a distinct stain colour and fine-grained texture.
//! Distractor blobs share a similar colour shift but keep the smooth
//! background texture, so colour alone does not separate the classes.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub const MIN_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    /// `[3, S, S]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[S, S]` with values 0 or 1.
    pub mask: Tensor<f32>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f32,
    cx: f32,
    a: f32,
    b: f32,
    cos: f32,
    sin: f32,
}

impl Ellipse {
    fn random<R: Rng>(rng: &mut R, s: f32, rmin: f32, rmax: f32) -> Self {
        let theta = rng.random_range(0.0..std::f32::consts::PI);
        Ellipse {
            cy: rng.random_range(0.2 * s..0.8 * s),
            cx: rng.random_range(0.2 * s..0.8 * s),
            a: rng.random_range(rmin * s..rmax * s),
            b: rng.random_range(rmin * s..rmax * s),
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f32 + 0.5 - self.cy;
        let dx = x as f32 + 0.5 - self.cx;
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Smooth field from a few long-wavelength plane waves, roughly in `[-1, 1]`.
struct Waves(Vec<(f32, f32, f32)>);

impl Waves {
    fn random<R: Rng>(rng: &mut R, s: f32, n: usize, min_period: f32, max_period: f32) -> Self {
        Waves(
            (0..n)
                .map(|_| {
                    let dir = rng.random_range(0.0..TAU);
                    let k = TAU / rng.random_range(min_period * s..max_period * s);
                    (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..TAU))
                })
                .collect(),
        )
    }

    fn at(&self, y: usize, x: usize) -> f32 {
        let v: f32 = self.0.iter().map(|&(ky, kx, ph)| (ky * y as f32 + kx * x as f32 + ph).sin()).sum();
        v / self.0.len() as f32
    }
}

fn jitter<R: Rng>(rng: &mut R, base: [f32; 3], d: f32) -> [f32; 3] {
    base.map(|c| c + rng.random_range(-d..d))
}

/// One sample; deterministic in `(seed, index)`.
pub fn synth_sample(size: usize, seed: u64, index: u64) -> Result<SynthSample> {
    if size < MIN_SIZE {
        return Err(config_err(format!("synthetic images must be at least {MIN_SIZE} pixels, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f32;

    let background = jitter(&mut rng, [0.86, 0.70, 0.80], 0.04);
    let stain = jitter(&mut rng, [0.56, 0.34, 0.64], 0.04);
    let smooth = Waves::random(&mut rng, s, 3, 0.4, 1.0);
    let stripes = Waves::random(&mut rng, 1.0, 2, 3.0, 5.0);
    let tumours: Vec<Ellipse> = (0..rng.random_range(1..=4)).map(|_| Ellipse::random(&mut rng, s, 0.12, 0.28)).collect();
    let distractors: Vec<Ellipse> =
        (0..rng.random_range(0..=3)).map(|_| Ellipse::random(&mut rng, s, 0.05, 0.12)).collect();

    let n = size * size;
    let mut image = vec![0f32; 3 * n];
    let mut mask = vec![0f32; n];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let fine: f32 = rng.random_range(-1.0..1.0);
            let low = smooth.at(y, x);
            let (color, texture) = if tumours.iter().any(|e| e.contains(y, x)) {
                mask[i] = 1.0;
                (stain, 0.10 * fine + 0.06 * stripes.at(y, x))
            } else if distractors.iter().any(|e| e.contains(y, x)) {
                (stain, 0.05 * low + 0.015 * fine)
            } else {
                (background, 0.05 * low + 0.015 * fine)
            };
            for (ch, &c) in color.iter().enumerate() {
                image[ch * n + i] = (c + texture).clamp(0.0, 1.0);
            }
        }
    }
    Ok(SynthSample {
        image: Tensor::new(vec![3, size, size], image)?,
        mask: Tensor::new(vec![size, size], mask)?,
    })
}

pub fn synth_generate(n: usize, size: usize, seed: u64) -> Result<Vec<SynthSample>> {
    (0..n as u64).map(|i| synth_sample(size, seed, i)).collect()
}
