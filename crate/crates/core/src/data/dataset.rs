//! Dataset directories and image file IO.
//!
//! A dataset directory holds `images/<id>.png` (8-bit RGB),
//! `masks/<id>.png` (8-bit gray, 0 or 255) and `manifest.json`:
//!
//! ```json
//! { "k": 5, "items": [ { "id": "img0000", "wsi": "wsi0000", "fold": 3 } ] }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::folds::round_robin;
use super::synth::SynthSample;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub wsi: String,
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub k: usize,
    pub items: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// One raster with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub wsi: String,
    pub fold: usize,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[H, W]` binary.
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.mask.shape()[0], self.mask.shape()[1])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub samples: Vec<Sample>,
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = h * w;
    let mut data = vec![0f32; 3 * n];
    for (i, p) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * n + i] = p.0[ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_rgb(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(shape_err(format!("expected a [3, H, W] image, got {s:?}"))),
    };
    if c != 3 {
        return Err(shape_err(format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = image.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([quantize(d[i]), quantize(d[n + i]), quantize(d[2 * n + i])])
    });
    img.save(path)?;
    Ok(())
}

/// Reads a binary mask; pixels above mid-gray are foreground.
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::new(vec![h, w], img.pixels().map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 }).collect())
}

pub fn write_mask(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let [h, w] = *mask.shape() else {
        return Err(shape_err(format!("expected a [H, W] mask, got {:?}", mask.shape())));
    };
    let d = mask.data();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([if d[y as usize * w + x as usize] >= 0.5 { 255 } else { 0 }]));
    img.save(path)?;
    Ok(())
}

/// Reads any PNG as `[C, H, W]` values in `[0, 1]` at its native bit depth;
/// gray images give one channel, everything else three.
pub fn read_map(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = h * w;
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let mut data = vec![0f32; 3 * n];
        for (i, p) in rgb.pixels().enumerate() {
            for ch in 0..3 {
                data[ch * n + i] = p.0[ch];
            }
        }
        Tensor::new(vec![3, h, w], data)
    } else {
        let gray = img.to_luma16();
        Tensor::new(vec![1, h, w], gray.pixels().map(|p| p.0[0] as f32 / 65535.0).collect())
    }
}

/// Writes `[H, W]`, `[1, H, W]` or `[3, H, W]` values in `[0, 1]` as a
/// 16-bit PNG.
pub fn write_map16(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = match *map.shape() {
        [h, w] => (1, h, w),
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => return Err(shape_err(format!("cannot write a map of shape {s:?} as PNG"))),
    };
    let q = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let d = map.data();
    let n = h * w;
    if c == 1 {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([q(d[y as usize * w + x as usize])]));
        img.save(path)?;
    } else {
        let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([q(d[i]), q(d[n + i]), q(d[2 * n + i])])
        });
        img.save(path)?;
    }
    Ok(())
}

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.png"))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.png"))
}

impl Dataset {
    /// Wraps synthetic samples, grouping `per_wsi` consecutive images into
    /// one slide and assigning slides to `k` folds with a seeded shuffle.
    pub fn from_synth(samples: Vec<SynthSample>, per_wsi: usize, k: usize, seed: u64) -> Self {
        let per_wsi = per_wsi.max(1);
        let wsis: Vec<String> = (0..samples.len()).map(|i| format!("wsi{:04}", i / per_wsi)).collect();
        let folds = round_robin(&wsis, k, seed);
        let samples = samples
            .into_iter()
            .zip(wsis)
            .enumerate()
            .map(|(i, (s, wsi))| Sample {
                id: format!("img{i:04}"),
                fold: folds.fold_of(&wsi).expect("every slide has a fold"),
                wsi,
                image: s.image,
                mask: s.mask,
            })
            .collect();
        Dataset { k, samples }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            k: self.k,
            items: self
                .samples
                .iter()
                .map(|s| ManifestEntry { id: s.id.clone(), wsi: s.wsi.clone(), fold: s.fold })
                .collect(),
        }
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root.join("images"))?;
        fs::create_dir_all(root.join("masks"))?;
        for s in &self.samples {
            write_rgb(&image_path(root, &s.id), &s.image)?;
            write_mask(&mask_path(root, &s.id), &s.mask)?;
        }
        fs::write(root.join("manifest.json"), self.manifest().to_json())?;
        Ok(())
    }

    pub fn read_manifest(root: &Path) -> Result<Manifest> {
        let path = root.join("manifest.json");
        if !path.exists() {
            return Err(Error::Missing(vec![path.display().to_string()]));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Loads every listed raster; missing files are reported together.
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(root)?;
        let missing: Vec<String> = manifest
            .items
            .iter()
            .flat_map(|e| [image_path(root, &e.id), mask_path(root, &e.id)])
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        let mut samples = Vec::with_capacity(manifest.items.len());
        for e in manifest.items {
            let image = read_rgb(&image_path(root, &e.id))?;
            let mask = read_mask(&mask_path(root, &e.id))?;
            if image.shape()[1..] != *mask.shape() {
                return Err(shape_err(format!("image and mask of `{}` differ in size", e.id)));
            }
            if e.fold >= manifest.k.max(1) {
                return Err(Error::Format(format!("`{}` has fold {} of {}", e.id, e.fold, manifest.k)));
            }
            samples.push(Sample { id: e.id, wsi: e.wsi, fold: e.fold, image, mask });
        }
        Ok(Dataset { k: manifest.k, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices outside and inside fold `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.samples[i].fold != fold)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { k: self.k, samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }
}
