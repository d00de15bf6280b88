//! Overlapping patch grids, patch extraction and stitching.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    /// `(height, width)` of the full image.
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub overlap: usize,
    /// Top-left `(row, col)` offsets in row-major order.
    pub positions: Vec<(usize, usize)>,
}

/// Offsets along one axis: multiples of the stride, plus a final offset
/// clamped to `dim - patch` when the stride does not land there exactly.
pub fn axis_offsets(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o <= last).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

pub fn make_grid(image_size: (usize, usize), patch_size: usize, overlap: usize) -> Result<TileGrid> {
    let (h, w) = image_size;
    if patch_size == 0 {
        return Err(config_err("patch size must be positive"));
    }
    if overlap >= patch_size {
        return Err(config_err(format!("overlap {overlap} must be smaller than the patch size {patch_size}")));
    }
    if patch_size > h.min(w) {
        return Err(shape_err(format!("patch {patch_size} does not fit a {h}x{w} image")));
    }
    let stride = patch_size - overlap;
    let rows = axis_offsets(h, patch_size, stride);
    let cols = axis_offsets(w, patch_size, stride);
    let positions = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(TileGrid { image_size, patch_size, overlap, positions })
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn stride(&self) -> usize {
        self.patch_size - self.overlap
    }

    /// Number of patches covering each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let (h, w) = self.image_size;
        let p = self.patch_size;
        let mut cov = vec![0u32; h * w];
        for &(r, c) in &self.positions {
            for y in r..r + p {
                for v in &mut cov[y * w + c..y * w + c + p] {
                    *v += 1;
                }
            }
        }
        cov
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: TileGrid = serde_json::from_str(s)?;
        let expected = make_grid(g.image_size, g.patch_size, g.overlap)?;
        if expected.positions != g.positions {
            return Err(crate::Error::Format("grid positions do not match its geometry".into()));
        }
        Ok(g)
    }
}

fn planes<T: Real>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err(format!("expected a [H, W] or [C, H, W] map, got {s:?}"))),
    }
}

/// Crops every grid patch out of a `[H, W]` or `[C, H, W]` image; patches
/// keep the image's layout.
pub fn extract<T: Real>(image: &Tensor<T>, grid: &TileGrid) -> Result<Vec<Tensor<T>>> {
    let (c, h, w) = planes(image)?;
    if (h, w) != grid.image_size {
        return Err(shape_err(format!("image is {h}x{w}, grid expects {:?}", grid.image_size)));
    }
    let p = grid.patch_size;
    let shape: Vec<usize> = if image.ndim() == 2 { vec![p, p] } else { vec![c, p, p] };
    Ok(grid
        .positions
        .iter()
        .map(|&(r, col)| {
            let mut data = Vec::with_capacity(c * p * p);
            for ch in 0..c {
                for y in r..r + p {
                    let start = ch * h * w + y * w + col;
                    data.extend_from_slice(&image.data()[start..start + p]);
                }
            }
            Tensor::new(shape.clone(), data).expect("patch size is consistent")
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(config_err(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Reassembles patch maps into a full map, combining overlaps by `agg`.
/// Overlaps accumulate in double precision.
pub fn stitch_with<T: Real>(maps: &[Tensor<T>], grid: &TileGrid, agg: Aggregation) -> Result<Tensor<T>> {
    if maps.len() != grid.len() {
        return Err(shape_err(format!("{} patch maps for a grid of {}", maps.len(), grid.len())));
    }
    let first = maps.first().ok_or_else(|| shape_err("empty grid"))?;
    let (c, ph, pw) = planes(first)?;
    let p = grid.patch_size;
    if (ph, pw) != (p, p) {
        return Err(shape_err(format!("patch maps are {ph}x{pw}, grid patches are {p}x{p}")));
    }
    let (h, w) = grid.image_size;
    let init = match agg {
        Aggregation::Mean => 0.0,
        Aggregation::Max => f64::NEG_INFINITY,
    };
    let mut acc = vec![init; c * h * w];
    for (m, &(r, col)) in maps.iter().zip(&grid.positions) {
        if m.shape() != first.shape() {
            return Err(shape_err(format!("patch map shapes differ: {:?} vs {:?}", m.shape(), first.shape())));
        }
        for ch in 0..c {
            for y in 0..p {
                let src = &m.data()[ch * p * p + y * p..ch * p * p + (y + 1) * p];
                let dst = &mut acc[ch * h * w + (r + y) * w + col..ch * h * w + (r + y) * w + col + p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    let s = s.as_f64();
                    *d = match agg {
                        Aggregation::Mean => *d + s,
                        Aggregation::Max => d.max(s),
                    };
                }
            }
        }
    }
    if agg == Aggregation::Mean {
        let cov = grid.coverage();
        for ch in 0..c {
            for (i, &n) in cov.iter().enumerate() {
                acc[ch * h * w + i] /= n as f64;
            }
        }
    }
    let shape = if first.ndim() == 2 { vec![h, w] } else { vec![c, h, w] };
    Tensor::new(shape, acc.into_iter().map(T::of).collect())
}

/// Averages overlapping patch maps.
pub fn stitch<T: Real>(maps: &[Tensor<T>], grid: &TileGrid) -> Result<Tensor<T>> {
    stitch_with(maps, grid, Aggregation::Mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_gives_sixteen_patches() {
        let g = make_grid((1000, 1000), 400, 200).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(axis_offsets(1000, 400, 200), vec![0, 200, 400, 600]);
        assert_eq!(axis_offsets(900, 400, 200), vec![0, 200, 400, 500]);
        assert_eq!(make_grid((900, 900), 400, 200).unwrap().len(), 16);
    }

    #[test]
    fn degenerate_and_invalid_grids() {
        assert_eq!(make_grid((64, 64), 64, 0).unwrap().positions, vec![(0, 0)]);
        assert!(make_grid((64, 64), 65, 0).is_err());
        assert!(make_grid((64, 64), 32, 32).is_err());
    }

    #[test]
    fn overlapping_halves_average() {
        let g = make_grid((2, 3), 2, 1).unwrap();
        assert_eq!(g.positions, vec![(0, 0), (0, 1)]);
        let maps = vec![Tensor::<f64>::zeros(vec![2, 2]), Tensor::full(vec![2, 2], 1.0)];
        let s = stitch(&maps, &g).unwrap();
        assert_eq!(s.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
        let m = stitch_with(&maps, &g, Aggregation::Max).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn json_round_trip() {
        let g = make_grid((10, 12), 4, 1).unwrap();
        assert_eq!(TileGrid::from_json(&g.to_json()).unwrap(), g);
    }
}
