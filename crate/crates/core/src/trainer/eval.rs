use std::collections::BTreeMap;

use crate::data::{extract, make_grid, stitch, Sample};
use crate::error::{Error, Result};
use crate::metrics::{accumulate, binarize, confusion, derive_metrics, ConfusionCounts, MetricsConfig, MetricsReport, ReportRow};
use crate::segnet::Model;
use crate::tensor::Tensor;

/// Source of per-patch probability maps.
pub enum Predictor<'a> {
    Model(&'a Model<f32>),
    /// Returns the ground truth; checks the evaluation plumbing.
    Oracle,
    Constant(f32),
}

impl Predictor<'_> {
    /// `images` is `[B, 3, P, P]`, `truth` the matching `[P, P]` masks.
    fn predict(&self, images: &Tensor<f32>, truth: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        match self {
            Predictor::Model(m) => {
                let probs = m.predict(images)?;
                Ok((0..truth.len()).map(|i| probs.index0(i).reshape(truth[i].shape().to_vec()).expect("one channel")).collect())
            }
            Predictor::Oracle => Ok(truth.to_vec()),
            Predictor::Constant(c) => Ok(truth.iter().map(|t| Tensor::full(t.shape().to_vec(), *c)).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Jaccard index of every slide, sorted by slide id.
    pub per_wsi_js: Vec<(String, f64)>,
    pub s_wsi: f64,
}

struct RasterResult {
    tiles: Vec<ReportRow>,
    counts: ConfusionCounts,
}

fn evaluate_raster(
    pred: &Predictor<'_>,
    s: &Sample,
    patch: usize,
    overlap: usize,
    batch: usize,
    cfg: &MetricsConfig,
) -> Result<RasterResult> {
    let grid = make_grid(s.size(), patch, overlap)?;
    let images = extract(&s.image, &grid)?;
    let masks = extract(&s.mask, &grid)?;
    let mut probs = Vec::with_capacity(grid.len());
    for (imgs, truth) in images.chunks(batch.max(1)).zip(masks.chunks(batch.max(1))) {
        probs.extend(pred.predict(&Tensor::stack(imgs)?, truth)?);
    }
    let mut tiles = Vec::with_capacity(grid.len());
    for ((p, m), &(r, c)) in probs.iter().zip(&masks).zip(&grid.positions) {
        let counts = confusion(&binarize(p.data(), cfg.binarize_threshold), &binarize(m.data(), 0.5))?;
        tiles.push(ReportRow::new(format!("{}:r{r}c{c}", s.id), counts, cfg.clip_threshold));
    }
    let full = stitch(&probs, &grid)?;
    let counts = confusion(&binarize(full.data(), cfg.binarize_threshold), &binarize(s.mask.data(), 0.5))?;
    Ok(RasterResult { tiles, counts })
}

/// Tiles every raster, predicts each patch, scores patches individually and
/// scores each slide on its stitched, binarized probability map. With
/// `threads > 1` rasters are processed on scoped worker threads; results do
/// not depend on the thread count.
pub fn evaluate(
    pred: &Predictor<'_>,
    samples: &[Sample],
    patch: usize,
    overlap: usize,
    batch: usize,
    cfg: &MetricsConfig,
    threads: usize,
) -> Result<Evaluation> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let threads = threads.clamp(1, samples.len());
    let results: Vec<Result<RasterResult>> = if threads == 1 {
        samples.iter().map(|s| evaluate_raster(pred, s, patch, overlap, batch, cfg)).collect()
    } else {
        let per = samples.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(per)
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk.iter().map(|s| evaluate_raster(pred, s, patch, overlap, batch, cfg)).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };

    let mut tiles = Vec::new();
    let mut by_wsi: BTreeMap<&str, Vec<ConfusionCounts>> = BTreeMap::new();
    for (s, r) in samples.iter().zip(results) {
        let r = r?;
        tiles.extend(r.tiles);
        by_wsi.entry(&s.wsi).or_default().push(r.counts);
    }
    let mut wsis = Vec::with_capacity(by_wsi.len());
    let mut per_wsi_js = Vec::with_capacity(by_wsi.len());
    for (wsi, parts) in by_wsi {
        let counts = accumulate(&parts)?;
        per_wsi_js.push((wsi.to_string(), derive_metrics(&counts).js));
        wsis.push(ReportRow::new(wsi, counts, cfg.clip_threshold));
    }
    let report = MetricsReport::build(tiles, wsis, cfg)?;
    let s_wsi = report.s_wsi();
    Ok(Evaluation { report, per_wsi_js, s_wsi })
}
