//! Pixel confusion counts, derived overlap metrics, the clipped Jaccard
//! index and the WSI score, plus the CSV metrics report.

use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn checked_add(self, o: Self) -> Option<Self> {
        Some(ConfusionCounts {
            tp: self.tp.checked_add(o.tp)?,
            fp: self.fp.checked_add(o.fp)?,
            tn: self.tn.checked_add(o.tn)?,
            fn_: self.fn_.checked_add(o.fn_)?,
        })
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        self.checked_add(o).expect("confusion counter overflow")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsConfig {
    pub binarize_threshold: f64,
    /// Jaccard values below this are clipped to zero.
    pub clip_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { binarize_threshold: 0.5, clip_threshold: 0.65 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("binarize_threshold", self.binarize_threshold), ("clip_threshold", self.clip_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(config_err(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// `1` where the probability is at least `threshold`, else `0`.
pub fn binarize<T: Copy + Into<f64>>(probs: &[T], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p.into() >= threshold)).collect()
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(shape_err(format!("mask sizes differ: {} vs {}", pred.len(), truth.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(truth) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(Error::InvalidArgument(format!("mask values must be 0 or 1, got ({p}, {g})"))),
        }
    }
    Ok(c)
}

/// Field-wise sum; fails on counter overflow.
pub fn accumulate<'a>(parts: impl IntoIterator<Item = &'a ConfusionCounts>) -> Result<ConfusionCounts> {
    parts.into_iter().try_fold(ConfusionCounts::default(), |acc, c| {
        acc.checked_add(*c).ok_or_else(|| Error::Numerical("confusion counter overflow".into()))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sp: f64,
    pub pc: f64,
    pub rc: f64,
    pub dc: f64,
    pub js: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Specificity, precision, recall, Dice and Jaccard; `0/0` counts as 1.
pub fn derive_metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        sp: ratio(c.tn, c.tn + c.fp),
        pc: ratio(c.tp, c.tp + c.fp),
        rc: ratio(c.tp, c.tp + c.fn_),
        dc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        js: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

pub fn clipped_js(js: f64, threshold: f64) -> f64 {
    if js >= threshold {
        js
    } else {
        0.0
    }
}

/// Mean clipped Jaccard over whole-slide images.
pub fn s_wsi(per_wsi_js: &[f64], threshold: f64) -> Result<f64> {
    if per_wsi_js.is_empty() {
        return Err(Error::InvalidArgument("WSI score needs at least one slide".into()));
    }
    Ok(per_wsi_js.iter().map(|&j| clipped_js(j, threshold)).sum::<f64>() / per_wsi_js.len() as f64)
}

pub const REPORT_HEADER: &str = "unit,tp,fp,tn,fn,sp,pc,rc,dc,js,clipped_js";
pub const AGGREGATE_UNIT: &str = "AGGREGATE";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub unit: String,
    pub counts: ConfusionCounts,
    /// Value of the last column; for the aggregate row this is the WSI score.
    pub clipped: f64,
}

impl ReportRow {
    pub fn new(unit: impl Into<String>, counts: ConfusionCounts, clip_threshold: f64) -> Self {
        let clipped = clipped_js(derive_metrics(&counts).js, clip_threshold);
        ReportRow { unit: unit.into(), counts, clipped }
    }
}

/// Tile rows, then slide rows, then the aggregate row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub tiles: Vec<ReportRow>,
    pub wsis: Vec<ReportRow>,
    pub aggregate: ReportRow,
}

impl MetricsReport {
    /// Builds the report: the aggregate row accumulates the tile counts and
    /// carries the WSI score in its last column.
    pub fn build(tiles: Vec<ReportRow>, wsis: Vec<ReportRow>, cfg: &MetricsConfig) -> Result<Self> {
        let counts = accumulate(tiles.iter().map(|r| &r.counts))?;
        let js: Vec<f64> = wsis.iter().map(|r| derive_metrics(&r.counts).js).collect();
        let score = if js.is_empty() { 0.0 } else { s_wsi(&js, cfg.clip_threshold)? };
        let aggregate = ReportRow { unit: AGGREGATE_UNIT.into(), counts, clipped: score };
        Ok(MetricsReport { tiles, wsis, aggregate })
    }

    pub fn s_wsi(&self) -> f64 {
        self.aggregate.clipped
    }

    pub fn aggregate_metrics(&self) -> Metrics {
        derive_metrics(&self.aggregate.counts)
    }

    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.tiles.iter().chain(&self.wsis).chain(std::iter::once(&self.aggregate))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in self.rows() {
            let m = derive_metrics(&r.counts);
            let c = &r.counts;
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.unit, c.tp, c.fp, c.tn, c.fn_, m.sp, m.pc, m.rc, m.dc, m.js, r.clipped
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}
