//! Training objectives: pixel cross-entropy, SSIM and multi-scale SSIM
//! losses, the soft IoU loss and weighted combinations of them.
//!
//! Graph functions take prediction and target variables of equal shape,
//! either `[H, W]`, `[C, H, W]` or `[B, C, H, W]`, and return a scalar
//! variable. Losses are averaged per sample, then over the batch.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const CE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    Uniform,
    Gaussian(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    /// Window side `K`.
    pub k: usize,
    pub c1: f64,
    pub c2: f64,
    pub window: Window,
    /// Per-scale weights, finest first; the count is the number of scales.
    pub ms_weights: Vec<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { k: 11, c1: 0.01 * 0.01, c2: 0.03 * 0.03, window: Window::Uniform, ms_weights: vec![1.0] }
    }
}

impl SsimConfig {
    /// Uniform weights over `n` scales.
    pub fn with_scales(mut self, n: usize) -> Self {
        self.ms_weights = vec![1.0 / n.max(1) as f64; n];
        self
    }

    pub fn scales(&self) -> usize {
        self.ms_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 || self.k.is_multiple_of(2) {
            return Err(config_err(format!("SSIM window must be odd and >= 3, got {}", self.k)));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(config_err("SSIM constants must be positive"));
        }
        if let Window::Gaussian(s) = self.window {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err(format!("gaussian sigma must be positive, got {s}")));
            }
        }
        if self.ms_weights.is_empty() || self.ms_weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(config_err("MS-SSIM weights must be positive and non-empty"));
        }
        let total: f64 = self.ms_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(config_err(format!("MS-SSIM weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Normalized 1-D taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let k = self.k;
        match self.window {
            Window::Uniform => vec![1.0 / k as f64; k],
            Window::Gaussian(sigma) => {
                let c = (k / 2) as f64;
                let raw: Vec<f64> = (0..k).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            }
        }
    }
}

/// Windowed first and second moments of an aligned window pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_xy: f64,
}

/// Population statistics of two `K x K` windows, weighted by the configured
/// window (plain `1/K^2` for the uniform window).
pub fn window_stats(x: &[f64], y: &[f64], cfg: &SsimConfig) -> Result<WindowStats> {
    let k = cfg.k;
    if x.len() != k * k || y.len() != k * k {
        return Err(shape_err(format!("windows must hold {} values, got {} and {}", k * k, x.len(), y.len())));
    }
    let taps = cfg.taps();
    let weight = |i: usize| taps[i / k] * taps[i % k];
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..k * k {
        mx += weight(i) * x[i];
        my += weight(i) * y[i];
    }
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in 0..k * k {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        vx += weight(i) * dx * dx;
        vy += weight(i) * dy * dy;
        cxy += weight(i) * dx * dy;
    }
    Ok(WindowStats { mu_x: mx, mu_y: my, sigma_x: vx.sqrt(), sigma_y: vy.sqrt(), sigma_xy: cxy })
}

/// Structural similarity of one window pair.
pub fn ssim_index(x: &[f64], y: &[f64], cfg: &SsimConfig) -> Result<f64> {
    let s = window_stats(x, y, cfg)?;
    let lum = (2.0 * s.mu_x * s.mu_y + cfg.c1) / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + cfg.c1);
    let cs = (2.0 * s.sigma_xy + cfg.c2) / (s.sigma_x * s.sigma_x + s.sigma_y * s.sigma_y + cfg.c2);
    Ok(lum * cs)
}

fn as_4d<T: Real>(tape: &mut Tape<T>, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    match shape.len() {
        2 => tape.reshape(v, &[1, 1, shape[0], shape[1]]),
        3 => tape.reshape(v, &[1, shape[0], shape[1], shape[2]]),
        4 => Ok(v),
        _ => Err(shape_err(format!("loss inputs must be 2-D to 4-D maps, got {shape:?}"))),
    }
}

fn pair<T: Real>(tape: &mut Tape<T>, p: Var, g: Var) -> Result<(Var, Var)> {
    if tape.shape(p) != tape.shape(g) {
        return Err(shape_err(format!(
            "prediction {:?} and target {:?} differ in shape",
            tape.shape(p),
            tape.shape(g)
        )));
    }
    Ok((as_4d(tape, p)?, as_4d(tape, g)?))
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn ce_loss<T: Real>(tape: &mut Tape<T>, p: Var, g: Var) -> Result<Var> {
    let (p, g) = pair(tape, p, g)?;
    let pc = tape.clamp(p, CE_EPS, 1.0 - CE_EPS);
    let log_p = tape.log(pc);
    let neg = tape.neg(pc);
    let q = tape.offset(neg, 1.0);
    let log_q = tape.log(q);
    let neg_g = tape.neg(g);
    let one_minus_g = tape.offset(neg_g, 1.0);
    let a = tape.mul(g, log_p)?;
    let b = tape.mul(one_minus_g, log_q)?;
    let ll = tape.add(a, b)?;
    let m = tape.mean(ll);
    Ok(tape.neg(m))
}

/// Per-window SSIM and contrast-structure maps of two `[B, C, H, W]` inputs.
fn ssim_maps<T: Real>(tape: &mut Tape<T>, x: Var, y: Var, cfg: &SsimConfig) -> Result<(Var, Var)> {
    let taps = cfg.taps();
    let mu_x = tape.window_filter(x, &taps)?;
    let mu_y = tape.window_filter(y, &taps)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let exx = tape.window_filter(xx, &taps)?;
    let eyy = tape.window_filter(yy, &taps)?;
    let exy = tape.window_filter(xy, &taps)?;
    let mu_xx = tape.mul(mu_x, mu_x)?;
    let mu_yy = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(exx, mu_xx)?;
    let var_y = tape.sub(eyy, mu_yy)?;
    let cov = tape.sub(exy, mu_xy)?;

    let lum_num = tape.scale(mu_xy, 2.0);
    let lum_num = tape.offset(lum_num, cfg.c1);
    let lum_den = tape.add(mu_xx, mu_yy)?;
    let lum_den = tape.offset(lum_den, cfg.c1);
    let lum = tape.div(lum_num, lum_den)?;

    let cs_num = tape.scale(cov, 2.0);
    let cs_num = tape.offset(cs_num, cfg.c2);
    let cs_den = tape.add(var_x, var_y)?;
    let cs_den = tape.offset(cs_den, cfg.c2);
    let cs = tape.div(cs_num, cs_den)?;
    let ssim = tape.mul(lum, cs)?;
    Ok((ssim, cs))
}

fn check_window_fit<T: Real>(tape: &Tape<T>, x: Var, min: usize) -> Result<()> {
    let s = tape.shape(x);
    if s[2] < min || s[3] < min {
        return Err(shape_err(format!("{}x{} map is smaller than the required {min}x{min}", s[2], s[3])));
    }
    Ok(())
}

/// `1 - mean SSIM` over every stride-1 `K x K` window.
pub fn ssim_loss<T: Real>(tape: &mut Tape<T>, p: Var, g: Var, cfg: &SsimConfig) -> Result<Var> {
    cfg.validate()?;
    let (p, g) = pair(tape, p, g)?;
    check_window_fit(tape, p, cfg.k)?;
    let (ssim, _) = ssim_maps(tape, p, g, cfg)?;
    let m = tape.mean(ssim);
    let neg = tape.neg(m);
    Ok(tape.offset(neg, 1.0))
}

/// Smallest value a per-scale mean may take before being raised to a
/// fractional weight.
pub const MS_SSIM_FLOOR: f64 = 1e-6;

/// Multi-scale SSIM loss: the product of mean contrast-structure terms at the
/// finer scales and the mean SSIM at the coarsest scale, each raised to its
/// scale weight, with 2x mean pooling between scales. Per-scale means are
/// floored at [`MS_SSIM_FLOOR`] when a fractional power is applied.
pub fn ms_ssim_loss<T: Real>(tape: &mut Tape<T>, p: Var, g: Var, cfg: &SsimConfig) -> Result<Var> {
    cfg.validate()?;
    let (mut x, mut y) = pair(tape, p, g)?;
    let n = cfg.scales();
    check_window_fit(tape, x, cfg.k << (n - 1))?;
    let mut product: Option<Var> = None;
    for (i, &w) in cfg.ms_weights.iter().enumerate() {
        let (ssim, cs) = ssim_maps(tape, x, y, cfg)?;
        let term = if i + 1 == n { ssim } else { cs };
        let mut m = tape.mean(term);
        if w != 1.0 {
            m = tape.clamp(m, MS_SSIM_FLOOR, f64::INFINITY);
            m = tape.powf(m, w);
        }
        product = Some(match product {
            None => m,
            Some(acc) => tape.mul(acc, m)?,
        });
        if i + 1 < n {
            x = tape.avg_pool2(x)?;
            y = tape.avg_pool2(y)?;
        }
    }
    let neg = tape.neg(product.expect("at least one scale"));
    Ok(tape.offset(neg, 1.0))
}

/// Soft IoU loss `1 - sum(gp) / sum(g + p - gp)` per sample, averaged over
/// the batch. A sample whose maps are both identically zero contributes 0.
pub fn iou_loss<T: Real>(tape: &mut Tape<T>, p: Var, g: Var) -> Result<Var> {
    let (p, g) = pair(tape, p, g)?;
    let gp = tape.mul(g, p)?;
    let sum = tape.add(g, p)?;
    let union = tape.sub(sum, gp)?;
    let inter = tape.sum_per_sample(gp)?;
    let union = tape.sum_per_sample(union)?;
    let empty = tape.value(union).map(|u| if u == T::zero() { T::one() } else { T::zero() });
    let empty = tape.constant(empty);
    let safe = tape.add(union, empty)?;
    let ratio = tape.div(inter, safe)?;
    let covered = tape.add(ratio, empty)?;
    let m = tape.mean(covered);
    let neg = tape.neg(m);
    Ok(tape.offset(neg, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossTerm {
    Ce,
    Ssim,
    Iou,
}

impl LossTerm {
    pub const ALL: [LossTerm; 3] = [LossTerm::Ce, LossTerm::Ssim, LossTerm::Iou];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Ce => "ce",
            LossTerm::Ssim => "ssim",
            LossTerm::Iou => "iou",
        }
    }
}

/// Weighted selection of loss terms, written like `ce+ssim` or `ce+0.5*iou`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub terms: Vec<(LossTerm, f64)>,
}

impl LossSpec {
    pub fn new(terms: &[LossTerm]) -> Self {
        LossSpec { terms: terms.iter().map(|&t| (t, 1.0)).collect() }
    }

    pub fn weight(&self, term: LossTerm) -> Option<f64> {
        self.terms.iter().find(|(t, _)| *t == term).map(|&(_, w)| w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(config_err("loss spec has no terms"));
        }
        for (i, &(t, w)) in self.terms.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(config_err(format!("weight of {} must be positive, got {w}", t.name())));
            }
            if self.terms[..i].iter().any(|&(u, _)| u == t) {
                return Err(config_err(format!("loss term {} listed twice", t.name())));
            }
        }
        Ok(())
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::new(&[LossTerm::Ce])
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for part in s.split('+').map(str::trim) {
            let (w, name) = match part.split_once('*') {
                Some((w, name)) => {
                    let w = w.trim().parse::<f64>().map_err(|_| config_err(format!("bad loss weight in `{part}`")))?;
                    (w, name.trim())
                }
                None => (1.0, part),
            };
            let term = match name {
                "ce" => LossTerm::Ce,
                "ssim" => LossTerm::Ssim,
                "iou" => LossTerm::Iou,
                other => return Err(config_err(format!("unknown loss term `{other}`"))),
            };
            terms.push((term, w));
        }
        let spec = LossSpec { terms };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|&(t, w)| if w == 1.0 { t.name().to_string() } else { format!("{w}*{}", t.name()) })
            .collect();
        f.write_str(&parts.join("+"))
    }
}

/// One loss term on the tape. SSIM uses the multi-scale form, which reduces
/// to the single-scale loss when one scale is configured.
pub fn term_loss<T: Real>(tape: &mut Tape<T>, term: LossTerm, p: Var, g: Var, cfg: &SsimConfig) -> Result<Var> {
    match term {
        LossTerm::Ce => ce_loss(tape, p, g),
        LossTerm::Ssim => ms_ssim_loss(tape, p, g, cfg),
        LossTerm::Iou => iou_loss(tape, p, g),
    }
}

/// Weighted sum of the selected terms, with each term's variable.
pub struct CombinedLoss {
    pub total: Var,
    pub terms: Vec<(LossTerm, Var)>,
}

pub fn combined_loss<T: Real>(tape: &mut Tape<T>, p: Var, g: Var, spec: &LossSpec, cfg: &SsimConfig) -> Result<CombinedLoss> {
    spec.validate()?;
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(spec.terms.len());
    for &(term, w) in &spec.terms {
        let v = term_loss(tape, term, p, g, cfg)?;
        terms.push((term, v));
        let weighted = if w == 1.0 { v } else { tape.scale(v, w) };
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    Ok(CombinedLoss { total: total.expect("validated non-empty"), terms })
}

/// Evaluates one term on plain tensors.
pub fn loss_value<T: Real>(term: LossTerm, p: &Tensor<T>, g: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let gv = tape.constant(g.clone());
    let out = term_loss(&mut tape, term, pv, gv, cfg)?;
    Ok(tape.value(out).item().as_f64())
}
