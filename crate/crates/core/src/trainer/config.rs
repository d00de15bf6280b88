//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::AugmentConfig;
use crate::error::{config_err, Error, Result};
use crate::losses::{LossSpec, SsimConfig, Window};
use crate::metrics::MetricsConfig;
use crate::segnet::{NetworkConfig, SkipSet};

use super::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub lr: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub decay_epochs: usize,
    pub decay_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossSpec,
    pub ssim: SsimConfig,
    pub augment: AugmentConfig,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub metrics: MetricsConfig,
    /// Overlap of the patches cut from rasters larger than the network input.
    pub tile_overlap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::unet(400, 5, 32),
            lr: 1e-4,
            adam: AdamConfig::default(),
            epochs: 100,
            decay_epochs: 10,
            decay_rate: 0.1,
            batch_size: 4,
            seed: 0,
            loss: LossSpec::default(),
            ssim: SsimConfig::default(),
            augment: AugmentConfig::default(),
            grad_clip: None,
            metrics: MetricsConfig::default(),
            tile_overlap: 0,
        }
    }
}

/// Learning rate of epoch `epoch` (0-based): the base rate, multiplied by
/// `decay_rate` during the final `decay_epochs` epochs.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch + cfg.decay_epochs >= cfg.epochs {
        cfg.lr * cfg.decay_rate
    } else {
        cfg.lr
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| config_err(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(format!("bad value `{value}` for `{key}` (expected true or false)"))),
    }
}

fn parse_size(value: &str) -> Result<(usize, usize)> {
    let bad = || config_err(format!("bad input size `{value}` (expected N or HxW)"));
    match value.split_once('x') {
        Some((h, w)) => Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = value.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

/// Recognized keys, in the order written by [`TrainConfig::to_text`].
pub const KEYS: &[&str] = &[
    "input_size",
    "depth",
    "width",
    "skips",
    "block",
    "attention",
    "fusion",
    "n_scales",
    "reduction",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "decay_epochs",
    "decay_rate",
    "batch_size",
    "seed",
    "grad_clip",
    "loss",
    "ssim_window",
    "ssim_kernel",
    "ssim_sigma",
    "ssim_c1",
    "ssim_c2",
    "ssim_scales",
    "augment_p",
    "rotate",
    "hflip",
    "vflip",
    "brightness",
    "contrast",
    "saturation",
    "hue",
    "threshold",
    "clip_threshold",
    "tile_overlap",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.ssim.validate()?;
        self.augment.validate()?;
        self.metrics.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("learning rate must be positive, got {}", self.lr)));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
            return Err(config_err("Adam needs betas in [0, 1) and a positive eps"));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs must be positive"));
        }
        if self.decay_epochs > self.epochs {
            return Err(config_err(format!("decay_epochs {} exceeds epochs {}", self.decay_epochs, self.epochs)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(config_err(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate)));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(config_err(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.tile_overlap >= self.network.input_size.0.min(self.network.input_size.1) {
            return Err(config_err("tile_overlap must be smaller than the input size"));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let net = &mut self.network;
        match key {
            "input_size" => net.input_size = parse_size(value)?,
            "depth" => net.depth = parse(key, value)?,
            "width" => net.width = parse(key, value)?,
            "skips" => net.skip_set = value.parse()?,
            "block" => net.block_kind = value.parse()?,
            "attention" => net.attention = value.parse()?,
            "fusion" => net.fusion = value.parse()?,
            "n_scales" => net.n_scales = parse(key, value)?,
            "reduction" => net.reduction = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "decay_epochs" => self.decay_epochs = parse(key, value)?,
            "decay_rate" => self.decay_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "loss" => self.loss = value.parse()?,
            "ssim_window" => self.ssim.k = parse(key, value)?,
            "ssim_kernel" => {
                self.ssim.window = match value {
                    "uniform" => Window::Uniform,
                    "gaussian" => Window::Gaussian(match self.ssim.window {
                        Window::Gaussian(s) => s,
                        Window::Uniform => 1.5,
                    }),
                    other => return Err(config_err(format!("unknown SSIM kernel `{other}`"))),
                }
            }
            "ssim_sigma" => {
                let s: f64 = parse(key, value)?;
                if let Window::Gaussian(_) = self.ssim.window {
                    self.ssim.window = Window::Gaussian(s);
                } else {
                    return Err(config_err("ssim_sigma requires ssim_kernel = gaussian on an earlier line"));
                }
            }
            "ssim_c1" => self.ssim.c1 = parse(key, value)?,
            "ssim_c2" => self.ssim.c2 = parse(key, value)?,
            "ssim_scales" => {
                let n: usize = parse(key, value)?;
                if n == 0 {
                    return Err(config_err("ssim_scales must be at least 1"));
                }
                self.ssim = self.ssim.clone().with_scales(n);
            }
            "augment_p" => self.augment.p = parse(key, value)?,
            "rotate" => self.augment.rotate = parse_bool(key, value)?,
            "hflip" => self.augment.hflip = parse_bool(key, value)?,
            "vflip" => self.augment.vflip = parse_bool(key, value)?,
            "brightness" => self.augment.brightness = parse(key, value)?,
            "contrast" => self.augment.contrast = parse(key, value)?,
            "saturation" => self.augment.saturation = parse(key, value)?,
            "hue" => self.augment.hue = parse(key, value)?,
            "threshold" => self.metrics.binarize_threshold = parse(key, value)?,
            "clip_threshold" => self.metrics.clip_threshold = parse(key, value)?,
            "tile_overlap" => self.tile_overlap = parse(key, value)?,
            other => return Err(config_err(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file over the defaults. Without a `skips` line every
    /// skip connection of the configured depth is used. Errors name the
    /// offending line; cross-field checks run after the last line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| config_err(format!("line {}: {}", i + 1, strip_prefix(&e)));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(config_err(format!("line {}: duplicate key `{key}`", i + 1)));
            }
            cfg.set(key, value).map_err(at)?;
        }
        if !seen.contains("skips") {
            cfg.network.skip_set = SkipSet::all(cfg.network.depth);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String cannot fail");
        put("input_size", format!("{}x{}", n.input_size.0, n.input_size.1));
        put("depth", n.depth.to_string());
        put("width", n.width.to_string());
        put("skips", n.skip_set.to_string());
        put("block", n.block_kind.to_string());
        put("attention", n.attention.to_string());
        put("fusion", n.fusion.to_string());
        put("n_scales", n.n_scales.to_string());
        put("reduction", n.reduction.to_string());
        put("lr", self.lr.to_string());
        put("beta1", self.adam.beta1.to_string());
        put("beta2", self.adam.beta2.to_string());
        put("eps", self.adam.eps.to_string());
        put("epochs", self.epochs.to_string());
        put("decay_epochs", self.decay_epochs.to_string());
        put("decay_rate", self.decay_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("grad_clip", self.grad_clip.map_or("none".into(), |c| c.to_string()));
        put("loss", self.loss.to_string());
        put("ssim_window", self.ssim.k.to_string());
        match self.ssim.window {
            Window::Uniform => put("ssim_kernel", "uniform".into()),
            Window::Gaussian(sigma) => {
                put("ssim_kernel", "gaussian".into());
                put("ssim_sigma", sigma.to_string());
            }
        }
        put("ssim_c1", self.ssim.c1.to_string());
        put("ssim_c2", self.ssim.c2.to_string());
        put("ssim_scales", self.ssim.scales().to_string());
        let a = &self.augment;
        put("augment_p", a.p.to_string());
        put("rotate", a.rotate.to_string());
        put("hflip", a.hflip.to_string());
        put("vflip", a.vflip.to_string());
        put("brightness", a.brightness.to_string());
        put("contrast", a.contrast.to_string());
        put("saturation", a.saturation.to_string());
        put("hue", a.hue.to_string());
        put("threshold", self.metrics.binarize_threshold.to_string());
        put("clip_threshold", self.metrics.clip_threshold.to_string());
        put("tile_overlap", self.tile_overlap.to_string());
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::Fusion;

    #[test]
    fn schedule_decays_in_the_final_window() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(89, &cfg), 1e-4);
        assert!((lr_schedule(90, &cfg) - 1e-5).abs() < 1e-20);
        assert!((lr_schedule(99, &cfg) - 1e-5).abs() < 1e-20);
        let flat = TrainConfig { decay_rate: 1.0, ..TrainConfig::default() };
        assert!((0..100).all(|e| lr_schedule(e, &flat) == 1e-4));
    }

    #[test]
    fn parse_overrides_defaults() {
        let text = "# smoke\ninput_size = 64\ndepth = 3\nwidth = 8  # tiny\nfusion = adaptive\nn_scales = 2\nloss = ce+ssim\nssim_kernel = gaussian\nssim_sigma = 1.5\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.network.input_size, (64, 64));
        assert_eq!(cfg.network.fusion, Fusion::Adaptive);
        assert_eq!(cfg.ssim.window, Window::Gaussian(1.5));
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = TrainConfig::parse("depth = 3\nwidth = eight\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = TrainConfig::parse("depth = 3\n\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = TrainConfig::parse("oops\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(TrainConfig::parse("depth = 3\ndepth = 4\n").is_err());
    }

    #[test]
    fn every_key_is_written() {
        let text = TrainConfig::default().to_text();
        for key in KEYS.iter().filter(|k| **k != "ssim_sigma") {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
    }
}
