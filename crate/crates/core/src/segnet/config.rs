use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::nn::BlockKind;

/// Set of encoder levels whose features are concatenated into the decoder.
/// Level `s` is the map at resolution `1/2^s` of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct SkipSet(u8);

impl SkipSet {
    pub const MAX_LEVELS: usize = 8;

    pub fn empty() -> Self {
        SkipSet(0)
    }

    /// Every level that can carry a skip at encoder depth `depth`.
    pub fn all(depth: usize) -> Self {
        let levels = depth.saturating_sub(1).min(Self::MAX_LEVELS);
        SkipSet(((1u16 << levels) - 1) as u8)
    }

    pub fn from_bits(bits: u8) -> Self {
        SkipSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, level: usize) -> bool {
        level < Self::MAX_LEVELS && self.0 & (1 << level) != 0
    }

    pub fn with(self, level: usize) -> Self {
        SkipSet(self.0 | (1 << level))
    }

    pub fn without(self, level: usize) -> Self {
        SkipSet(self.0 & !(1 << level))
    }

    pub fn levels(self) -> impl DoubleEndedIterator<Item = usize> {
        (0..Self::MAX_LEVELS).filter(move |&l| self.contains(l))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Written coarse to fine, e.g. `1/8+1/4+1/2+1/1`; `none` when empty.
impl fmt::Display for SkipSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.levels().rev().map(|l| format!("1/{}", 1u32 << l)).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for SkipSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" || s == "0" {
            return Ok(SkipSet::empty());
        }
        let mut set = SkipSet::empty();
        for part in s.split('+') {
            let denom = part
                .trim()
                .strip_prefix("1/")
                .and_then(|d| d.parse::<u32>().ok())
                .filter(|d| d.is_power_of_two())
                .ok_or_else(|| config_err(format!("bad skip fraction `{part}` (expected 1/2^k)")))?;
            let level = denom.trailing_zeros() as usize;
            if level >= Self::MAX_LEVELS {
                return Err(config_err(format!("skip fraction `{part}` is too fine")));
            }
            set = set.with(level);
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attention {
    None,
    Se,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    Single,
    Average,
    Adaptive,
}

macro_rules! str_enum {
    ($t:ty, $what:literal, { $($name:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($v),)+
                    other => Err(config_err(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = [$(($v, $name)),+].into_iter().find(|(v, _)| v == self).map(|(_, n)| n).unwrap();
                f.write_str(name)
            }
        }
    };
}

str_enum!(BlockKind, "block kind", { "basic" => BlockKind::Basic, "shortcut" => BlockKind::Shortcut });
str_enum!(Attention, "attention", { "none" => Attention::None, "se" => Attention::Se });
str_enum!(Fusion, "fusion", {
    "single" => Fusion::Single,
    "average" => Fusion::Average,
    "adaptive" => Fusion::Adaptive,
});

pub(crate) fn block_code(k: BlockKind) -> u8 {
    match k {
        BlockKind::Basic => 0,
        BlockKind::Shortcut => 1,
    }
}

pub(crate) fn attention_code(a: Attention) -> u8 {
    match a {
        Attention::None => 0,
        Attention::Se => 1,
    }
}

pub(crate) fn fusion_code(f: Fusion) -> u8 {
    match f {
        Fusion::Single => 0,
        Fusion::Average => 1,
        Fusion::Adaptive => 2,
    }
}

pub(crate) fn decode_enum<T: Copy>(code: u8, table: &[T], what: &str) -> Result<T> {
    table.get(code as usize).copied().ok_or_else(|| Error::Format(format!("bad {what} code {code}")))
}

/// Architecture of the encoder-decoder.
///
/// `depth` counts encoder stages: stage `s` runs at resolution `1/2^s`, so a
/// depth-`D` network down-samples `D - 1` times and the deepest stage is the
/// bottleneck. Stage `s` has `width * 2^min(s, 4)` channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub input_size: (usize, usize),
    pub depth: usize,
    pub width: usize,
    pub skip_set: SkipSet,
    pub block_kind: BlockKind,
    pub attention: Attention,
    pub fusion: Fusion,
    pub n_scales: usize,
    /// Reduction rate shared by SE blocks and scale-adaptive selection.
    pub reduction: usize,
}

impl NetworkConfig {
    pub const IN_CHANNELS: usize = 3;
    pub const MAX_SCALES: usize = 4;

    /// Plain U-Net baseline with every skip connection.
    pub fn unet(input: usize, depth: usize, width: usize) -> Self {
        NetworkConfig {
            input_size: (input, input),
            depth,
            width,
            skip_set: SkipSet::all(depth),
            block_kind: BlockKind::Basic,
            attention: Attention::None,
            fusion: Fusion::Single,
            n_scales: 1,
            reduction: 8,
        }
    }

    pub fn with_fusion(mut self, fusion: Fusion, n_scales: usize) -> Self {
        self.fusion = fusion;
        self.n_scales = n_scales;
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        self.width << level.min(4)
    }

    pub fn downsamplings(&self) -> usize {
        self.depth - 1
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if self.depth == 0 {
            return Err(config_err("depth must be at least 1"));
        }
        if self.depth > SkipSet::MAX_LEVELS {
            return Err(config_err(format!("depth {} exceeds {}", self.depth, SkipSet::MAX_LEVELS)));
        }
        if self.width == 0 {
            return Err(config_err("width must be positive"));
        }
        if self.reduction == 0 {
            return Err(config_err("reduction rate must be positive"));
        }
        let step = 1usize << self.downsamplings();
        if h == 0 || w == 0 || h % step != 0 || w % step != 0 {
            return Err(config_err(format!(
                "input {h}x{w} must be divisible by {step} for depth {}",
                self.depth
            )));
        }
        if let Some(bad) = self.skip_set.levels().find(|&l| l + 1 >= self.depth) {
            return Err(config_err(format!(
                "skip at 1/{} has no decoder stage at depth {}",
                1u32 << bad,
                self.depth
            )));
        }
        if self.n_scales == 0 || self.n_scales > Self::MAX_SCALES.min(self.depth) {
            return Err(config_err(format!(
                "n_scales {} must be in 1..={} at depth {}",
                self.n_scales,
                Self::MAX_SCALES.min(self.depth),
                self.depth
            )));
        }
        if self.fusion == Fusion::Single && self.n_scales != 1 {
            return Err(config_err("single-map fusion requires n_scales = 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_set_round_trips_through_text() {
        let s: SkipSet = "1/8+1/4+1/2+1/1".parse().unwrap();
        assert_eq!(s.bits(), 0b1111);
        assert_eq!(s.to_string(), "1/8+1/4+1/2+1/1");
        assert_eq!("none".parse::<SkipSet>().unwrap(), SkipSet::empty());
        assert_eq!("1/4".parse::<SkipSet>().unwrap().levels().collect::<Vec<_>>(), vec![2]);
        assert!("1/3".parse::<SkipSet>().is_err());
    }

    #[test]
    fn depth_counts_stages() {
        // 400 is divisible by 16 but not by 32: five stages, four down-samplings.
        assert!(NetworkConfig::unet(400, 5, 32).validate().is_ok());
        assert!(NetworkConfig::unet(400, 6, 32).validate().is_err());
        assert_eq!(SkipSet::all(5).to_string(), "1/8+1/4+1/2+1/1");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = NetworkConfig::unet(64, 3, 8);
        assert!(base.clone().with_fusion(Fusion::Single, 2).validate().is_err());
        assert!(base.clone().with_fusion(Fusion::Adaptive, 4).validate().is_err());
        assert!(base.clone().with_fusion(Fusion::Adaptive, 3).validate().is_ok());
        let mut bad = base.clone();
        bad.skip_set = bad.skip_set.with(2);
        assert!(bad.validate().is_err());
        let mut odd = base;
        odd.input_size = (62, 64);
        assert!(odd.validate().is_err());
    }

    #[test]
    fn channel_schedule_is_capped() {
        let c = NetworkConfig::unet(64, 3, 48);
        assert_eq!(c.channels(0), 48);
        assert_eq!(c.channels(4), 768);
        assert_eq!(c.channels(6), 768);
    }
}
