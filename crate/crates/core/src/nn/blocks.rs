//! Convolutional blocks, channel attention and multi-scale fusion.

use rand::Rng;

use super::layers::{BatchNorm2d, Conv2d, Ctx, Linear};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Basic,
    Shortcut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kind: BlockKind,
    pub kernel: usize,
    pub padding: usize,
}

impl BlockConfig {
    pub fn new(in_channels: usize, out_channels: usize, kind: BlockKind) -> Self {
        BlockConfig { in_channels, out_channels, kind, kernel: 3, padding: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(config_err(format!("block kernel must be odd, got {}", self.kernel)));
        }
        if self.padding != (self.kernel - 1) / 2 {
            return Err(config_err(format!(
                "block padding {} does not preserve size for kernel {}",
                self.padding, self.kernel
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config_err("block channel counts must be positive"));
        }
        Ok(())
    }
}

/// Two conv-BN-ReLU stages; the shortcut variant adds the (projected) input
/// before the final ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub config: BlockConfig,
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub projection: Option<(Conv2d, BatchNorm2d)>,
}

impl ConvBlock {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, config: BlockConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let BlockConfig { in_channels, out_channels, kernel, padding, .. } = config;
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), in_channels, out_channels, kernel, padding, true, rng)?;
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), out_channels)?;
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), out_channels, out_channels, kernel, padding, true, rng)?;
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), out_channels)?;
        let projection = if config.kind == BlockKind::Shortcut && in_channels != out_channels {
            let conv = Conv2d::new(store, &format!("{name}.shortcut.conv"), in_channels, out_channels, 1, 0, false, rng)?;
            let bn = BatchNorm2d::new(store, &format!("{name}.shortcut.bn"), out_channels)?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(ConvBlock { config, conv1, bn1, conv2, bn2, projection })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let channels = cx.tape.shape(x).get(1).copied();
        if cx.tape.shape(x).len() != 4 || channels != Some(self.config.in_channels) {
            return Err(shape_err(format!(
                "block expects [B, {}, H, W] input, got {:?}",
                self.config.in_channels,
                cx.tape.shape(x)
            )));
        }
        let y = self.conv1.forward(cx, x)?;
        let y = self.bn1.forward(cx, y)?;
        let y = cx.tape.relu(y);
        let y = self.conv2.forward(cx, y)?;
        let y = self.bn2.forward(cx, y)?;
        let y = match self.config.kind {
            BlockKind::Basic => y,
            BlockKind::Shortcut => {
                let skip = match &self.projection {
                    Some((conv, bn)) => {
                        let s = conv.forward(cx, x)?;
                        bn.forward(cx, s)?
                    }
                    None => x,
                };
                cx.tape.add(y, skip)?
            }
        };
        Ok(cx.tape.relu(y))
    }
}

pub fn reduced_dim(channels: usize, reduction: usize) -> usize {
    channels.div_ceil(reduction.max(1)).max(1)
}

/// Squeeze-and-excitation channel attention.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(config_err("SE block needs positive channels and reduction"));
        }
        let hidden = reduced_dim(channels, reduction);
        Ok(SeBlock {
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let p = cx.tape.global_avg_pool(x)?;
        let h = self.fc1.forward(cx, p)?;
        let h = cx.tape.relu(h);
        let s = self.fc2.forward(cx, h)?;
        let s = cx.tape.sigmoid(s);
        cx.tape.channel_scale(x, s)
    }
}

fn check_maps<T: Real>(tape: &Tape<T>, maps: &[Var]) -> Result<Vec<usize>> {
    let first = *maps.first().ok_or_else(|| shape_err("fusion needs at least one feature map"))?;
    let shape = tape.shape(first).to_vec();
    if shape.len() != 4 {
        return Err(shape_err(format!("fusion expects [B, C, H, W] maps, got {shape:?}")));
    }
    for &m in maps {
        if tape.shape(m) != shape.as_slice() {
            return Err(shape_err(format!("fusion maps differ: {:?} vs {shape:?}", tape.shape(m))));
        }
    }
    Ok(shape)
}

/// Element-wise mean of equally shaped maps.
pub fn avg_fuse<T: Real>(tape: &mut Tape<T>, maps: &[Var]) -> Result<Var> {
    check_maps(tape, maps)?;
    if maps.len() == 1 {
        return Ok(maps[0]);
    }
    let mut total = maps[0];
    for &m in &maps[1..] {
        total = tape.add(total, m)?;
    }
    Ok(tape.scale(total, 1.0 / maps.len() as f64))
}

/// Branch-by-channel attention weights of one sample; columns sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SafsWeights {
    pub n: usize,
    pub channels: usize,
    /// Row-major `n x channels`.
    pub q: Vec<f64>,
}

impl SafsWeights {
    pub fn get(&self, branch: usize, channel: usize) -> f64 {
        self.q[branch * self.channels + channel]
    }

    pub fn branch_sum(&self, channel: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, channel)).sum()
    }
}

/// Intermediate values of a scale-adaptive selection pass, batched.
#[derive(Clone, Debug)]
pub struct SafsState<T> {
    pub n: usize,
    pub channels: usize,
    pub reduction: usize,
    /// Channel statistics `[B, C]`.
    pub p: Tensor<T>,
    /// Reduced code `[B, C_r]`.
    pub z: Tensor<T>,
    /// Pre-softmax branch logits `[B, n, C]`.
    pub logits: Tensor<T>,
    /// Attention weights `[B, n, C]`.
    pub q: Tensor<T>,
}

impl<T: Real> SafsState<T> {
    pub fn weights(&self, sample: usize) -> SafsWeights {
        let per = self.n * self.channels;
        SafsWeights {
            n: self.n,
            channels: self.channels,
            q: self.q.data()[sample * per..(sample + 1) * per].iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Scale-adaptive feature selection over `n` branches: a shared reduction FC
/// followed by one FC per branch, softmax across branches per channel.
#[derive(Clone, Debug)]
pub struct Safs {
    pub channels: usize,
    pub reduction: usize,
    pub reduce: Linear,
    pub branches: Vec<Linear>,
}

impl Safs {
    pub const DEFAULT_REDUCTION: usize = 8;

    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        n: usize,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || channels == 0 || reduction == 0 {
            return Err(config_err("SAFS needs positive branch count, channels and reduction"));
        }
        let hidden = reduced_dim(channels, reduction);
        let reduce = Linear::new(store, &format!("{name}.reduce"), channels, hidden, rng)?;
        let branches = (0..n)
            .map(|i| Linear::new(store, &format!("{name}.branch{i}"), hidden, channels, rng))
            .collect::<Result<_>>()?;
        Ok(Safs { channels, reduction, reduce, branches })
    }

    pub fn n(&self) -> usize {
        self.branches.len()
    }

    pub fn hidden(&self) -> usize {
        self.reduce.out_features
    }

    /// Logits of branch `i` from the reduced code `z`.
    pub fn mlp_branch<T: Real>(&self, cx: &mut Ctx<'_, T>, i: usize, z: Var) -> Result<Var> {
        self.branches[i].forward(cx, z)
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, maps: &[Var]) -> Result<(Var, SafsState<T>)> {
        let shape = check_maps(&cx.tape, maps)?;
        if maps.len() != self.n() {
            return Err(shape_err(format!("SAFS built for {} branches, got {}", self.n(), maps.len())));
        }
        let (b, c) = (shape[0], shape[1]);
        if c != self.channels {
            return Err(shape_err(format!("SAFS built for {} channels, got {c}", self.channels)));
        }
        let mut united = maps[0];
        for &m in &maps[1..] {
            united = cx.tape.add(united, m)?;
        }
        let p = cx.tape.global_avg_pool(united)?;
        let z = self.reduce.forward(cx, p)?;
        let z = cx.tape.relu(z);
        let mut rows = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let logits = self.mlp_branch(cx, i, z)?;
            rows.push(cx.tape.reshape(logits, &[b, 1, c])?);
        }
        let logits = cx.tape.concat(&rows, 1)?;
        let q = cx.tape.softmax(logits, 1)?;
        let mut fused = None;
        for (i, &m) in maps.iter().enumerate() {
            let qi = cx.tape.narrow(q, 1, i, 1)?;
            let qi = cx.tape.reshape(qi, &[b, c])?;
            let weighted = cx.tape.channel_scale(m, qi)?;
            fused = Some(match fused {
                None => weighted,
                Some(acc) => cx.tape.add(acc, weighted)?,
            });
        }
        let state = SafsState {
            n: self.n(),
            channels: c,
            reduction: self.reduction,
            p: cx.tape.value(p).clone(),
            z: cx.tape.value(z).clone(),
            logits: cx.tape.value(logits).clone(),
            q: cx.tape.value(q).clone(),
        };
        Ok((fused.expect("at least one map"), state))
    }
}
