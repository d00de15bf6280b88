use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Attention, Fusion, NetworkConfig};
use crate::autodiff::{Mode, ParamStore, Tape, Var};
use crate::error::{shape_err, Result};
use crate::nn::{avg_fuse, BatchNorm2d, BlockConfig, ConvBlock, Conv2d, Ctx, Safs, SafsState, SeBlock};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
struct Stage {
    block: ConvBlock,
    se: Option<SeBlock>,
}

impl Stage {
    fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.block.forward(cx, x)?;
        match &self.se {
            Some(se) => se.forward(cx, y),
            None => Ok(y),
        }
    }
}

/// Decoder stage at one resolution level: upsample, conv-BN-ReLU halving the
/// channels, optional skip concatenation, then a block.
#[derive(Clone, Debug)]
struct DecoderStage {
    level: usize,
    up_conv: Conv2d,
    up_bn: BatchNorm2d,
    stage: Stage,
}

/// The encoder-decoder segmentation network with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: NetworkConfig,
    store: ParamStore<T>,
    encoder: Vec<Stage>,
    /// Ordered from the coarsest decoder level to level 0.
    decoder: Vec<DecoderStage>,
    /// 1x1 projections to `width` channels for fused maps at level > 0, by level.
    align: Vec<Option<Conv2d>>,
    safs: Option<Safs>,
    head: Conv2d,
}

/// Output of a recorded forward pass.
pub struct ForwardOutput<T> {
    pub probs: Var,
    pub safs: Option<SafsState<T>>,
}

fn make_stage<T: Real, R: rand::Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    cfg: &NetworkConfig,
    cin: usize,
    cout: usize,
    rng: &mut R,
) -> Result<Stage> {
    let block = ConvBlock::new(store, &format!("{name}.block"), BlockConfig::new(cin, cout, cfg.block_kind), rng)?;
    let se = match cfg.attention {
        Attention::Se => Some(SeBlock::new(store, &format!("{name}.se"), cout, cfg.reduction, rng)?),
        Attention::None => None,
    };
    Ok(Stage { block, se })
}

impl<T: Real> Model<T> {
    /// Builds a model with parameters drawn deterministically from `seed`.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut cin = NetworkConfig::IN_CHANNELS;
        for s in 0..cfg.depth {
            let cout = cfg.channels(s);
            encoder.push(make_stage(&mut store, &format!("enc{s}"), cfg, cin, cout, &mut rng)?);
            cin = cout;
        }

        let mut decoder = Vec::with_capacity(cfg.depth - 1);
        for level in (0..cfg.depth - 1).rev() {
            let below = cfg.channels(level + 1);
            let here = cfg.channels(level);
            let name = format!("dec{level}");
            let up_conv = Conv2d::new(&mut store, &format!("{name}.up.conv"), below, here, 3, 1, true, &mut rng)?;
            let up_bn = BatchNorm2d::new(&mut store, &format!("{name}.up.bn"), here)?;
            let cin = if cfg.skip_set.contains(level) { 2 * here } else { here };
            let stage = make_stage(&mut store, &name, cfg, cin, here, &mut rng)?;
            decoder.push(DecoderStage { level, up_conv, up_bn, stage });
        }

        let mut align = vec![None; cfg.depth];
        if cfg.fusion != Fusion::Single {
            for (level, slot) in align.iter_mut().enumerate().take(cfg.n_scales).skip(1) {
                *slot =
                    Some(Conv2d::new(&mut store, &format!("fuse.align{level}"), cfg.channels(level), cfg.width, 1, 0, true, &mut rng)?);
            }
        }
        let safs = match cfg.fusion {
            Fusion::Adaptive => Some(Safs::new(&mut store, "safs", cfg.n_scales, cfg.width, cfg.reduction, &mut rng)?),
            _ => None,
        };
        let head = Conv2d::new(&mut store, "head", cfg.width, 1, 1, 0, true, &mut rng)?;
        Ok(Model { config: cfg.clone(), store, encoder, decoder, align, safs, head })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (h, w) = self.config.input_size;
        if shape.len() != 4 || shape[1] != NetworkConfig::IN_CHANNELS || shape[2] != h || shape[3] != w {
            return Err(shape_err(format!("model expects [B, 3, {h}, {w}] input, got {shape:?}")));
        }
        if shape[0] == 0 {
            return Err(shape_err("empty batch"));
        }
        Ok(())
    }

    /// Records the network on `cx.tape` for the input variable `x` of shape
    /// `[B, 3, H, W]` and returns the probability map `[B, 1, H, W]`.
    pub fn forward_graph(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<ForwardOutput<T>> {
        self.check_input(cx.tape.shape(x))?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut h = x;
        for (s, stage) in self.encoder.iter().enumerate() {
            h = stage.forward(cx, h)?;
            if s + 1 < depth {
                skips.push(h);
                h = cx.tape.max_pool2(h)?;
            }
        }

        // Maps by level; the bottleneck sits at level depth - 1.
        let mut maps: Vec<Option<Var>> = vec![None; depth];
        maps[depth - 1] = Some(h);
        for dec in &self.decoder {
            let up = cx.tape.upsample_bilinear2(h)?;
            let up = dec.up_conv.forward(cx, up)?;
            let up = dec.up_bn.forward(cx, up)?;
            let mut y = cx.tape.relu(up);
            if self.config.skip_set.contains(dec.level) {
                y = cx.tape.concat(&[skips[dec.level], y], 1)?;
            }
            h = dec.stage.forward(cx, y)?;
            maps[dec.level] = Some(h);
        }

        let mut safs_state = None;
        let fused = match self.config.fusion {
            Fusion::Single => h,
            Fusion::Average | Fusion::Adaptive => {
                let mut aligned = Vec::with_capacity(self.config.n_scales);
                for (level, map) in maps.iter().enumerate().take(self.config.n_scales) {
                    let mut m = map.expect("every level produces a map");
                    if let Some(conv) = &self.align[level] {
                        m = conv.forward(cx, m)?;
                        for _ in 0..level {
                            m = cx.tape.upsample_bilinear2(m)?;
                        }
                    }
                    aligned.push(m);
                }
                match &self.safs {
                    Some(safs) => {
                        let (f, state) = safs.forward(cx, &aligned)?;
                        safs_state = Some(state);
                        f
                    }
                    None => avg_fuse(&mut cx.tape, &aligned)?,
                }
            }
        };
        let logits = self.head.forward(cx, fused)?;
        Ok(ForwardOutput { probs: cx.tape.sigmoid(logits), safs: safs_state })
    }

    /// Runs the network on `[B, 3, H, W]` (or a single `[3, H, W]`) input and
    /// returns probabilities of the same batch layout with one channel.
    /// Train mode uses batch statistics but does not update running stats.
    pub fn forward(&self, image: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_with_state(image, mode)?.0)
    }

    pub fn forward_with_state(&self, image: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Option<SafsState<T>>)> {
        let single = image.ndim() == 3;
        let input = if single {
            let mut s = vec![1];
            s.extend_from_slice(image.shape());
            image.clone().reshape(s)?
        } else {
            image.clone()
        };
        self.check_input(input.shape())?;
        let mut cx = Ctx::new(&self.store, mode);
        let x = cx.tape.constant(input);
        let out = self.forward_graph(&mut cx, x)?;
        let probs = cx.tape.value(out.probs).clone();
        let probs = if single {
            let s = probs.shape()[1..].to_vec();
            probs.reshape(s)?
        } else {
            probs
        };
        Ok((probs, out.safs))
    }

    /// Eval-mode prediction.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(image, Mode::Eval)
    }

    /// Fresh tape context over this model's parameters.
    pub fn context(&self, mode: Mode) -> Ctx<'_, T> {
        Ctx { tape: Tape::new(), store: &self.store, mode }
    }
}
