//! `SGCK` checkpoint files.
//!
//! Layout (little-endian):
//!
//! | bytes | content                                                    |
//! |-------|------------------------------------------------------------|
//! | 4     | magic `SGCK`                                               |
//! | 2     | format version                                             |
//! | 4 x 4 | input height, input width, depth, width (`u32`)            |
//! | 1     | skip-set bit mask (bit `s` = level `1/2^s`)                |
//! | 3     | block kind, attention, fusion codes                        |
//! | 2 x 4 | n_scales, reduction rate (`u32`)                           |
//! | 4     | number of trainable parameters `n`                         |
//! | n x   | `u16` name length, UTF-8 name, raw `SGT1` tensor           |
//! | 4     | number of buffers `m` (batch-norm running statistics)      |
//! | m x   | `u16` name length, UTF-8 name, raw `SGT1` tensor           |

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::config::{attention_code, block_code, decode_enum, fusion_code, Attention, Fusion, NetworkConfig, SkipSet};
use super::model::Model;
use crate::error::{Error, Result};
use crate::nn::BlockKind;
use crate::tensor::{AnyTensor, Real};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

fn read_bytes<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(u32::from_le_bytes(read_bytes(r)?) as usize)
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the checkpoint field")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_config<W: Write>(w: &mut W, cfg: &NetworkConfig) -> Result<()> {
    write_u32(w, cfg.input_size.0)?;
    write_u32(w, cfg.input_size.1)?;
    write_u32(w, cfg.depth)?;
    write_u32(w, cfg.width)?;
    w.write_all(&[cfg.skip_set.bits(), block_code(cfg.block_kind), attention_code(cfg.attention), fusion_code(cfg.fusion)])?;
    write_u32(w, cfg.n_scales)?;
    write_u32(w, cfg.reduction)?;
    Ok(())
}

pub fn read_config<R: Read>(r: &mut R) -> Result<NetworkConfig> {
    let h = read_u32(r)?;
    let w = read_u32(r)?;
    let depth = read_u32(r)?;
    let width = read_u32(r)?;
    let [skip, block, attention, fusion] = read_bytes::<4, _>(r)?;
    let cfg = NetworkConfig {
        input_size: (h, w),
        depth,
        width,
        skip_set: SkipSet::from_bits(skip),
        block_kind: decode_enum(block, &[BlockKind::Basic, BlockKind::Shortcut], "block kind")?,
        attention: decode_enum(attention, &[Attention::None, Attention::Se], "attention")?,
        fusion: decode_enum(fusion, &[Fusion::Single, Fusion::Average, Fusion::Adaptive], "fusion")?,
        n_scales: read_u32(r)?,
        reduction: read_u32(r)?,
    };
    cfg.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    Ok(cfg)
}

fn write_entry<T: Real, W: Write>(w: &mut W, name: &str, value: &crate::Tensor<T>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    value.write_raw(w)
}

fn read_entry<R: Read>(r: &mut R) -> Result<(String, AnyTensor)> {
    let len = u16::from_le_bytes(read_bytes(r)?) as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name).map_err(truncated)?;
    let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
    let value = AnyTensor::read_raw(r).map_err(|e| match e {
        Error::Io(io) => truncated(io),
        other => other,
    })?;
    Ok((name, value))
}

impl<T: Real> Model<T> {
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_config(w, self.config())?;
        for trainable in [true, false] {
            let entries: Vec<_> = self.params().iter().filter(|(_, p)| p.trainable == trainable).collect();
            write_u32(w, entries.len())?;
            for (_, p) in entries {
                write_entry(w, &p.name, &p.value)?;
            }
        }
        Ok(())
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.save(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a checkpoint, rebuilding the architecture from its config record
    /// and checking every stored tensor against it. Values stored in the other
    /// precision are converted.
    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let magic: [u8; 4] = read_bytes(r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("not a checkpoint (magic {magic:?})")));
        }
        let version = u16::from_le_bytes(read_bytes(r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let cfg = read_config(r)?;
        let mut model = Model::<T>::build(&cfg, 0)?;
        for trainable in [true, false] {
            let expected = model.params().iter().filter(|(_, p)| p.trainable == trainable).count();
            let count = read_u32(r)?;
            if count != expected {
                return Err(Error::Format(format!(
                    "checkpoint has {count} {} entries, architecture needs {expected}",
                    if trainable { "parameter" } else { "buffer" }
                )));
            }
            for _ in 0..count {
                let (name, value) = read_entry(r)?;
                let id = model
                    .params()
                    .id(&name)
                    .filter(|&id| model.params().get(id).trainable == trainable)
                    .ok_or_else(|| Error::Format(format!("unexpected checkpoint entry `{name}`")))?;
                let value = match value {
                    AnyTensor::F32(t) => t.cast::<T>(),
                    AnyTensor::F64(t) => t.cast::<T>(),
                };
                model
                    .params_mut()
                    .set_value(id, value)
                    .map_err(|e| Error::Format(format!("checkpoint entry mismatch: {e}")))?;
            }
        }
        Ok(model)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => Error::Missing(vec![path.display().to_string()]),
            _ => Error::Io(e),
        })?;
        Self::load(&mut BufReader::new(file))
    }
}
