//! Binary container for block weights and tensor dumps.
//!
//! All integers are little-endian `u32` unless noted.
//!
//! ```text
//! magic        4 bytes  "YCDA"
//! version      u32      FORMAT_VERSION
//! kind         u32      0 = block weights, 1 = tensor dump
//! -- kind 0 only --
//! color        u32      0 = BT.601 full range, 1 = BT.709 full range
//! unshuffle    u32
//! activation   u32      0 = identity, 1 = SiLU
//! multiplier   u32
//! kernel_size  u32
//! reduction    u32
//! variant      u32      0 = ica, 1 = gap_only, 2 = var_only
//! mlp_bias     u32      0 or 1
//! seed         u64
//! -- both --
//! count        u32      number of records
//! record       name_len u32, name (UTF-8), rank u32, dims u32 x rank,
//!              values f64 x prod(dims)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlockConfig, YcdaBlock};
use crate::colorspace::ColorStandard;
use crate::ica::{AttentionVariant, IcaConfig};
use crate::stem::{Activation, StemConfig};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"YCDA";
pub const FORMAT_VERSION: u32 = 1;

const KIND_BLOCK: u32 = 0;
const KIND_TENSORS: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic {0:?}, expected \"YCDA\"")]
    BadMagic(Vec<u8>),

    #[error("unsupported format version {found} (this build reads {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },

    #[error("file holds kind {found}, expected kind {expected}")]
    WrongKind { expected: u32, found: u32 },

    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid config in header: {0}")]
    InvalidConfig(String),

    #[error("parameter {name}: shape {found:?} does not match config, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unknown parameter record {0}")]
    UnknownParameter(String),

    #[error("missing parameter record {0}")]
    MissingParameter(String),

    #[error("duplicate parameter record {0}")]
    DuplicateParameter(String),

    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>), FormatError> {
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| FormatError::MalformedRecord("name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank == 0 {
            return Err(FormatError::MalformedRecord(format!("{name}: rank 0")));
        }
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        if dims.contains(&0) {
            return Err(FormatError::MalformedRecord(format!(
                "{name}: zero extent in {dims:?}"
            )));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| FormatError::MalformedRecord(format!("{name}: shape overflows")))?;
        let bytes = self.take(count)?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((name, dims, values))
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(kind: u32) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, kind);
    out
}

fn read_header(r: &mut Reader<'_>, kind: u32) -> Result<(), FormatError> {
    let magic = r.take(4).map_err(|_| FormatError::BadMagic(r.buf.to_vec()))?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic.to_vec()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let found = r.u32()?;
    if found != kind {
        return Err(FormatError::WrongKind {
            expected: kind,
            found,
        });
    }
    Ok(())
}

pub fn encode_block(block: &YcdaBlock) -> Vec<u8> {
    let mut out = header(KIND_BLOCK);
    let cfg = &block.config;
    for v in [
        cfg.color.code(),
        cfg.stem.unshuffle_factor as u32,
        cfg.stem.activation.code(),
        cfg.stem.multiplier as u32,
        cfg.stem.kernel_size as u32,
        cfg.ica.reduction as u32,
        cfg.ica.variant.code(),
        u32::from(cfg.ica.mlp_bias),
    ] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&block.seed.to_le_bytes());
    let params = block.parameters();
    put_u32(&mut out, params.len() as u32);
    for (name, t) in params {
        put_record(&mut out, name, t);
    }
    out
}

pub fn decode_block(buf: &[u8]) -> Result<YcdaBlock, FormatError> {
    let mut r = Reader { buf, pos: 0 };
    read_header(&mut r, KIND_BLOCK)?;
    let mut fields = [0u32; 8];
    for f in &mut fields {
        *f = r.u32()?;
    }
    let seed = r.u64()?;
    let bad = |what: &str, v: u32| FormatError::InvalidConfig(format!("{what} code {v}"));
    let config = BlockConfig {
        color: ColorStandard::from_code(fields[0]).ok_or_else(|| bad("color", fields[0]))?,
        stem: StemConfig {
            unshuffle_factor: fields[1] as usize,
            activation: Activation::from_code(fields[2])
                .ok_or_else(|| bad("activation", fields[2]))?,
            multiplier: fields[3] as usize,
            kernel_size: fields[4] as usize,
        },
        ica: IcaConfig {
            reduction: fields[5] as usize,
            variant: AttentionVariant::from_code(fields[6])
                .ok_or_else(|| bad("variant", fields[6]))?,
            mlp_bias: match fields[7] {
                0 => false,
                1 => true,
                v => return Err(bad("mlp_bias", v)),
            },
        },
    };
    let mut block = YcdaBlock::zeros(config, seed)
        .map_err(|e| FormatError::InvalidConfig(e.to_string()))?;
    let expected: Vec<&'static str> = block.parameters().iter().map(|(n, _)| *n).collect();
    let mut seen = vec![false; expected.len()];

    let count = r.u32()?;
    for _ in 0..count {
        let (name, dims, values) = r.record()?;
        let slot = expected
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| FormatError::UnknownParameter(name.clone()))?;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(FormatError::DuplicateParameter(name));
        }
        let target = block.parameter_mut(&name).expect("name comes from parameters()");
        if target.shape() != dims.as_slice() {
            return Err(FormatError::ShapeMismatch {
                name,
                expected: target.shape().to_vec(),
                found: dims,
            });
        }
        target.data_mut().copy_from_slice(&values);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(FormatError::MissingParameter(expected[i].to_string()));
    }
    r.finish()?;
    block
        .check_consistent()
        .map_err(|e| FormatError::InvalidConfig(e.to_string()))?;
    Ok(block)
}

pub fn encode_tensors(records: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = header(KIND_TENSORS);
    put_u32(&mut out, records.len() as u32);
    for (name, t) in records {
        put_record(&mut out, name, t);
    }
    out
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>, FormatError> {
    let mut r = Reader { buf, pos: 0 };
    read_header(&mut r, KIND_TENSORS)?;
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let (name, dims, values) = r.record()?;
        let t = Tensor::from_vec(&dims, values)
            .map_err(|e| FormatError::MalformedRecord(e.to_string()))?;
        out.push((name, t));
    }
    r.finish()?;
    Ok(out)
}

/// Companion manifest path: `weights.ycda` becomes `weights.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Human-readable description of a weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: BlockConfig,
    pub param_count: usize,
    pub parameters: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn for_block(block: &YcdaBlock) -> Self {
        Self {
            format: "YCDA".into(),
            version: FORMAT_VERSION,
            seed: block.seed,
            config: block.config,
            param_count: block.param_count(),
            parameters: block
                .parameters()
                .into_iter()
                .map(|(name, t)| ManifestEntry {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        }
    }
}

/// Writes the weight file and its manifest next to it.
pub fn save_block(block: &YcdaBlock, path: &Path) -> Result<(), FormatError> {
    fs::write(path, encode_block(block))?;
    let manifest = serde_json::to_string_pretty(&Manifest::for_block(block))
        .expect("manifest is always serializable");
    fs::write(manifest_path(path), manifest + "\n")?;
    Ok(())
}

pub fn load_block(path: &Path) -> Result<YcdaBlock, FormatError> {
    decode_block(&fs::read(path)?)
}

pub fn save_tensors(path: &Path, records: &[(&str, &Tensor)]) -> Result<(), FormatError> {
    fs::write(path, encode_tensors(records))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, FormatError> {
    decode_tensors(&fs::read(path)?)
}
