//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "LMLMCKPT"
//! version      u32      currently 1
//! step         u64      optimizer steps taken
//! config       6 × u32  n_layers n_heads d_model d_ff max_seq_len vocab_size
//!              2 × f64  dropout_rate mask_rate
//! vocab_hash   32 bytes SHA-256 of the vocabulary file
//! n_tensors    u32
//! per tensor:  u16 name length, name (UTF-8), u8 rank, rank × u32 dims,
//!              product(dims) × f32 values
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ModelParameters};
use crate::tokenizer::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LMLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint was trained with a different vocabulary")]
    VocabMismatch,
    #[error("invalid config in checkpoint: {0}")]
    InvalidConfig(String),
    #[error("trailing bytes after last tensor")]
    TrailingBytes,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: [u8; 32],
    pub step: u64,
    pub params: ModelParameters,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, vocab: &Vocab, step: u64, params: ModelParameters) -> Self {
        Self {
            config,
            vocab_hash: vocab.hash(),
            step,
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for v in [c.n_layers, c.n_heads, c.d_model, c.d_ff, c.max_seq_len, c.vocab_size] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.dropout_rate.to_le_bytes());
        out.extend_from_slice(&c.mask_rate.to_le_bytes());
        out.extend_from_slice(&self.vocab_hash);
        let tensors = self.params.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let shape = t.shape();
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint, validating every tensor shape against the
    /// embedded config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let step = r.u64()?;
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            n_layers: dims[0],
            n_heads: dims[1],
            d_model: dims[2],
            d_ff: dims[3],
            max_seq_len: dims[4],
            vocab_size: dims[5],
            dropout_rate: r.f64()?,
            mask_rate: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;
        let vocab_hash: [u8; 32] = r.take(32)?.try_into().unwrap();

        let mut params = ModelParameters::zeros(&config);
        let expected = params.shapes();
        let n = r.u32()? as usize;
        if n != expected.len() {
            return Err(CheckpointError::ShapeMismatch {
                name: "<tensor count>".into(),
                expected: vec![expected.len()],
                found: vec![n],
            });
        }
        let mut flat = Vec::with_capacity(params.num_parameters());
        for (exp_name, exp_shape) in &expected {
            let len = r.u16()? as usize;
            let name = String::from_utf8_lossy(r.take(len)?).into_owned();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            if &name != exp_name || &shape != exp_shape {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: exp_shape.clone(),
                    found: shape,
                });
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count * 4)?;
            flat.extend(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
            );
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::TrailingBytes);
        }
        params.set_flat(&flat);
        Ok(Self {
            config,
            vocab_hash,
            step,
            params,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint and checks that it was trained with `vocab`.
    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self, CheckpointError> {
        let ckpt = Self::from_bytes(&std::fs::read(path)?)?;
        ckpt.check_vocab(vocab)?;
        Ok(ckpt)
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<(), CheckpointError> {
        if self.vocab_hash != vocab.hash() || self.config.vocab_size != vocab.len() {
            return Err(CheckpointError::VocabMismatch);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Checkpoint, Vocab) {
        let vocab = Vocab::from_tokens(["a", "b", "##c"]).unwrap();
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            d_ff: 6,
            max_seq_len: 5,
            vocab_size: vocab.len(),
            dropout_rate: 0.1,
            mask_rate: 0.2,
        };
        let mut params = ModelParameters::init_with_std(&cfg, 1, 0.5);
        params.round_to_f32();
        (Checkpoint::new(cfg, &vocab, 42, params), vocab)
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let (ckpt, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path, &vocab).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.hash(), ckpt.hash());
    }

    #[test]
    fn rejects_other_vocab() {
        let (ckpt, _) = sample();
        let other = Vocab::from_tokens(["a", "b", "##d"]).unwrap();
        assert!(matches!(ckpt.check_vocab(&other), Err(CheckpointError::VocabMismatch)));
    }

    #[test]
    fn rejects_corruption() {
        let (ckpt, _) = sample();
        let bytes = ckpt.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(9))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::TrailingBytes)));
        // d_ff field altered: tensor shapes no longer match the config
        let mut bad = bytes;
        let d_ff_offset = 8 + 4 + 8 + 3 * 4;
        bad[d_ff_offset] = 7;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::ShapeMismatch { .. })));
    }
}
