//! Binary checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "SQMXCKPT"
//! version        u32
//! n_layers, n_heads, d_model, d_ff, context_len, vocab_size   u32 each
//! precision      u8       0 = single, 1 = double
//! sft_warmed     u8
//! param_count    u64
//! rng seed       32 bytes
//! rng stream     u64
//! rng word_pos   u128
//! header_digest  u64      first 8 bytes of SHA-256 over everything above
//! params         param_count x f32, in Layout order
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Layout, ModelConfig, ModelError, ModelParams, Precision};
use crate::rng::RngState;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SQMXCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub rng: RngState,
}

fn digest(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn encode_checkpoint(params: &ModelParams<f32>, rng: &RngState) -> Vec<u8> {
    let c = &params.config;
    let mut buf = Vec::with_capacity(128 + params.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab_size] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(match c.precision {
        Precision::Single => 0,
        Precision::Double => 1,
    });
    buf.push(params.sft_warmed as u8);
    buf.extend_from_slice(&(params.data.len() as u64).to_le_bytes());
    buf.extend_from_slice(&rng.seed);
    buf.extend_from_slice(&rng.stream.to_le_bytes());
    buf.extend_from_slice(&rng.word_pos.to_le_bytes());
    let d = digest(&buf);
    buf.extend_from_slice(&d.to_le_bytes());
    for w in &params.data {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.bytes.len() {
            return Err(ModelError::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let precision = match r.take(1)?[0] {
        0 => Precision::Single,
        1 => Precision::Double,
        other => return Err(ModelError::Checkpoint(format!("bad precision tag {other}"))),
    };
    let sft_warmed = match r.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(ModelError::Checkpoint(format!("bad flag byte {other}"))),
    };
    let count = r.u64()? as usize;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let header_end = r.at;
    let stored = r.u64()?;
    if stored != digest(&bytes[..header_end]) {
        return Err(ModelError::Checkpoint("header digest mismatch".into()));
    }
    let config = ModelConfig {
        n_layers: dims[0],
        n_heads: dims[1],
        d_model: dims[2],
        d_ff: dims[3],
        context_len: dims[4],
        vocab_size: dims[5],
        precision,
    };
    config.validate()?;
    let expected = Layout::new(&config).total;
    if count != expected {
        return Err(ModelError::Checkpoint(format!(
            "parameter count {count} does not match config (expected {expected})"
        )));
    }
    let raw = r.take(count * 4)?;
    if r.at != bytes.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        params: ModelParams {
            config,
            data,
            sft_warmed,
        },
        rng: RngState {
            seed,
            stream,
            word_pos,
        },
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, rng: &RngState) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(params, rng))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::rng::stream;

    fn sample() -> (ModelParams<f32>, RngState) {
        let cfg = ModelConfig {
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            context_len: 24,
            ..ModelConfig::default()
        };
        (init_params(&cfg, 5).unwrap(), RngState::capture(&stream(1, "t")))
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p, rng) = sample();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&a, &p, &rng).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded.params, p);
        assert_eq!(loaded.rng, rng);
        save_checkpoint(&b, &loaded.params, &loaded.rng).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let (p, rng) = sample();
        let bytes = encode_checkpoint(&p, &rng);
        for at in [0usize, 9, 14, 40, 70] {
            let mut bad = bytes.clone();
            bad[at] ^= 0x5a;
            assert!(decode_checkpoint(&bad).is_err(), "flip at {at} accepted");
        }
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (p, rng) = sample();
        let mut bytes = encode_checkpoint(&p, &rng);
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        let err = decode_checkpoint(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }
}
