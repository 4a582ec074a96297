//! Binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "AMIDCKPT"
//! version    u32
//! fp_len     u32, then fingerprint bytes (UTF-8)
//! step       u64
//! rng        seed [u8; 32], stream u64, word_pos u128
//! model      channels u32, depth u32, time_embed_dim u32, height u32, width u32
//! adam_step  u64
//! tensors    u32 count, then per tensor:
//!              name_len u32, name bytes, rank u32, dims u64 × rank,
//!              value f32 × len, adam m f32 × len, adam v f32 × len
//! checksum   32 bytes, SHA-256 of everything above
//! ```

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::{Result, TrainError, TrainState};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::tensor::{AdamState, Parameters, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encode(state: &TrainState) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&(state.fingerprint.len() as u32).to_le_bytes());
    b.extend_from_slice(state.fingerprint.as_bytes());
    b.extend_from_slice(&state.step.to_le_bytes());
    b.extend_from_slice(&state.rng.get_seed());
    b.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    b.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    let m = &state.model;
    for v in [
        m.config.channels,
        m.config.depth,
        m.config.time_embed_dim,
        m.height,
        m.width,
    ] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.extend_from_slice(&state.adam.step.to_le_bytes());
    b.extend_from_slice(&(m.params.len() as u32).to_le_bytes());
    for (i, (name, t)) in m.params.iter().enumerate() {
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for src in [t, &state.adam.m[i], &state.adam.v[i]] {
            for v in src.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    b
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Checkpoint("invalid UTF-8".into()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| TrainError::Checkpoint("tensor too large".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Reads a checkpoint. With `expected_fingerprint`, a different stamp is
/// refused.
pub fn load_checkpoint(path: &Path, expected_fingerprint: Option<&str>) -> Result<TrainState> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(TrainError::Checkpoint("not an amid checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(TrainError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version(version));
    }
    let fingerprint = r.string()?;
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            return Err(TrainError::Fingerprint {
                expected: expected.to_string(),
                found: fingerprint,
            });
        }
    }
    let step = r.u64()?;
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    let mut rng = crate::rng::Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = DenoiserConfig {
        channels: dims[0],
        depth: dims[1],
        time_embed_dim: dims[2],
    };
    let adam_step = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = Parameters::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product();
        params.push(name, Tensor::new(shape.clone(), r.floats(len)?)?);
        m.push(Tensor::new(shape.clone(), r.floats(len)?)?);
        v.push(Tensor::new(shape, r.floats(len)?)?);
    }
    if r.pos != body.len() {
        return Err(TrainError::Checkpoint("trailing bytes".into()));
    }
    // the layout must match what this config builds
    let reference = Denoiser::init(config, dims[3], dims[4], 0)?;
    let layout_ok = reference.params.len() == params.len()
        && reference
            .params
            .iter()
            .zip(params.iter())
            .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
    if !layout_ok {
        return Err(TrainError::Checkpoint(
            "tensor table does not match the model config".into(),
        ));
    }
    Ok(TrainState {
        model: Denoiser {
            config,
            height: dims[3],
            width: dims[4],
            params,
        },
        adam: AdamState { step: adam_step, m, v },
        step,
        rng,
        fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TrainState {
        let cfg = DenoiserConfig {
            channels: 8,
            depth: 2,
            time_embed_dim: 8,
        };
        let mut s = TrainState::new(Denoiser::init(cfg, 8, 8, 3).unwrap(), 5, "abc123");
        use rand::Rng;
        let _: u64 = s.rng.random();
        s.step = 7;
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let s = state();
        save_checkpoint(&s, &p).unwrap();
        assert_eq!(load_checkpoint(&p, Some("abc123")).unwrap(), s);
        assert!(!dir.path().join("c.ckpt.tmp").exists());
    }

    #[test]
    fn fingerprint_and_tampering_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&state(), &p).unwrap();
        assert!(matches!(
            load_checkpoint(&p, Some("other")),
            Err(TrainError::Fingerprint { .. })
        ));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p, None), Err(TrainError::Checkpoint(_))));
    }

    #[test]
    fn version_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let mut bytes = encode(&state());
        bytes.truncate(bytes.len() - 32);
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_checkpoint(&p, None), Err(TrainError::Version(2))));
    }
}
