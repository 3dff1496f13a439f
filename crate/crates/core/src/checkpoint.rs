//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      4 bytes  "SPE3"
//! version    u16
//! hash       32 bytes  dynamics hash of the producing config
//! time       f64
//! step       u64
//! root_seed  u64
//! stream_id  u64
//! cum_h3     f64       running integral of ||Y||_3^2
//! nh, nz     u32, u32
//! count      u64       number of stored values
//! values     count x f64, slots v1, v2, S in storage order
//! ```
//!
//! The raw storage coefficients are written rather than eigen-coordinates so
//! that a save/load cycle is bit-exact.

use std::path::Path;

use crate::error::{Result, SpeError};
use crate::rng::NoiseStream;
use crate::spectral::Truncation;
use crate::state::StateY;

pub const MAGIC: &[u8; 4] = b"SPE3";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 32 + 8 * 5 + 4 * 2 + 8;

fn ck(msg: impl Into<String>) -> SpeError {
    SpeError::Checkpoint(msg.into())
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub time: f64,
    pub step: u64,
    pub stream: NoiseStream,
    pub cumulative_h3: f64,
    pub state: StateY,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = self.state.truncation();
        let fields = self.state.fields();
        let count: usize = fields.iter().map(|f| f.data().len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.time.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.stream.root_seed.to_le_bytes());
        out.extend_from_slice(&self.stream.stream_id.to_le_bytes());
        out.extend_from_slice(&self.cumulative_h3.to_le_bytes());
        out.extend_from_slice(&(t.nh as u32).to_le_bytes());
        out.extend_from_slice(&(t.nz as u32).to_le_bytes());
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for f in fields {
            for v in f.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(ck(format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(ck("bad magic; not a checkpoint file"));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = u16::from_le_bytes(r.take());
        if version != VERSION {
            return Err(ck(format!("unsupported version {version}")));
        }
        let config_hash = r.take::<32>();
        let time = r.f64();
        let step = r.u64();
        let stream = NoiseStream { root_seed: r.u64(), stream_id: r.u64() };
        let cumulative_h3 = r.f64();
        let (nh, nz) = (r.u32() as usize, r.u32() as usize);
        let count = r.u64() as usize;
        let trunc = Truncation::new(nh, nz).map_err(|e| ck(format!("bad truncation: {e}")))?;
        let mut state = StateY::zeros(trunc);
        let expected: usize = state.fields().iter().map(|f| f.data().len()).sum();
        if count != expected {
            return Err(ck(format!("{count} stored values, truncation ({nh}, {nz}) needs {expected}")));
        }
        if bytes.len() != HEADER_LEN + 8 * count {
            return Err(ck(format!("file is {} bytes, expected {}", bytes.len(), HEADER_LEN + 8 * count)));
        }
        for f in state.fields_mut() {
            for v in f.data_mut() {
                *v = r.f64();
            }
        }
        Ok(Self { config_hash, time, step, stream, cumulative_h3, state })
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads and checks the hash against the current config. A mismatch is
    /// an error unless `force` is set.
    pub fn load(path: &Path, expected_hash: &[u8; 32], force: bool) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ck(format!("cannot read {}: {e}", path.display())))?;
        let c = Self::from_bytes(&bytes)?;
        if !force && &c.config_hash != expected_hash {
            return Err(ck(format!(
                "{} was written under a different configuration (hash {}, current {})",
                path.display(),
                crate::integrator::hex(&c.config_hash),
                crate::integrator::hex(expected_hash)
            )));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Spectrum;
    use crate::state::{make_initial_state, InitialKind};

    fn sample() -> Checkpoint {
        let s = Spectrum::new(2, 3).unwrap();
        let state = make_initial_state(&s, &InitialKind::RandomSmooth { seed: 4, decay: 1.0, amplitude: 1.0 });
        Checkpoint {
            config_hash: [7; 32],
            time: 0.125,
            step: 125,
            stream: NoiseStream::trajectory(9, 3),
            cumulative_h3: 1.0 / 3.0,
            state,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p, &[7; 32], false).unwrap();
        assert!(back.state.bit_equal(&c.state));
        assert_eq!((back.step, back.stream, back.time.to_bits()), (c.step, c.stream, c.time.to_bits()));
        assert_eq!(back.cumulative_h3.to_bits(), c.cumulative_h3.to_bits());
        let q = dir.path().join("b.ckpt");
        back.save(&q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn hash_mismatch_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        sample().save(&p).unwrap();
        assert!(matches!(Checkpoint::load(&p, &[0; 32], false), Err(SpeError::Checkpoint(_))));
        assert!(Checkpoint::load(&p, &[0; 32], true).is_ok());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
    }
}
