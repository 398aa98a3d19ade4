//! Binary snapshot of a `(ModeSet, FieldState)` pair for resumable runs.
//!
//! All integers and floats are little-endian and fixed width:
//!
//! ```text
//! magic            8 bytes   "TDSNAP\0\0"
//! version          u32       currently 1
//! d                u32
//! n_modes          u64
//! digest           u64       mode-set digest
//! seed             u64       mode-set seed
//! params_len       u32
//! params           params_len bytes of UTF-8 JSON
//! has_config       u8        0 or 1
//! n_shells         u64       present iff has_config = 1
//! modes_per_shell  u64       "
//! k_min_ratio      f64       "
//! target_energy    f64
//! energy_bound     f64
//! k                n_modes * d f64
//! weight           n_modes f64
//! t                f64
//! step             u64
//! rng_key          u64
//! xi               n_modes * (d-1) f64
//! eta              n_modes * (d-1) f64
//! checksum         32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Bases, decay rates and amplitude scales are recomputed on load, and the
//! recomputed digest must match the stored one.

use crate::field::{FieldError, FieldState, ModeConfig, ModeSet};
use crate::spectrum::ModelParams;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"TDSNAP\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot is truncated")]
    Truncated,
    #[error("snapshot checksum mismatch")]
    Checksum,
    #[error("snapshot content is inconsistent: {0}")]
    Corrupt(String),
    #[error("{0}")]
    Field(#[from] FieldError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).ok_or(SnapshotError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(SnapshotError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SnapshotError> {
        let bytes = self.take(n.checked_mul(8).ok_or(SnapshotError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn encode(modes: &ModeSet, state: &FieldState) -> Result<Vec<u8>, SnapshotError> {
    if state.modes_digest() != modes.digest() {
        return Err(FieldError::ModeSetMismatch { modes: modes.digest(), state: state.modes_digest() }.into());
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(modes.d as u32);
    w.u64(modes.len() as u64);
    w.u64(modes.digest);
    w.u64(modes.seed);
    let json = serde_json::to_vec(&modes.params).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    w.u32(json.len() as u32);
    w.0.extend_from_slice(&json);
    match modes.config {
        Some(c) => {
            w.u8(1);
            w.u64(c.n_shells as u64);
            w.u64(c.modes_per_shell as u64);
            w.f64(c.k_min_ratio);
        }
        None => w.u8(0),
    }
    w.f64(modes.target_energy);
    w.f64(modes.energy_error_bound);
    w.f64s(&modes.k);
    w.f64s(&modes.weight);
    w.f64(state.t);
    w.u64(state.step);
    w.u64(state.rng_key());
    w.f64s(&state.xi);
    w.f64s(&state.eta);
    let sum = Sha256::digest(&w.0);
    w.0.extend_from_slice(&sum);
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<(ModeSet, FieldState), SnapshotError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(SnapshotError::Truncated);
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err(SnapshotError::Checksum);
    }
    let d = r.u32()? as usize;
    let n = r.u64()? as usize;
    let digest = r.u64()?;
    let seed = r.u64()?;
    let len = r.u32()? as usize;
    let params: ModelParams =
        serde_json::from_slice(r.take(len)?).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    if params.d != d || d < 2 {
        return Err(SnapshotError::Corrupt(format!("header d = {d}, params d = {}", params.d)));
    }
    let config = match r.u8()? {
        0 => None,
        1 => Some(ModeConfig::new(r.u64()? as usize, r.u64()? as usize, r.f64()?)),
        x => return Err(SnapshotError::Corrupt(format!("config flag {x}"))),
    };
    let target_energy = r.f64()?;
    let energy_error_bound = r.f64()?;
    let k = r.f64s(n.checked_mul(d).ok_or(SnapshotError::Truncated)?)?;
    let weight = r.f64s(n)?;
    let t = r.f64()?;
    let step = r.u64()?;
    let key = r.u64()?;
    let xi = r.f64s(n * (d - 1))?;
    let eta = r.f64s(n * (d - 1))?;
    if r.pos != body.len() {
        return Err(SnapshotError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let mut modes = ModeSet::from_wavevectors(&params, k, weight, seed)?;
    modes.config = config;
    modes.target_energy = target_energy;
    modes.energy_error_bound = energy_error_bound;
    modes.digest = modes.compute_digest();
    if modes.digest != digest {
        return Err(SnapshotError::Corrupt(format!(
            "stored digest {digest:016x}, recomputed {:016x}",
            modes.digest
        )));
    }
    let state = FieldState::from_parts(&modes, t, step, key, xi, eta);
    Ok((modes, state))
}

pub fn save(path: &std::path::Path, modes: &ModeSet, state: &FieldState) -> Result<(), SnapshotError> {
    std::fs::write(path, encode(modes, state)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<(ModeSet, FieldState), SnapshotError> {
    decode(&std::fs::read(path)?)
}
