use std::io::{Read, Write};
use std::path::Path;

use super::MLPParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CPLNET01";

/// Write `MAGIC | shape hash u64 | count u64 | f64 values`, little-endian.
pub fn save_checkpoint<S: Scalar>(params: &MLPParams<S>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&params.shape_hash().to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.data {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint into parameters shaped like `template`.
pub fn load_checkpoint<S: Scalar>(template: &MLPParams<S>, path: &Path) -> Result<MLPParams<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if word(8) != template.shape_hash() {
        return Err(Error::Format("checkpoint was written for a different network shape".into()));
    }
    let n = word(16) as usize;
    if n != template.len() || bytes.len() != 24 + 8 * n {
        return Err(Error::Format("checkpoint length mismatch".into()));
    }
    let mut out = template.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = S::lit(f64::from_le_bytes(bytes[24 + 8 * i..32 + 8 * i].try_into().unwrap()));
    }
    Ok(out)
}
