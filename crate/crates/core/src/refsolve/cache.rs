use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{solve_reference, ReferenceSolution};
use crate::error::{Error, Result};
use crate::pde::PDEProblem;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CPLREF01";

/// Hash of everything that determines a reference solve.
pub fn cache_key<S: Scalar>(problem: &PDEProblem<S>, nx: usize, dt: f64, t_end: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(format!("{}|{:?}|{:?}|{nx}|{dt:e}|{t_end:e}|{}", problem.name, problem.kind, problem.initial, super::DEFAULT_STAMPS));
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn put(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn write_cache(path: &Path, key: u64, sol: &ReferenceSolution) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put(&mut buf, key);
    let name = sol.problem.as_bytes();
    put(&mut buf, name.len() as u64);
    buf.extend_from_slice(name);
    for v in [sol.dim as u64, sol.nx as u64, sol.periodic as u64, sol.stamps.len() as u64] {
        put(&mut buf, v);
    }
    let mut floats = vec![sol.dx, sol.lower];
    floats.extend(&sol.stamps);
    floats.extend(&sol.c1);
    floats.extend(&sol.c2);
    for s in &sol.snapshots {
        floats.extend(s);
    }
    for f in floats {
        buf.extend_from_slice(&f.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Read a cache file; `Ok(None)` when its key differs from `key`.
pub fn read_cache(path: &Path, key: u64) -> Result<Option<ReferenceSolution>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || Error::Format(format!("corrupt reference cache {}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad());
    }
    let mut pos = 8;
    let word = |pos: &mut usize| -> Result<u64> {
        let w = bytes.get(*pos..*pos + 8).ok_or_else(bad)?;
        *pos += 8;
        Ok(u64::from_le_bytes(w.try_into().unwrap()))
    };
    if word(&mut pos)? != key {
        return Ok(None);
    }
    let name_len = word(&mut pos)? as usize;
    let name = String::from_utf8(bytes.get(pos..pos + name_len).ok_or_else(bad)?.to_vec()).map_err(|_| bad())?;
    pos += name_len;
    let dim = word(&mut pos)? as usize;
    let nx = word(&mut pos)? as usize;
    let periodic = word(&mut pos)? == 1;
    let ns = word(&mut pos)? as usize;
    let cells = nx.checked_pow(dim as u32).ok_or_else(bad)?;
    let count = 2 + 3 * ns + ns * cells;
    if bytes.len() != pos + 8 * count {
        return Err(bad());
    }
    let f: Vec<f64> = bytes[pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut at = 2;
    let mut take = |n: usize| {
        let v = f[at..at + n].to_vec();
        at += n;
        v
    };
    let stamps = take(ns);
    let c1 = take(ns);
    let c2 = take(ns);
    let snapshots = (0..ns).map(|_| take(cells)).collect();
    Ok(Some(ReferenceSolution { problem: name, dim, nx, dx: f[0], lower: f[1], periodic, stamps, snapshots, c1, c2 }))
}

pub fn cache_path<S: Scalar>(dir: &Path, problem: &PDEProblem<S>, nx: usize, dt: f64, t_end: f64) -> PathBuf {
    dir.join(format!("{}_nx{nx}_dt{dt:e}_T{t_end}.ref", problem.name))
}

/// Cached solve; the flag is true on a cache hit.
pub fn load_or_solve<S: Scalar>(
    problem: &PDEProblem<S>,
    nx: usize,
    dt: f64,
    t_end: f64,
    dir: &Path,
) -> Result<(ReferenceSolution, bool)> {
    let key = cache_key(problem, nx, dt, t_end);
    let path = cache_path(dir, problem, nx, dt, t_end);
    if path.exists() {
        match read_cache(&path, key) {
            Ok(Some(sol)) => {
                log::info!("reference cache hit: {}", path.display());
                return Ok((sol, true));
            }
            Ok(None) => log::info!("reference cache key mismatch, recomputing: {}", path.display()),
            Err(e) => log::warn!("unreadable reference cache ({e}), recomputing"),
        }
    }
    let sol = solve_reference(problem, nx, dt, t_end)?;
    write_cache(&path, key, &sol)?;
    Ok((sol, false))
}
