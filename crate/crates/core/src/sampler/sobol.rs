use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const BITS: usize = 32;

static EMBEDDED: OnceLock<DirectionTable> = OnceLock::new();

/// Sobol' direction numbers for a fixed number of dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionTable {
    // v[dim][bit], scaled to 32-bit fixed point
    v: Vec<[u32; BITS]>,
}

impl DirectionTable {
    /// The bundled 64-dimension table.
    pub fn embedded() -> &'static DirectionTable {
        EMBEDDED.get_or_init(|| {
            Self::parse(include_str!("../../data/joe-kuo-64.txt")).expect("bundled direction table parses")
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse the `d s a m_1 ... m_s` text format. The first dimension is
    /// implicit and every later one must appear in order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v = vec![first_dimension()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('d') {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("direction table line {}: {what}", lineno + 1));
            let nums: Vec<u64> = line
                .split_whitespace()
                .map(|t| t.parse::<u64>().map_err(|_| bad("non-integer field")))
                .collect::<Result<_>>()?;
            if nums.len() < 3 {
                return Err(bad("too few fields"));
            }
            let (d, s, a) = (nums[0] as usize, nums[1] as usize, nums[2] as u32);
            if d != v.len() + 1 {
                return Err(bad("dimensions out of order"));
            }
            if s == 0 || s > BITS || nums.len() != 3 + s {
                return Err(bad("degree does not match initial numbers"));
            }
            let m = &nums[3..];
            let mut dir = [0u32; BITS];
            for j in 0..BITS {
                dir[j] = if j < s {
                    let mj = m[j];
                    if mj % 2 == 0 || mj >= 1 << (j + 1) {
                        return Err(bad("initial number must be odd and below 2^i"));
                    }
                    (mj as u32) << (BITS - 1 - j)
                } else {
                    let mut x = dir[j - s] ^ (dir[j - s] >> s);
                    for k in 1..s {
                        if (a >> (s - 1 - k)) & 1 == 1 {
                            x ^= dir[j - k];
                        }
                    }
                    x
                };
            }
            v.push(dir);
        }
        Ok(Self { v })
    }

    pub fn max_dim(&self) -> usize {
        self.v.len()
    }

    /// Fixed-point coordinates of point `index` (gray-code order).
    pub fn point(&self, index: u64, dim: usize, out: &mut [u32]) {
        let g = index ^ (index >> 1);
        for (k, o) in out.iter_mut().enumerate().take(dim) {
            let mut x = 0u32;
            let mut bits = g;
            let mut j = 0;
            while bits != 0 {
                if bits & 1 == 1 {
                    x ^= self.v[k][j];
                }
                bits >>= 1;
                j += 1;
            }
            *o = x;
        }
    }

    /// `m` consecutive points starting at `start`, flattened row-major,
    /// as fixed-point fractions of 2^32.
    pub fn generate(&self, m: usize, dim: usize, start: u64) -> Result<Vec<u32>> {
        if dim > self.max_dim() {
            return Err(Error::Config(format!(
                "Sobol dimension {dim} exceeds the direction table ({})",
                self.max_dim()
            )));
        }
        let end = start
            .checked_add(m as u64)
            .filter(|&e| e <= 1u64 << BITS)
            .ok_or_else(|| Error::Config("Sobol index range exceeds 2^32".into()))?;
        let mut out = vec![0u32; m * dim];
        if m == 0 || dim == 0 {
            return Ok(out);
        }
        let mut cur = vec![0u32; dim];
        self.point(start, dim, &mut cur);
        out[..dim].copy_from_slice(&cur);
        for (row, n) in (start + 1..end).enumerate() {
            let j = n.trailing_zeros() as usize;
            for k in 0..dim {
                cur[k] ^= self.v[k][j];
            }
            out[(row + 1) * dim..(row + 2) * dim].copy_from_slice(&cur);
        }
        Ok(out)
    }
}

fn first_dimension() -> [u32; BITS] {
    let mut dir = [0u32; BITS];
    for (j, d) in dir.iter_mut().enumerate() {
        *d = 1 << (BITS - 1 - j);
    }
    dir
}
