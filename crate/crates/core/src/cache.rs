//! Binary cache of assembled collision operators.
//!
//! Layout (little endian): 8-byte magic, u64 N, six f64 parameters
//! (n_per_axis, v_max, γ, b, n_angle, ε), then ν (N values), K and L
//! (N² values each, row-major).

use crate::collision::{CollisionKernel, CollisionOperator};
use crate::error::{Error, Result};
use crate::velocity::VelocityGrid;
use faer::Mat;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"KGAPOP01";

fn params(grid: &VelocityGrid, kernel: &CollisionKernel) -> [f64; 6] {
    [
        grid.n_per_axis as f64,
        grid.v_max,
        kernel.gamma,
        kernel.b_coeff,
        kernel.n_angle as f64,
        kernel.epsilon_reg,
    ]
}

/// Hex sha256 over the exact bit patterns of the parameters.
pub fn cache_key(grid: &VelocityGrid, kernel: &CollisionKernel) -> String {
    let mut h = Sha256::new();
    h.update(MAGIC);
    for p in params(grid, kernel) {
        h.update(p.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn cache_path(dir: &Path, grid: &VelocityGrid, kernel: &CollisionKernel) -> PathBuf {
    dir.join(format!("operator_{}.bin", &cache_key(grid, kernel)[..16]))
}

pub fn encode(grid: &VelocityGrid, kernel: &CollisionKernel, op: &CollisionOperator) -> Vec<u8> {
    let n = op.len();
    let mut out = Vec::with_capacity(8 + 8 + 48 + 8 * (n + 2 * n * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for p in params(grid, kernel) {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for x in &op.nu {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for m in [&op.k, &op.l] {
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    out
}

/// None when the bytes do not hold an operator for exactly these parameters.
pub fn decode(bytes: &[u8], grid: &VelocityGrid, kernel: &CollisionKernel) -> Option<CollisionOperator> {
    let n = grid.len();
    if bytes.len() != 8 + 8 + 48 + 8 * (n + 2 * n * n) || &bytes[..8] != MAGIC {
        return None;
    }
    let mut pos = 8;
    let mut next_u64 = || {
        let v = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        pos += 8;
        v
    };
    if next_u64() as usize != n {
        return None;
    }
    let want = params(grid, kernel);
    let mut floats = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for w in want {
        if floats.next()?.to_bits() != w.to_bits() {
            return None;
        }
    }
    let nu: Vec<f64> = floats.by_ref().take(n).collect();
    let kv: Vec<f64> = floats.by_ref().take(n * n).collect();
    let lv: Vec<f64> = floats.take(n * n).collect();
    Some(CollisionOperator {
        nu,
        k: Mat::from_fn(n, n, |i, j| kv[i * n + j]),
        l: Mat::from_fn(n, n, |i, j| lv[i * n + j]),
        c1_estimate: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Bypassed,
}

/// Loads the operator from `dir` or assembles and stores it.
pub fn load_or_assemble(
    dir: Option<&Path>,
    grid: &VelocityGrid,
    kernel: &CollisionKernel,
) -> Result<(CollisionOperator, CacheStatus)> {
    let Some(dir) = dir else {
        return Ok((CollisionOperator::assemble(grid, kernel)?, CacheStatus::Bypassed));
    };
    let path = cache_path(dir, grid, kernel);
    if let Ok(bytes) = std::fs::read(&path) {
        if let Some(op) = decode(&bytes, grid, kernel) {
            return Ok((op, CacheStatus::Hit));
        }
        log::warn!("ignoring stale operator cache {}", path.display());
    }
    let op = CollisionOperator::assemble(grid, kernel)?;
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    std::fs::write(&path, encode(grid, kernel, &op))?;
    Ok((op, CacheStatus::Miss))
}
