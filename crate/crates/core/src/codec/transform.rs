//! Orthonormal 2-D DCT-II on square blocks.

use std::sync::OnceLock;

use super::CodecError;

pub const SUPPORTED_SIZES: [usize; 4] = [4, 8, 16, 32];

/// Row `k` holds basis vector `k`: `alpha_k * cos(pi * (2n + 1) * k / 2N)`.
fn basis(n: usize) -> Result<&'static [f64], CodecError> {
    static CACHE: [OnceLock<Vec<f64>>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = SUPPORTED_SIZES
        .iter()
        .position(|&s| s == n)
        .ok_or(CodecError::BlockSize(n))?;
    Ok(CACHE[slot].get_or_init(|| {
        let nf = n as f64;
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                m[k * n + i] = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
            }
        }
        m
    }))
}

/// `out = a * b` for `n x n` row-major matrices, with optional transposes.
fn matmul(a: &[f64], ta: bool, b: &[f64], tb: bool, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let av = if ta { a[k * n + i] } else { a[i * n + k] };
                let bv = if tb { b[j * n + k] } else { b[k * n + j] };
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn check_len(block: &[f64], n: usize) -> Result<(), CodecError> {
    if block.len() != n * n {
        return Err(CodecError::Dimensions(format!(
            "{} values for a {n}x{n} block",
            block.len()
        )));
    }
    Ok(())
}

/// Forward transform `C * B * C^T` of a row-major `n x n` block.
pub fn dct2d(block: &[f64], n: usize) -> Result<Vec<f64>, CodecError> {
    let c = basis(n)?;
    check_len(block, n)?;
    Ok(matmul(&matmul(c, false, block, false, n), false, c, true, n))
}

/// Inverse transform `C^T * X * C`.
pub fn idct2d(coefs: &[f64], n: usize) -> Result<Vec<f64>, CodecError> {
    let c = basis(n)?;
    check_len(coefs, n)?;
    Ok(matmul(&matmul(c, true, coefs, false, n), false, c, false, n))
}
