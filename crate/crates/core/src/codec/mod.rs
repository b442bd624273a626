//! Toy block-transform intra codec producing reconstruction and residual
//! planes.
//!
//! The coder mirrors the structure of an HEVC intra encode with the loop
//! filters disabled: a variance-driven transform quadtree (4..32), DC
//! prediction from reconstructed neighbours, orthonormal DCT, and a uniform
//! quantizer whose step doubles every 6 QP. The rate is approximated by
//! `sum log2(1 + |level|)` over all quantized coefficients.

mod encoder;
mod frame;
mod partition;
mod quant;
mod transform;

pub use encoder::{dc_predict, encode_frame, CodedTriple};
pub use frame::{Frame, ResidualPlane};
pub use partition::{block_variance, partition_mean_mask, partition_quadtree, Block, Partition, QuadtreeParams};
pub use quant::{dequantize, quant_step, quantize, round_half_away, QP_MAX};
pub use transform::{dct2d, idct2d, SUPPORTED_SIZES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unsupported transform size {0} (expected 4, 8, 16 or 32)")]
    BlockSize(usize),
    #[error("qp {0} outside [0, 51]")]
    Qp(i64),
    #[error("dimension error: {0}")]
    Dimensions(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid codec configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
