//! Quality metrics, BD-rate, tiled filtering and evaluation reports.

mod bdrate;
mod features;
mod filter;
mod metrics;
mod report;

pub use bdrate::{bd_log_offset, bd_rate, common_interval, fit_cubic, CubicFit, RdCurve, RdPoint};
pub use features::{export_feature_maps, feature_layer_names, normalize_channel};
pub use filter::{apply_filter, filter_inputs, tile_starts, FilterInput, TileParams};
pub use metrics::{format_db, frame_mse, psnr, psnr_from_mse};
pub use report::{ablation_report, cross_qp_matrix, tabulate, CrossQpMatrix, EvalReport, ModelBank, RawPoint, ReportRow, Sequence};

use thiserror::Error;

use crate::codec::CodecError;
use crate::model::{ModelError, Variant};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("invalid RD curve: {0}")]
    Curve(String),
    #[error("RD curves do not overlap in PSNR (common interval [{lo}, {hi}])")]
    NoOverlap { lo: f64, hi: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error("no {variant} model for qp {qp}")]
    MissingModel { variant: Variant, qp: u8 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Model(ModelError::Tensor(e))
    }
}
