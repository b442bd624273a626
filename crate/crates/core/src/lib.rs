//! RRNet: a residual-guided in-loop filter for intra-coded luma frames,
//! with the toy codec, training loop and evaluation tooling around it.

pub mod codec;
pub mod corpus;
pub mod eval;
mod io_util;
pub mod model;
pub mod persist;
pub mod tensor;
pub mod train;

pub use io_util::write_atomic;
