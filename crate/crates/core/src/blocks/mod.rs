//! Encoder and fusion blocks.
//!
//! - [`Msff`]: four parallel convolution paths (1x1, and 1x1-kxk-1x1 for
//!   k in {3, 5, 7}) concatenated and fused by a 1x1 convolution.
//! - [`Ssfc`]: projections M/Q/K/V, pooled query/key difference turned into a
//!   parameter-free 3-D weight `sigmoid((Q̄ - K̄)² / 2σ² + 1/2)` that scales
//!   the channel-mean value map.
//! - [`Dmfe`]: channel split feeding one half to each of the two blocks above,
//!   with a residual connection.
//! - [`Mdfm`]: absolute temporal difference, sigmoid gate from a multi-scale
//!   branch, gated temporal features fused by a 3x3 convolution.

mod dmfe;
mod mdfm;
mod msff;
mod ssfc;

pub use dmfe::Dmfe;
pub use mdfm::{Mdfm, MdfmTrace};
pub use msff::{Msff, MSFF_KERNELS};
pub use ssfc::{
    PoolPair, Ssfc, SsfcTrace, ValueSource, SSFC_ARGUMENT_CEILING, SSFC_VARIANCE_FLOOR,
};
