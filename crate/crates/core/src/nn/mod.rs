//! Layers with registered backward passes, plus the optimizer.

pub mod adam;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;

pub use adam::{AdamConfig, AdamState};
pub use attention::MultiHeadAttention;
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::LayerNorm;
pub use pool::PoolMode;
