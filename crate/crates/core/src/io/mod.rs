//! Raster codecs, dataset layout, synthetic scenes and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod netpbm;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, BiTemporalSample};
pub use netpbm::{read_raster, write_raster};
pub use synth::{gen_synth, SynthSpec};
