//! Image and manifest loading, and the train/test protocol splits.

mod image;
mod manifest;
mod protocol;

pub use image::{load_grayscale, save_pgm, GrayImage};
pub use manifest::{load_manifest, write_manifest, Label, SampleRecord, NO_MATERIAL};
pub use protocol::{build_split, stratified_holdout, ProtocolName, ProtocolSpec, ProtocolSplit};
