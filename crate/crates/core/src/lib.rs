//! Fingerprint presentation attack detection from encoded dense-SIFT
//! descriptors.
//!
//! The pipeline extracts multi-scale dense-SIFT descriptors on a regular
//! grid, learns visual vocabularies (k-means codebooks, a PCA projection and
//! a diagonal-covariance GMM), encodes every image as a spatial-pyramid
//! bag-of-words histogram, a Fisher vector and a VLAD vector, scores each
//! encoding with a pair of complementary linear SVMs and fuses the three
//! scores. Evaluation follows ISO/IEC 30107-3 (APCER, BPCER, ACER, D-EER,
//! BPCER10/20/100 and DET curves).

pub mod classify;
pub mod corpus;
pub mod densesift;
pub mod encode;
pub mod error;
pub mod evalfuse;
pub mod ingest;
pub mod par;
pub mod persist;
pub mod pipeline;
pub mod seed;
pub mod vocab;

pub use error::{PadError, Result};
