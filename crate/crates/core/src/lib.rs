//! Superpixel CRF refinement for object parsing.
//!
//! The crate turns an image plus per-pixel label probabilities into a refined
//! label map:
//!
//! 1. [`slic`] over-segments the image into compact, connected superpixels;
//! 2. [`pool`] averages feature maps inside each superpixel;
//! 3. [`graph`] scores superpixel pairs and keeps the most similar edges of a
//!    minimum spanning tree;
//! 4. [`crf`] builds a Potts CRF with Gaussian kernels over those edges and
//!    runs sequential mean-field inference to a MAP labeling;
//! 5. [`eval`] scores the result (mIoU, pixel accuracy, AP^r).
//!
//! [`learn`] holds the small differentiable heads and losses, [`io`] the file
//! formats, and [`pipeline`] wires everything together.

pub mod crf;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod graph;
pub mod io;
pub mod learn;
pub mod partition;
pub mod pipeline;
pub mod pool;
pub mod slic;
pub mod types;

pub use error::{Error, Result};
pub use partition::{validate_partition, PartitionIssue, PartitionReport, SuperpixelMap};
pub use types::{Instance, InstanceSet, LabelMap, Matrix, SuperpixelFeatures, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/superpixels.md")]
    mod superpixels {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/crf.md")]
    mod crf {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
