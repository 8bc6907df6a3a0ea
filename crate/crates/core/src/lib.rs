//! Inter-frame layer caching for small encoder-decoder convolutional networks.
//!
//! On refresh frames a network runs end to end and the tensors crossing its
//! cached edges are stored. On the frames in between only the shallow, live
//! blocks are recomputed and the stored tensors are substituted for the deep
//! branches. A [`policy::RefreshPolicy`] decides which frames refresh.

pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod ops;
pub mod policy;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
