//! Single-image brain shape reconstruction and point-cloud completion.
//!
//! The pipeline runs a grayscale slice through an image encoder into a
//! 96-dimensional Gaussian latent code, grows a partial 2048-point cloud
//! with a branching graph-convolution generator (trained adversarially
//! against a point-set critic), and completes it with a hierarchical
//! set-abstraction encoder and an attention-gated decoder.
//!
//! Everything trains on the small reverse-mode engine in [`autograd`].

pub mod autograd;
pub mod completion;
pub mod container;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod predictor;
pub mod sampling;
pub mod synthdata;

pub use error::{Error, Result};
pub use geometry::PointCloud;
