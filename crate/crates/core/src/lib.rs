//! Semantic feature lifting onto 3D Gaussians with variance-weighted neural
//! regularization.
//!
//! The pipeline: rasterize each view to get per-Gaussian marginal weights
//! ([`raster`]), fold 2D feature maps into per-Gaussian means and variances
//! ([`lifter`]), then fit a granularity-conditioned residual MLP ([`net`]) to
//! the lifted features with a variance-weighted loss ([`train`]). The
//! synthetic benchmark ([`synth`]) and metrics ([`eval`]) make the effect
//! measurable without foundation-model features.

pub mod error;
pub mod eval;
pub mod io;
pub mod lifter;
pub mod linalg;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use model::{Camera, FeatureMap, Gaussian, GaussianScene, Granularity, SemanticField};
