//! Uncertainty-aware two-stage 3D car detection on LiDAR bird's-eye-view
//! grids, at a scale that trains in minutes on a CPU.
//!
//! The crate covers point cloud I/O, BEV rasterization, box geometry, target
//! codecs, the attenuated multi-loss, a small trainable detector, a synthetic
//! scene generator, AP evaluation and uncertainty statistics.

pub mod attnloss;
pub mod bevraster;
pub mod boxgeom;
pub mod codec;
pub mod config;
pub mod detection;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod par;
pub mod pcio;
pub mod pipeline;
pub mod synthgen;
pub mod toymodel;
pub mod uncstats;

pub use error::{Error, Result};
pub use par::Exec;
