//! Sliding-window formula detection for scanned document pages.
//!
//! A page is tiled into overlapping windows, each window is passed to a
//! window-level detector, window detections are stitched back onto the page
//! and fused by per-pixel voting, and the resulting regions are cropped to
//! the ink they cover. The crate also ships default-box target generation
//! for training an external detector and the detection evaluation protocol.

pub mod anchors;
pub mod components;
pub mod config;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod pipeline;
pub mod pooling;
pub mod postprocess;
pub mod raster;
pub mod synthetic;
pub mod windowing;

pub use error::{Error, Result};
pub use geometry::{iou, Rect, ScoredRect, Transform};
