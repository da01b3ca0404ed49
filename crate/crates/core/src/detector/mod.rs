//! Window-level detectors.
//!
//! The trained network is not part of this crate. Detectors here are the
//! ground-truth oracle (a test double with controllable noise), a
//! connected-component heuristic baseline, and a file bridge that replays
//! detections produced by an external network.

pub mod bridge;
pub mod heuristic;
pub mod nms;
pub mod oracle;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::geometry::ScoredRect;
use crate::windowing::WindowSpec;

pub use bridge::ExternalDetector;
pub use heuristic::{HeuristicDetector, HeuristicParams};
pub use nms::{nms, DEFAULT_NMS_IOU};
pub use oracle::{ConfidenceModel, OracleDetector, OracleParams};

/// Detections for one window, in detector-input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDetections {
    pub window_id: usize,
    pub detections: Vec<ScoredRect>,
}

/// A detector bound to one page.
///
/// Implementations are called concurrently for different windows of the
/// same page and must not depend on call order.
pub trait WindowDetector: Send + Sync {
    /// Whether [`WindowDetector::detect`] reads the window raster. When
    /// false the pipeline skips cropping.
    fn needs_raster(&self) -> bool;

    fn detect(&self, window: &WindowSpec, raster: Option<&GrayImage>) -> Result<Vec<ScoredRect>>;
}

/// Runs `detector` and checks the detections lie inside the input square.
pub fn detect_window(
    detector: &dyn WindowDetector,
    window: &WindowSpec,
    raster: Option<&GrayImage>,
) -> Result<WindowDetections> {
    let detections = detector.detect(window, raster)?;
    let bounds = window.input_rect();
    if let Some(d) = detections.iter().find(|d| !bounds.contains_rect(&d.rect)) {
        return Err(Error::Detector {
            window: window.id.to_string(),
            message: format!("detection {} outside input bounds", d.rect),
        });
    }
    Ok(WindowDetections {
        window_id: window.id,
        detections,
    })
}
