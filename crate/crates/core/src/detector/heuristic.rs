//! Connected-component baseline detector.
//!
//! Binarizes the window, takes ink components, merges components that sit on
//! the same line within a small horizontal gap, and scores each merged box by
//! its ink density. This finds text-like blobs, not formulas specifically; it
//! exists so the pipeline can run end to end without a trained network.

use image::GrayImage;

use crate::components::connected_components;
use crate::error::{Error, Result};
use crate::geometry::{Rect, ScoredRect};
use crate::postprocess::binarize_pixels;
use crate::windowing::WindowSpec;

use super::WindowDetector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicParams {
    /// Largest horizontal gap (input px) bridged when merging.
    pub max_gap: u32,
    /// Components smaller than this many pixels are treated as noise.
    pub min_pixels: u64,
    /// Required vertical overlap, as a fraction of the shorter box height.
    pub min_vertical_overlap: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            max_gap: 6,
            min_pixels: 3,
            min_vertical_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicDetector {
    pub params: HeuristicParams,
}

fn same_line(a: &Rect, b: &Rect, params: &HeuristicParams) -> bool {
    let overlap = a.bottom().min(b.bottom()) as i64 - a.top().max(b.top()) as i64;
    let shorter = a.height().min(b.height()) as f64;
    if (overlap as f64) < params.min_vertical_overlap * shorter {
        return false;
    }
    let gap = if a.right() <= b.left() {
        b.left() - a.right()
    } else if b.right() <= a.left() {
        a.left() - b.right()
    } else {
        0
    };
    gap <= params.max_gap
}

/// Runs the heuristic on a raster.
pub fn heuristic_detect(raster: &GrayImage, params: &HeuristicParams) -> Vec<ScoredRect> {
    let mask = binarize_pixels(raster.width(), raster.height(), raster.as_raw());
    let mut groups: Vec<(Rect, u64)> = connected_components(&mask)
        .into_iter()
        .filter(|c| c.pixel_count >= params.min_pixels)
        .map(|c| (c.rect, c.pixel_count))
        .collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if same_line(&groups[i].0, &groups[j].0, params) {
                    let (rj, nj) = groups.remove(j);
                    groups[i] = (groups[i].0.union(&rj), groups[i].1 + nj);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    groups.sort_by_key(|(r, _)| (r.top(), r.left()));
    groups
        .into_iter()
        .map(|(r, ink)| {
            let density = (ink as f64 / r.area() as f64).min(1.0);
            ScoredRect::new(r, density).expect("density in [0, 1]")
        })
        .collect()
}

impl WindowDetector for HeuristicDetector {
    fn needs_raster(&self) -> bool {
        true
    }

    fn detect(&self, window: &WindowSpec, raster: Option<&GrayImage>) -> Result<Vec<ScoredRect>> {
        let raster = raster.ok_or_else(|| Error::Detector {
            window: window.id.to_string(),
            message: "heuristic detector needs the window raster".into(),
        })?;
        Ok(heuristic_detect(raster, &self.params))
    }
}
