//! Ground-truth oracle detector.
//!
//! Emits the window's clipped ground truth, optionally perturbed. Each window
//! draws from its own generator seeded by `(seed, page, window id)`, so the
//! output does not depend on the order windows are processed in.

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::PageKey;
use crate::error::{Error, Result};
use crate::geometry::{Rect, ScoredRect};
use crate::windowing::{crop_ground_truth, WindowSpec};

use super::WindowDetector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceModel {
    Constant(f64),
    /// Uniform on `[low, high]`.
    Uniform {
        low: f64,
        high: f64,
    },
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel::Constant(1.0)
    }
}

/// Noise applied by the oracle, in detector-input pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    /// Each box is shifted by an integer drawn uniformly from
    /// `[-position_px, position_px]` on each axis.
    pub position_px: u32,
    /// Width and height change by an integer drawn uniformly from
    /// `[-size_px, size_px]`.
    pub size_px: u32,
    pub drop_prob: f64,
    pub confidence: ConfidenceModel,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            position_px: 0,
            size_px: 0,
            drop_prob: 0.0,
            confidence: ConfidenceModel::default(),
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!(
                "oracle drop probability {} outside [0, 1]",
                self.drop_prob
            )));
        }
        let ok = match self.confidence {
            ConfidenceModel::Constant(c) => (0.0..=1.0).contains(&c),
            ConfidenceModel::Uniform { low, high } => {
                (0.0..=1.0).contains(&low) && (0.0..=1.0).contains(&high) && low <= high
            }
        };
        if !ok {
            return Err(Error::Config("oracle confidence must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Seed for one window's generator.
pub fn window_seed(seed: u64, page: &PageKey, window_id: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(page.doc_id.as_bytes());
    h.update([0u8]);
    h.update(page.page.to_le_bytes());
    h.update((window_id as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn jitter(rng: &mut ChaCha8Rng, amount: u32) -> i64 {
    if amount == 0 {
        0
    } else {
        rng.gen_range(-(amount as i64)..=amount as i64)
    }
}

/// Perturbs ground-truth boxes given in input coordinates. Boxes are clamped
/// to `[0, input_size)`; boxes that collapse are dropped.
pub fn oracle_detect(
    gt: &[Rect],
    input_size: u32,
    params: &OracleParams,
    seed: u64,
) -> Vec<ScoredRect> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = input_size as i64;
    let mut out = Vec::with_capacity(gt.len());
    for r in gt {
        // draw every variate so one box's fate never shifts another's noise
        let drop = rng.gen::<f64>() < params.drop_prob;
        let dx = jitter(&mut rng, params.position_px);
        let dy = jitter(&mut rng, params.position_px);
        let dw = jitter(&mut rng, params.size_px);
        let dh = jitter(&mut rng, params.size_px);
        let confidence = match params.confidence {
            ConfidenceModel::Constant(c) => c,
            ConfidenceModel::Uniform { low, high } => low + (high - low) * rng.gen::<f64>(),
        };
        if drop {
            continue;
        }
        let left = (r.left() as i64 + dx).clamp(0, size);
        let top = (r.top() as i64 + dy).clamp(0, size);
        let right = (r.right() as i64 + dx + dw).clamp(0, size);
        let bottom = (r.bottom() as i64 + dy + dh).clamp(0, size);
        if let Ok(rect) = Rect::from_i64(left, top, right, bottom) {
            out.push(ScoredRect::new(rect, confidence.clamp(0.0, 1.0)).expect("clamped"));
        }
    }
    out
}

/// Oracle bound to one page's formula boxes (page coordinates).
#[derive(Debug, Clone)]
pub struct OracleDetector {
    page: PageKey,
    formulas: Vec<Rect>,
    params: OracleParams,
    seed: u64,
}

impl OracleDetector {
    pub fn new(page: PageKey, formulas: Vec<Rect>, params: OracleParams, seed: u64) -> Self {
        OracleDetector {
            page,
            formulas,
            params,
            seed,
        }
    }
}

impl WindowDetector for OracleDetector {
    fn needs_raster(&self) -> bool {
        false
    }

    fn detect(&self, window: &WindowSpec, _raster: Option<&GrayImage>) -> Result<Vec<ScoredRect>> {
        let gt: Vec<Rect> = crop_ground_truth(window, &self.formulas)
            .into_iter()
            .map(|c| c.input_rect)
            .collect();
        Ok(oracle_detect(
            &gt,
            window.input_size,
            &self.params,
            window_seed(self.seed, &self.page, window.id),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::{generate_windows, window_to_page};

    fn rect(l: u32, t: u32, r: u32, b: u32) -> Rect {
        Rect::new(l, t, r, b).unwrap()
    }

    #[test]
    fn zero_noise_is_ground_truth() {
        let gt = [rect(10, 10, 50, 30), rect(100, 200, 300, 260)];
        let out = oracle_detect(&gt, 512, &OracleParams::default(), 7);
        assert_eq!(out.len(), 2);
        for (d, g) in out.iter().zip(&gt) {
            assert_eq!(d.rect, *g);
            assert_eq!(d.confidence(), 1.0);
        }
    }

    #[test]
    fn drop_all() {
        let params = OracleParams {
            drop_prob: 1.0,
            ..OracleParams::default()
        };
        assert!(oracle_detect(&[rect(0, 0, 5, 5)], 512, &params, 1).is_empty());
    }

    #[test]
    fn seeded_jitter_is_deterministic_and_bounded() {
        let params = OracleParams {
            position_px: 3,
            size_px: 3,
            drop_prob: 0.2,
            confidence: ConfidenceModel::Uniform {
                low: 0.5,
                high: 0.9,
            },
        };
        let gt: Vec<Rect> = (0..20).map(|i| rect(20 * i, 40, 20 * i + 15, 60)).collect();
        let a = oracle_detect(&gt, 512, &params, 99);
        let b = oracle_detect(&gt, 512, &params, 99);
        assert_eq!(a, b);
        assert_ne!(a, oracle_detect(&gt, 512, &params, 100));
        for d in &a {
            assert!((0.5..=0.9).contains(&d.confidence()));
            assert!(d.rect.top() >= 37 && d.rect.bottom() <= 66);
        }
    }

    #[test]
    fn blank_window_is_empty() {
        let det = OracleDetector::new(PageKey::new("d", 1), vec![], OracleParams::default(), 0);
        let w = generate_windows((2000, 2000), 1200, 120, 512).unwrap()[0];
        assert!(det.detect(&w, None).unwrap().is_empty());
    }

    #[test]
    fn zero_noise_round_trips_to_clipped_page_truth() {
        // lattice-aligned formula: corners are multiples of 75 px
        let f = rect(150, 300, 1350, 450);
        let det = OracleDetector::new(PageKey::new("d", 1), vec![f], OracleParams::default(), 0);
        for w in generate_windows((2400, 2400), 1200, 120, 512).unwrap() {
            let dets = det.detect(&w, None).unwrap();
            match f.intersection(&w.page_rect()) {
                None => assert!(dets.is_empty()),
                Some(clipped) => {
                    assert_eq!(dets.len(), 1);
                    let back = window_to_page(&w, &dets[0].rect).unwrap();
                    if w.to_input().maps_exactly(&clipped) {
                        assert_eq!(back, clipped);
                    } else {
                        assert!(back.contains_rect(&clipped));
                    }
                }
            }
        }
    }

    #[test]
    fn window_seeds_differ() {
        let p = PageKey::new("d", 1);
        assert_ne!(window_seed(1, &p, 0), window_seed(1, &p, 1));
        assert_ne!(
            window_seed(1, &p, 0),
            window_seed(1, &PageKey::new("d", 2), 0)
        );
        assert_eq!(window_seed(1, &p, 5), window_seed(1, &p, 5));
    }
}
