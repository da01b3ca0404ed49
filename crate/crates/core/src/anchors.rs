//! Default boxes over the detector input and ground-truth matching.
//!
//! Every feature-map level `k` of `m` levels gets the scale
//! `s_k = scale_min + (scale_max - scale_min) * k / (m - 1)`. Each cell of a
//! `g x g` grid carries one box per aspect ratio `a`, of width
//! `s_k * input * sqrt(a)` and height `s_k * input / sqrt(a)`, centred on the
//! cell. A ground-truth box is matched to its best default box and to every
//! default box with IOU above one half.

use std::collections::BTreeSet;
use std::io::Write;

use crate::dataset::PageKey;
use crate::error::{Error, Result};
use crate::geometry::{iou_parts, Rect};
use crate::windowing::{crop_ground_truth, generate_windows, EXPORT_MIN_COVERAGE};

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub input_size: u32,
    /// Feature-map resolutions, finest first.
    pub grid_sizes: Vec<u32>,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
}

/// Aspect ratios of the wide-box detector: the square and moderately wide
/// boxes plus very wide boxes for long formulas.
pub const WIDE_ASPECT_RATIOS: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0];

/// The classic single-shot detector aspect ratios.
pub const CLASSIC_ASPECT_RATIOS: [f64; 5] = [1.0, 2.0, 3.0, 0.5, 1.0 / 3.0];

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            input_size: 512,
            grid_sizes: vec![64, 32, 16, 8, 4, 2, 1],
            scale_min: 0.1,
            scale_max: 0.9,
            aspect_ratios: WIDE_ASPECT_RATIOS.to_vec(),
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("anchors: {m}")));
        if self.input_size == 0 {
            return bad("input_size must be positive");
        }
        if self.aspect_ratios.is_empty() {
            return bad("aspect_ratios must be non-empty");
        }
        if self
            .aspect_ratios
            .iter()
            .any(|a| !(a.is_finite() && *a > 0.0))
        {
            return bad("aspect ratios must be positive");
        }
        if self.grid_sizes.is_empty() || self.grid_sizes.contains(&0) {
            return bad("grid sizes must be positive and non-empty");
        }
        if self.grid_sizes.windows(2).any(|w| w[0] <= w[1]) {
            return bad("grid sizes must be strictly decreasing");
        }
        let in_unit = |s: f64| s > 0.0 && s <= 1.0;
        if !in_unit(self.scale_min) || !in_unit(self.scale_max) || self.scale_min > self.scale_max {
            return bad("scales must satisfy 0 < scale_min <= scale_max <= 1");
        }
        Ok(())
    }

    pub fn level_scale(&self, level: usize) -> f64 {
        let m = self.grid_sizes.len();
        if m <= 1 {
            self.scale_min
        } else {
            self.scale_min + (self.scale_max - self.scale_min) * level as f64 / (m - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultBox {
    pub id: usize,
    pub level: usize,
    /// Cell `(column, row)` on the level's grid.
    pub cell: (u32, u32),
    pub aspect_ratio: f64,
    /// Unclipped centre-size geometry in input pixels.
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Rounded and clipped to the input bounds.
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefaultBoxes {
    pub boxes: Vec<DefaultBox>,
    /// Boxes that became degenerate after rounding and clipping.
    pub dropped: usize,
}

pub fn generate_default_boxes(cfg: &AnchorConfig) -> Result<DefaultBoxes> {
    cfg.validate()?;
    let size = cfg.input_size as f64;
    let mut boxes = Vec::new();
    let mut dropped = 0;
    for (level, &grid) in cfg.grid_sizes.iter().enumerate() {
        let s = cfg.level_scale(level);
        for j in 0..grid {
            for i in 0..grid {
                let cx = (i as f64 + 0.5) / grid as f64 * size;
                let cy = (j as f64 + 0.5) / grid as f64 * size;
                for &a in &cfg.aspect_ratios {
                    let width = s * size * a.sqrt();
                    let height = s * size / a.sqrt();
                    let clip = |v: f64| v.round().clamp(0.0, size) as i64;
                    let rect = Rect::from_i64(
                        clip(cx - width / 2.0),
                        clip(cy - height / 2.0),
                        clip(cx + width / 2.0),
                        clip(cy + height / 2.0),
                    );
                    match rect {
                        Ok(rect) => boxes.push(DefaultBox {
                            id: boxes.len(),
                            level,
                            cell: (i, j),
                            aspect_ratio: a,
                            cx,
                            cy,
                            width,
                            height,
                            rect,
                        }),
                        Err(_) => dropped += 1,
                    }
                }
            }
        }
    }
    Ok(DefaultBoxes { boxes, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub box_id: usize,
    pub gt_index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Sorted by `(box_id, gt_index)`.
    pub assignments: Vec<Assignment>,
    pub positives: BTreeSet<usize>,
    pub negatives: BTreeSet<usize>,
}

/// `a > b` for IOUs given as `(intersection, union)`.
fn iou_greater(a: (u64, u64), b: (u64, u64)) -> bool {
    (a.0 as u128) * (b.1 as u128) > (b.0 as u128) * (a.1 as u128)
}

/// Matches each ground-truth box to its highest-IOU default box (lowest id on
/// ties) and to every default box with IOU strictly above 0.5.
pub fn match_ground_truth(gt: &[Rect], boxes: &[DefaultBox]) -> Result<MatchResult> {
    if boxes.is_empty() {
        return Err(Error::Config("no default boxes to match against".into()));
    }
    let mut assignments = Vec::new();
    for (g, gt_rect) in gt.iter().enumerate() {
        let mut best = 0usize;
        let mut best_parts = iou_parts(gt_rect, &boxes[0].rect);
        let mut above = Vec::new();
        for (k, b) in boxes.iter().enumerate() {
            let parts = iou_parts(gt_rect, &b.rect);
            if iou_greater(parts, best_parts) {
                best = k;
                best_parts = parts;
            }
            if 2 * parts.0 > parts.1 {
                above.push((k, parts));
            }
        }
        if !above.iter().any(|&(k, _)| k == best) {
            above.push((best, best_parts));
        }
        assignments.extend(above.into_iter().map(|(k, (i, u))| Assignment {
            box_id: boxes[k].id,
            gt_index: g,
            iou: i as f64 / u as f64,
        }));
    }
    assignments.sort_by_key(|a| (a.box_id, a.gt_index));
    let positives: BTreeSet<usize> = assignments.iter().map(|a| a.box_id).collect();
    let negatives = boxes
        .iter()
        .map(|b| b.id)
        .filter(|id| !positives.contains(id))
        .collect();
    Ok(MatchResult {
        assignments,
        positives,
        negatives,
    })
}

/// Centre-size offsets `(d_cx, d_cy, d_logw, d_logh)` of `gt` relative to
/// `prior`.
pub fn encode_offsets(gt: &Rect, prior: &Rect) -> [f64; 4] {
    let (gx, gy) = gt.center();
    let (px, py) = prior.center();
    let (pw, ph) = (prior.width() as f64, prior.height() as f64);
    [
        (gx - px) / pw,
        (gy - py) / ph,
        (gt.width() as f64 / pw).ln(),
        (gt.height() as f64 / ph).ln(),
    ]
}

/// Inverse of [`encode_offsets`] in continuous coordinates:
/// `(cx, cy, w, h)`.
pub fn decode_offsets(offsets: [f64; 4], prior: &Rect) -> (f64, f64, f64, f64) {
    let (px, py) = prior.center();
    let (pw, ph) = (prior.width() as f64, prior.height() as f64);
    (
        px + offsets[0] * pw,
        py + offsets[1] * ph,
        pw * offsets[2].exp(),
        ph * offsets[3].exp(),
    )
}

/// A page to export targets for.
#[derive(Debug, Clone)]
pub struct TrainingPage {
    pub key: PageKey,
    pub size: (u32, u32),
    pub formulas: Vec<Rect>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRecord {
    pub box_id: usize,
    pub gt: Rect,
    pub offsets: [f64; 4],
}

/// Clipped window targets that are kept for training: enough of the formula
/// is visible, or the visible sliver can still be matched above one half.
pub fn exportable_targets(gt: &[(Rect, f64)], boxes: &[DefaultBox]) -> Vec<Rect> {
    gt.iter()
        .filter(|(r, coverage)| {
            *coverage >= EXPORT_MIN_COVERAGE
                || boxes.iter().any(|b| {
                    let (i, u) = iou_parts(r, &b.rect);
                    2 * i > u
                })
        })
        .map(|(r, _)| *r)
        .collect()
}

/// Targets for one window: one record per positive assignment.
pub fn window_targets(gt: &[Rect], boxes: &[DefaultBox]) -> Result<Vec<TargetRecord>> {
    if gt.is_empty() {
        return Ok(Vec::new());
    }
    let m = match_ground_truth(gt, boxes)?;
    let by_id = |id: usize| {
        boxes
            .iter()
            .find(|b| b.id == id)
            .expect("ids come from boxes")
    };
    Ok(m.assignments
        .iter()
        .map(|a| {
            let prior = by_id(a.box_id);
            TargetRecord {
                box_id: a.box_id,
                gt: gt[a.gt_index],
                offsets: encode_offsets(&gt[a.gt_index], &prior.rect),
            }
        })
        .collect())
}

/// Writes `window_id,box_id,gt_left,gt_top,gt_right,gt_bottom,d_cx,d_cy,d_logw,d_logh`
/// for every page window, where `window_id` is the crop file stem
/// `{doc_id}_{page}_{window}`. Returns the number of records written.
pub fn export_training_targets<W: Write>(
    writer: W,
    pages: &[TrainingPage],
    window_size: u32,
    stride: u32,
    boxes: &[DefaultBox],
) -> Result<usize> {
    const CTX: &str = "training targets";
    let input_size = boxes
        .iter()
        .map(|b| b.rect.right().max(b.rect.bottom()))
        .max()
        .ok_or_else(|| Error::Config("no default boxes".into()))?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "window_id",
        "box_id",
        "gt_left",
        "gt_top",
        "gt_right",
        "gt_bottom",
        "d_cx",
        "d_cy",
        "d_logw",
        "d_logh",
    ])
    .map_err(|e| Error::csv(CTX, e))?;
    let mut count = 0;
    for page in pages {
        for win in generate_windows(page.size, window_size, stride, input_size)? {
            let cropped: Vec<(Rect, f64)> = crop_ground_truth(&win, &page.formulas)
                .into_iter()
                .map(|c| (c.input_rect, c.coverage))
                .collect();
            let gt = exportable_targets(&cropped, boxes);
            let stem = win.file_stem(&page.key);
            for rec in window_targets(&gt, boxes)? {
                let [dx, dy, dw, dh] = rec.offsets;
                w.write_record([
                    stem.clone(),
                    rec.box_id.to_string(),
                    rec.gt.left().to_string(),
                    rec.gt.top().to_string(),
                    rec.gt.right().to_string(),
                    rec.gt.bottom().to_string(),
                    format!("{dx:.6}"),
                    format!("{dy:.6}"),
                    format!("{dw:.6}"),
                    format!("{dh:.6}"),
                ])
                .map_err(|e| Error::csv(CTX, e))?;
                count += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io(CTX, e))?;
    Ok(count)
}
