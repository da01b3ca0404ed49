use crate::geometry::{iou_parts, ScoredRect};

/// Default per-window suppression threshold.
pub const DEFAULT_NMS_IOU: f64 = 0.45;

/// Greedy non-maximal suppression.
///
/// Detections are visited by descending confidence, equal confidences in
/// input order; each kept detection discards every later one overlapping it
/// with IOU above `iou_threshold`. Kept detections are returned in visit
/// order.
pub fn nms(dets: &[ScoredRect], iou_threshold: f64) -> Vec<ScoredRect> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// As [`nms`], returning indices into `dets`.
pub fn nms_indices(dets: &[ScoredRect], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable: ties keep input order
    order.sort_by(|&a, &b| dets[b].confidence().total_cmp(&dets[a].confidence()));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && overlaps(&dets[i], &dets[j], iou_threshold) {
                suppressed[j] = true;
            }
        }
    }
    keep
}

fn overlaps(a: &ScoredRect, b: &ScoredRect, threshold: f64) -> bool {
    let (inter, union) = iou_parts(&a.rect, &b.rect);
    inter as f64 / union as f64 > threshold
}
