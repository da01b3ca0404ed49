//! Scoring page-level detections against ground truth.
//!
//! Formula matching is one-to-one: all (gt, detection) pairs whose IOU
//! reaches the threshold are taken greedily in order of decreasing IOU. IOUs
//! are compared exactly as fractions, and ties are broken by the rectangles
//! themselves before any input position, so permuting either list leaves the
//! counts unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;

use crate::dataset::{FormulaBox, GroundTruthPage, PageKey};
use crate::error::{Error, Result};
use crate::geometry::{iou_parts, Rect};

/// IOU thresholds reported by [`evaluate_suite`]; `1.0` means exact equality.
pub const SUITE_THRESHOLDS: [f64; 3] = [0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            true_positives: self.true_positives + o.true_positives,
            false_positives: self.false_positives + o.false_positives,
            false_negatives: self.false_negatives + o.false_negatives,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

impl Counts {
    pub fn metrics(&self) -> Metrics {
        let tp = self.true_positives as f64;
        let ratio = |den: u64| {
            if den == 0 {
                None
            } else {
                Some(tp / den as f64)
            }
        };
        let p = ratio(self.true_positives + self.false_positives);
        let r = ratio(self.true_positives + self.false_negatives);
        let precision = p.unwrap_or(0.0);
        let recall = r.unwrap_or(0.0);
        let fscore = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            fscore,
            undefined: p.is_none() || r.is_none() || precision + recall == 0.0,
        }
    }
}

/// Precision, recall and f-score. `undefined` is set when any of them had a
/// zero denominator and was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectMatching {
    /// `(gt index, detection index, iou)` in the order the pairs were taken.
    pub pairs: Vec<(usize, usize, f64)>,
    pub counts: Counts,
}

fn meets(inter: u64, union: u64, threshold: f64) -> bool {
    inter as f64 >= threshold * union as f64
}

/// One-to-one greedy matching of `dets` to `gt` at `iou >= threshold`.
pub fn match_rects(gt: &[Rect], dets: &[Rect], threshold: f64) -> RectMatching {
    let mut cands: Vec<(u64, u64, usize, usize)> = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        for (di, d) in dets.iter().enumerate() {
            let (inter, union) = iou_parts(g, d);
            if inter > 0 && meets(inter, union, threshold) {
                cands.push((inter, union, gi, di));
            }
        }
    }
    cands.sort_by(|a, b| {
        let lhs = a.0 as u128 * b.1 as u128;
        let rhs = b.0 as u128 * a.1 as u128;
        rhs.cmp(&lhs)
            .then_with(|| rect_key(&gt[a.2]).cmp(&rect_key(&gt[b.2])))
            .then_with(|| rect_key(&dets[a.3]).cmp(&rect_key(&dets[b.3])))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut det_used = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for (inter, union, gi, di) in cands {
        if !gt_used[gi] && !det_used[di] {
            gt_used[gi] = true;
            det_used[di] = true;
            pairs.push((gi, di, inter as f64 / union as f64));
        }
    }
    let tp = pairs.len() as u64;
    RectMatching {
        pairs,
        counts: Counts {
            true_positives: tp,
            false_positives: dets.len() as u64 - tp,
            false_negatives: gt.len() as u64 - tp,
        },
    }
}

fn rect_key(r: &Rect) -> (u32, u32, u32, u32) {
    (r.top(), r.left(), r.bottom(), r.right())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub page: PageKey,
    pub gt_id: String,
    pub det_index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub iou_threshold: f64,
    pub counts: Counts,
    pub metrics: Metrics,
    pub per_document: BTreeMap<String, (Counts, Metrics)>,
    pub matches: Vec<Match>,
}

/// Matches one page's formulas.
pub fn match_formulas(gt: &[FormulaBox], dets: &[Rect], threshold: f64) -> RectMatching {
    let rects: Vec<Rect> = gt.iter().map(|f| f.rect).collect();
    match_rects(&rects, dets, threshold)
}

/// Scores every page appearing in either map. Pages without ground truth
/// contribute only false positives and vice versa.
pub fn evaluate(
    gt: &BTreeMap<PageKey, Vec<FormulaBox>>,
    dets: &BTreeMap<PageKey, Vec<Rect>>,
    threshold: f64,
) -> EvalResult {
    let keys: Vec<&PageKey> = {
        let mut k: Vec<&PageKey> = gt.keys().chain(dets.keys()).collect();
        k.sort();
        k.dedup();
        k
    };
    let per_page: Vec<(&PageKey, RectMatching)> = keys
        .par_iter()
        .map(|&k| {
            let g = gt.get(k).map(Vec::as_slice).unwrap_or(&[]);
            let d = dets.get(k).map(Vec::as_slice).unwrap_or(&[]);
            (k, match_formulas(g, d, threshold))
        })
        .collect();
    let mut by_doc: BTreeMap<String, Counts> = BTreeMap::new();
    let mut matches = Vec::new();
    for (k, m) in &per_page {
        *by_doc.entry(k.doc_id.clone()).or_default() += m.counts;
        for &(gi, di, iou) in &m.pairs {
            matches.push(Match {
                page: (*k).clone(),
                gt_id: gt[*k][gi].formula_id.clone(),
                det_index: di,
                iou,
            });
        }
    }
    let counts: Counts = per_page.iter().map(|(_, m)| m.counts).sum();
    EvalResult {
        iou_threshold: threshold,
        counts,
        metrics: counts.metrics(),
        per_document: by_doc
            .into_iter()
            .map(|(d, c)| (d, (c, c.metrics())))
            .collect(),
        matches,
    }
}

/// Results at IOU >= 0.5, >= 0.75 and exact match.
pub fn evaluate_suite(
    gt: &BTreeMap<PageKey, Vec<FormulaBox>>,
    dets: &BTreeMap<PageKey, Vec<Rect>>,
) -> Vec<EvalResult> {
    SUITE_THRESHOLDS
        .iter()
        .map(|&t| evaluate(gt, dets, t))
        .collect()
}

/// Character-level counts under both containment rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CharEvalResult {
    /// A character is predicted math when at least half its area lies inside
    /// one detection.
    pub area: Counts,
    /// A character is predicted math when its center lies inside a detection.
    pub center: Counts,
}

fn half_inside(c: &Rect, dets: &[Rect]) -> bool {
    dets.iter().any(|d| 2 * c.intersection_area(d) >= c.area())
}

fn center_inside(c: &Rect, dets: &[Rect]) -> bool {
    // twice the center, so odd extents stay exact
    let (cx2, cy2) = (
        c.left() as u64 + c.right() as u64,
        c.top() as u64 + c.bottom() as u64,
    );
    dets.iter().any(|d| {
        2 * d.left() as u64 <= cx2
            && cx2 < 2 * d.right() as u64
            && 2 * d.top() as u64 <= cy2
            && cy2 < 2 * d.bottom() as u64
    })
}

fn classify(is_math: bool, predicted: bool) -> Counts {
    Counts {
        true_positives: (is_math && predicted) as u64,
        false_positives: (!is_math && predicted) as u64,
        false_negatives: (is_math && !predicted) as u64,
    }
}

/// Labels characters as math when a detection covers them and scores the
/// labels against the ground truth.
pub fn character_metrics(
    pages: &[GroundTruthPage],
    dets: &BTreeMap<PageKey, Vec<Rect>>,
) -> CharEvalResult {
    let mut out = CharEvalResult::default();
    for p in pages {
        let d = dets.get(&p.key).map(Vec::as_slice).unwrap_or(&[]);
        for c in &p.characters {
            out.area += classify(c.is_math, half_inside(&c.bbox, d));
            out.center += classify(c.is_math, center_inside(&c.bbox, d));
        }
    }
    out
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// `all`, a document id, `charlevel` or `charlevel-center`.
    pub scope: String,
    pub iou: Option<f64>,
    pub metrics: Metrics,
}

pub fn report_rows(suite: &[EvalResult], chars: Option<&CharEvalResult>) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for r in suite {
        rows.push(ReportRow {
            scope: "all".into(),
            iou: Some(r.iou_threshold),
            metrics: r.metrics,
        });
    }
    for r in suite {
        for (doc, (_, m)) in &r.per_document {
            rows.push(ReportRow {
                scope: doc.clone(),
                iou: Some(r.iou_threshold),
                metrics: *m,
            });
        }
    }
    if let Some(c) = chars {
        rows.push(ReportRow {
            scope: "charlevel".into(),
            iou: None,
            metrics: c.area.metrics(),
        });
        rows.push(ReportRow {
            scope: "charlevel-center".into(),
            iou: None,
            metrics: c.center.metrics(),
        });
    }
    rows
}

/// Writes `scope,iou,precision,recall,fscore`; `iou` is empty for
/// character-level rows.
pub fn write_report_csv<W: Write>(writer: W, rows: &[ReportRow]) -> Result<()> {
    const CTX: &str = "report csv";
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scope", "iou", "precision", "recall", "fscore"])
        .map_err(|e| Error::csv(CTX, e))?;
    for r in rows {
        w.write_record([
            r.scope.clone(),
            r.iou.map(|v| format!("{v:.2}")).unwrap_or_default(),
            format!("{:.6}", r.metrics.precision),
            format!("{:.6}", r.metrics.recall),
            format!("{:.6}", r.metrics.fscore),
        ])
        .map_err(|e| Error::csv(CTX, e))?;
    }
    w.flush().map_err(|e| Error::io(CTX, e))?;
    Ok(())
}

/// Plain-text table of the report; `*` marks metrics with a zero denominator.
pub fn format_report(rows: &[ReportRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.scope.len())
        .max()
        .unwrap_or(0)
        .max("scope".len());
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>5}  {:>9}  {:>9}  {:>9}",
        "scope", "iou", "precision", "recall", "fscore"
    );
    for r in rows {
        let iou = r
            .iou
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into());
        let flag = if r.metrics.undefined { " *" } else { "" };
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>9.4}  {:>9.4}  {:>9.4}{flag}",
            r.scope, iou, r.metrics.precision, r.metrics.recall, r.metrics.fscore
        );
    }
    s
}
