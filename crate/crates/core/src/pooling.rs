//! Stitching window detections onto the page and fusing them by pixel votes.
//!
//! Every stitched box votes for the pixels it covers. Per pixel the map keeps
//! the number of covering boxes, the sum of their confidences and the largest
//! confidence, from which the four scores are read:
//!
//! | method    | score                         |
//! |-----------|-------------------------------|
//! | uniform   | count                         |
//! | sum       | sum of confidences            |
//! | max       | largest confidence            |
//! | average   | sum / count (0 where no vote) |
//!
//! Thresholding the score gives a binary mask whose 8-connected components
//! are the page-level regions.
//!
//! Confidences are accumulated in fixed point (2^-40 units) so that merging
//! partial maps is exactly associative and commutative.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::Deserialize;

use crate::components::{connected_components, BinaryMask};
use crate::dataset::{parse_int, PageKey};
use crate::detector::WindowDetections;
use crate::error::{Error, Result};
use crate::evaluation::{match_rects, Counts};
use crate::geometry::{Rect, ScoredRect};
use crate::postprocess::{crop_boxes, InkComponents, InklessPolicy};
use crate::windowing::{window_to_page, WindowSpec};

/// Default uniform-vote threshold.
pub const DEFAULT_VOTE_THRESHOLD: f64 = 30.0;
/// Default vote-map downscale factor.
pub const DEFAULT_DOWNSCALE: u32 = 4;

const CONF_UNIT: f64 = (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VoteMethod {
    #[default]
    Uniform,
    Max,
    Sum,
    Average,
}

impl VoteMethod {
    pub const ALL: [VoteMethod; 4] = [
        VoteMethod::Uniform,
        VoteMethod::Max,
        VoteMethod::Sum,
        VoteMethod::Average,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VoteMethod::Uniform => "uniform",
            VoteMethod::Max => "max",
            VoteMethod::Sum => "sum",
            VoteMethod::Average => "average",
        }
    }
}

impl fmt::Display for VoteMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VoteMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" | "count" => Ok(VoteMethod::Uniform),
            "max" => Ok(VoteMethod::Max),
            "sum" => Ok(VoteMethod::Sum),
            "average" | "avg" | "mean" => Ok(VoteMethod::Average),
            other => Err(Error::Config(format!("unknown vote method {other:?}"))),
        }
    }
}

fn quantize(confidence: f64) -> u64 {
    (confidence * CONF_UNIT).round() as u64
}

/// Per-pixel vote accumulators over a (possibly downscaled) page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteMap {
    width: u32,
    height: u32,
    downscale: u32,
    count: Vec<u32>,
    weighted: Vec<u64>,
    max_conf: Vec<u64>,
}

const BAND_ROWS: usize = 32;

impl VoteMap {
    /// Empty map for a page of `page_size`, one cell per `downscale x
    /// downscale` block of page pixels.
    pub fn new(page_size: (u32, u32), downscale: u32) -> Self {
        let downscale = downscale.max(1);
        let width = page_size.0.div_ceil(downscale);
        let height = page_size.1.div_ceil(downscale);
        let n = width as usize * height as usize;
        VoteMap {
            width,
            height,
            downscale,
            count: vec![0; n],
            weighted: vec![0; n],
            max_conf: vec![0; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn downscale(&self) -> u32 {
        self.downscale
    }

    /// Page-pixel box to the map cells it touches.
    fn cells(&self, r: &Rect) -> Option<(usize, usize, usize, usize)> {
        let d = self.downscale;
        let l = (r.left() / d).min(self.width) as usize;
        let t = (r.top() / d).min(self.height) as usize;
        let rr = r.right().div_ceil(d).min(self.width) as usize;
        let b = r.bottom().div_ceil(d).min(self.height) as usize;
        (l < rr && t < b).then_some((l, t, rr, b))
    }

    /// Adds the votes of `dets` (page coordinates). Rows are processed in
    /// parallel bands; each band applies boxes in input order.
    pub fn add_votes(&mut self, dets: &[ScoredRect]) {
        let spans: Vec<((usize, usize, usize, usize), u64)> = dets
            .iter()
            .filter_map(|d| self.cells(&d.rect).map(|c| (c, quantize(d.confidence()))))
            .collect();
        let w = self.width as usize;
        if w == 0 {
            return;
        }
        let band = BAND_ROWS * w;
        self.count
            .par_chunks_mut(band)
            .zip(self.weighted.par_chunks_mut(band))
            .zip(self.max_conf.par_chunks_mut(band))
            .enumerate()
            .for_each(|(bi, ((count, weighted), max_conf))| {
                let y0 = bi * BAND_ROWS;
                let y1 = y0 + count.len() / w;
                for &((l, t, r, b), q) in &spans {
                    let (ys, ye) = (t.max(y0), b.min(y1));
                    for y in ys..ye {
                        let row = (y - y0) * w;
                        for i in row + l..row + r {
                            count[i] += 1;
                            weighted[i] += q;
                            if q > max_conf[i] {
                                max_conf[i] = q;
                            }
                        }
                    }
                }
            });
    }

    /// Pointwise sum of counts and confidence sums, pointwise max of the
    /// maxima.
    pub fn merge(&mut self, other: &VoteMap) -> Result<()> {
        if (self.width, self.height, self.downscale) != (other.width, other.height, other.downscale)
        {
            return Err(Error::Data(
                "cannot merge vote maps of different shapes".into(),
            ));
        }
        for i in 0..self.count.len() {
            self.count[i] += other.count[i];
            self.weighted[i] += other.weighted[i];
            self.max_conf[i] = self.max_conf[i].max(other.max_conf[i]);
        }
        Ok(())
    }

    pub fn count_at(&self, x: u32, y: u32) -> u32 {
        self.count[self.idx(x, y)]
    }

    pub fn weighted_sum_at(&self, x: u32, y: u32) -> f64 {
        self.weighted[self.idx(x, y)] as f64 / CONF_UNIT
    }

    pub fn max_conf_at(&self, x: u32, y: u32) -> f64 {
        self.max_conf[self.idx(x, y)] as f64 / CONF_UNIT
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    fn score_idx(&self, method: VoteMethod, i: usize) -> f64 {
        match method {
            VoteMethod::Uniform => self.count[i] as f64,
            VoteMethod::Sum => self.weighted[i] as f64 / CONF_UNIT,
            VoteMethod::Max => self.max_conf[i] as f64 / CONF_UNIT,
            VoteMethod::Average => {
                if self.count[i] == 0 {
                    0.0
                } else {
                    self.weighted[i] as f64 / CONF_UNIT / self.count[i] as f64
                }
            }
        }
    }

    pub fn score_at(&self, method: VoteMethod, x: u32, y: u32) -> f64 {
        self.score_idx(method, self.idx(x, y))
    }

    /// Row-major scores for `method`.
    pub fn scores(&self, method: VoteMethod) -> Vec<f64> {
        (0..self.count.len())
            .map(|i| self.score_idx(method, i))
            .collect()
    }

    /// Grayscale rendering of the scores, scaled so the largest is white.
    pub fn heatmap(&self, method: VoteMethod) -> GrayImage {
        let scores = self.scores(method);
        let peak = scores.iter().cloned().fold(0.0, f64::max);
        let mut img = GrayImage::new(self.width.max(1), self.height.max(1));
        if peak > 0.0 {
            for (i, s) in scores.iter().enumerate() {
                let v = (s / peak * 255.0).round() as u8;
                img.put_pixel(
                    (i % self.width as usize) as u32,
                    (i / self.width as usize) as u32,
                    Luma([v]),
                );
            }
        }
        img
    }
}

/// Accumulates votes of `dets` on a full-resolution map.
pub fn vote(dets: &[ScoredRect], page_size: (u32, u32)) -> VoteMap {
    let mut m = VoteMap::new(page_size, 1);
    m.add_votes(dets);
    m
}

/// Pixels with at least one vote and `score >= t`.
pub fn threshold_mask(map: &VoteMap, method: VoteMethod, t: f64) -> BinaryMask {
    let data = (0..map.count.len())
        .map(|i| map.count[i] > 0 && map.score_idx(method, i) >= t)
        .collect();
    BinaryMask::from_vec(map.width, map.height, data).expect("sizes agree")
}

/// Tight box of every 8-connected component.
pub fn mask_components(mask: &BinaryMask) -> Vec<Rect> {
    connected_components(mask)
        .into_iter()
        .map(|c| c.rect)
        .collect()
}

/// Maps every window's detections to page coordinates and concatenates them
/// in input order.
pub fn stitch(window_dets: &[WindowDetections], windows: &[WindowSpec]) -> Result<Vec<ScoredRect>> {
    let by_id: HashMap<usize, &WindowSpec> = windows.iter().map(|w| (w.id, w)).collect();
    let mut out = Vec::new();
    for wd in window_dets {
        let w = by_id
            .get(&wd.window_id)
            .ok_or_else(|| Error::UnknownWindow(wd.window_id.to_string()))?;
        for d in &wd.detections {
            out.push(d.with_rect(window_to_page(w, &d.rect)?));
        }
    }
    Ok(out)
}

/// Component boxes of the thresholded map, in page coordinates and clipped
/// to the page.
pub fn regions(map: &VoteMap, method: VoteMethod, t: f64, page_size: (u32, u32)) -> Vec<Rect> {
    let d = map.downscale;
    let page = Rect::new(0, 0, page_size.0.max(1), page_size.1.max(1)).expect("non-empty page");
    mask_components(&threshold_mask(map, method, t))
        .into_iter()
        .filter_map(|r| {
            Rect::new(r.left() * d, r.top() * d, r.right() * d, r.bottom() * d)
                .ok()?
                .intersection(&page)
        })
        .collect()
}

/// Crops pooled regions to ink (when available), removes duplicates and
/// orders them top-to-bottom, left-to-right.
pub fn finalize_regions(
    regions: Vec<Rect>,
    ink: Option<&InkComponents>,
    policy: InklessPolicy,
) -> Vec<Rect> {
    let mut out = match ink {
        Some(ink) => crop_boxes(regions, ink, None, policy),
        None => regions,
    };
    out.sort_by_key(|r| (r.top(), r.left(), r.bottom(), r.right()));
    out.dedup();
    out
}

/// Threshold candidates `steps * unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    pub steps: std::ops::RangeInclusive<u32>,
    pub unit: f64,
}

impl ThresholdGrid {
    pub fn values(&self) -> Vec<f64> {
        self.steps.clone().map(|k| k as f64 * self.unit).collect()
    }
}

/// Search grids: integer thresholds 0..=55 for count and sum scores; 0..=100
/// hundredths for the confidence-valued max and average scores.
pub fn default_grid(method: VoteMethod) -> ThresholdGrid {
    match method {
        VoteMethod::Uniform | VoteMethod::Sum => ThresholdGrid {
            steps: 0..=55,
            unit: 1.0,
        },
        VoteMethod::Max | VoteMethod::Average => ThresholdGrid {
            steps: 0..=100,
            unit: 0.01,
        },
    }
}

/// One page of tuning data.
#[derive(Debug, Clone)]
pub struct TunePage<'a> {
    pub page_size: (u32, u32),
    pub gt: Vec<Rect>,
    pub votes: VoteMap,
    pub ink: Option<&'a InkComponents>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_threshold: f64,
    pub best_fscore: f64,
    /// `(threshold, counts)` for every grid value, in grid order.
    pub evaluated: Vec<(f64, Counts)>,
}

/// Grid search for the threshold maximising f-score at `iou_threshold`;
/// ties go to the lowest threshold.
pub fn tune_threshold(
    pages: &[TunePage<'_>],
    method: VoteMethod,
    grid: &[f64],
    iou_threshold: f64,
    policy: InklessPolicy,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let evaluated: Vec<(f64, Counts)> = grid
        .par_iter()
        .map(|&t| {
            let counts = pages.iter().fold(Counts::default(), |acc, p| {
                let dets =
                    finalize_regions(regions(&p.votes, method, t, p.page_size), p.ink, policy);
                acc + match_rects(&p.gt, &dets, iou_threshold).counts
            });
            (t, counts)
        })
        .collect();
    let (best_threshold, best_fscore) = evaluated
        .iter()
        .map(|(t, c)| (*t, c.metrics().fscore))
        .fold((grid[0], f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    Ok(TuneResult {
        best_threshold,
        best_fscore,
        evaluated,
    })
}

/// Writes the final page-level detections `doc_id,page,left,top,right,bottom`.
pub fn write_page_detections<W: Write>(
    writer: W,
    pages: &BTreeMap<PageKey, Vec<Rect>>,
) -> Result<()> {
    const CTX: &str = "page detection csv";
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["doc_id", "page", "left", "top", "right", "bottom"])
        .map_err(|e| Error::csv(CTX, e))?;
    for (key, rects) in pages {
        for r in rects {
            w.write_record([
                key.doc_id.clone(),
                key.page.to_string(),
                r.left().to_string(),
                r.top().to_string(),
                r.right().to_string(),
                r.bottom().to_string(),
            ])
            .map_err(|e| Error::csv(CTX, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(CTX, e))?;
    Ok(())
}

#[derive(Deserialize)]
struct RawPageDetection {
    doc_id: String,
    page: String,
    left: String,
    top: String,
    right: String,
    bottom: String,
}

pub fn read_page_detections<R: Read>(reader: R) -> Result<BTreeMap<PageKey, Vec<Rect>>> {
    const CTX: &str = "page detection csv";
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: BTreeMap<PageKey, Vec<Rect>> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<RawPageDetection>().enumerate() {
        let row = i as u64 + 2;
        let raw = rec.map_err(|e| Error::row(CTX, row, e.to_string()))?;
        let page = u32::try_from(parse_int(&raw.page, "page", row, CTX)?)
            .map_err(|_| Error::row(CTX, row, "page: out of range"))?;
        let rect = Rect::from_i64(
            parse_int(&raw.left, "left", row, CTX)?,
            parse_int(&raw.top, "top", row, CTX)?,
            parse_int(&raw.right, "right", row, CTX)?,
            parse_int(&raw.bottom, "bottom", row, CTX)?,
        )
        .map_err(|e| Error::row(CTX, row, e.to_string()))?;
        out.entry(PageKey::new(raw.doc_id, page))
            .or_default()
            .push(rect);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sr(l: u32, t: u32, r: u32, b: u32, c: f64) -> ScoredRect {
        ScoredRect::new(Rect::new(l, t, r, b).unwrap(), c).unwrap()
    }

    fn rect(l: u32, t: u32, r: u32, b: u32) -> Rect {
        Rect::new(l, t, r, b).unwrap()
    }

    #[test]
    fn single_box_scores() {
        let m = vote(&[sr(2, 2, 5, 5, 0.6)], (8, 8));
        assert_eq!(m.score_at(VoteMethod::Uniform, 3, 3), 1.0);
        for method in [VoteMethod::Sum, VoteMethod::Max, VoteMethod::Average] {
            assert!((m.score_at(method, 3, 3) - 0.6).abs() < 1e-12);
            assert_eq!(m.score_at(method, 0, 0), 0.0);
        }
        assert_eq!(m.score_at(VoteMethod::Uniform, 5, 5), 0.0);
    }

    #[test]
    fn overlapping_pair_scores() {
        let m = vote(&[sr(0, 0, 6, 6, 0.6), sr(3, 3, 8, 8, 0.8)], (8, 8));
        assert_eq!(m.score_at(VoteMethod::Uniform, 4, 4), 2.0);
        assert!((m.score_at(VoteMethod::Sum, 4, 4) - 1.4).abs() < 1e-12);
        assert!((m.score_at(VoteMethod::Max, 4, 4) - 0.8).abs() < 1e-12);
        assert!((m.score_at(VoteMethod::Average, 4, 4) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let m = vote(&[sr(2, 2, 4, 4, 0.0)], (6, 6));
        // zero threshold selects exactly the voted pixels
        assert_eq!(threshold_mask(&m, VoteMethod::Sum, 0.0).count_set(), 4);
        let dets: Vec<_> = (0..29).map(|_| sr(0, 0, 3, 3, 1.0)).collect();
        let m = vote(&dets, (6, 6));
        assert!(threshold_mask(&m, VoteMethod::Uniform, 30.0).is_empty());
        assert_eq!(threshold_mask(&m, VoteMethod::Uniform, 29.0).count_set(), 9);
    }

    #[test]
    fn components_examples() {
        assert!(mask_components(&BinaryMask::new(5, 5)).is_empty());
        let mut mask = BinaryMask::new(20, 20);
        mask.fill_rect(&rect(0, 0, 4, 4), true);
        mask.fill_rect(&rect(10, 10, 14, 14), true);
        assert_eq!(
            mask_components(&mask),
            vec![rect(0, 0, 4, 4), rect(10, 10, 14, 14)]
        );
        mask.fill_rect(&rect(4, 4, 8, 8), true);
        assert_eq!(mask_components(&mask).len(), 2);
        assert_eq!(mask_components(&mask)[0], rect(0, 0, 8, 8));
    }

    #[test]
    fn stitch_examples() {
        let windows = crate::windowing::generate_windows((2400, 2400), 1200, 120, 512).unwrap();
        assert!(stitch(&[], &windows).unwrap().is_empty());
        let wd = WindowDetections {
            window_id: 0,
            detections: vec![sr(128, 256, 384, 512, 0.9)],
        };
        let s = stitch(std::slice::from_ref(&wd), &windows).unwrap();
        assert_eq!(s[0].rect, rect(300, 600, 900, 1200));
        assert_eq!(s[0].confidence(), 0.9);
        let bad = WindowDetections {
            window_id: 999,
            ..wd
        };
        assert!(stitch(&[bad], &windows).is_err());
    }

    #[test]
    fn downscaled_regions_map_back() {
        let mut m = VoteMap::new((100, 80), 4);
        m.add_votes(&[sr(10, 10, 30, 21, 1.0)]);
        assert_eq!((m.width(), m.height()), (25, 20));
        assert_eq!(
            regions(&m, VoteMethod::Uniform, 1.0, (100, 80)),
            vec![rect(8, 8, 32, 24)]
        );
    }

    #[test]
    fn page_detection_csv_round_trip() {
        let mut pages = BTreeMap::new();
        pages.insert(
            PageKey::new("a_b", 3),
            vec![rect(1, 2, 3, 4), rect(10, 10, 20, 30)],
        );
        pages.insert(PageKey::new("c", 1), vec![]);
        let mut buf = Vec::new();
        write_page_detections(&mut buf, &pages).unwrap();
        assert!(buf.starts_with(b"doc_id,page,left,top,right,bottom\na_b,3,1,2,3,4\n"));
        let back = read_page_detections(buf.as_slice()).unwrap();
        assert_eq!(
            back[&PageKey::new("a_b", 3)],
            pages[&PageKey::new("a_b", 3)]
        );
        assert!(read_page_detections(
            "doc_id,page,left,top,right,bottom\nx,1,5,5,5,9\n".as_bytes()
        )
        .is_err());
    }

    #[test]
    fn merge_shape_mismatch() {
        let mut a = VoteMap::new((10, 10), 1);
        assert!(a.merge(&VoteMap::new((10, 11), 1)).is_err());
    }

    #[test]
    fn grids() {
        let g = default_grid(VoteMethod::Uniform).values();
        assert_eq!(g.len(), 56);
        assert_eq!(g[55], 55.0);
        let g = default_grid(VoteMethod::Max).values();
        assert_eq!(g.len(), 101);
        assert_eq!(g[100], 1.0);
    }

    #[test]
    fn tune_single_candidate() {
        let votes = vote(&[sr(0, 0, 10, 10, 1.0)], (20, 20));
        let pages = [TunePage {
            page_size: (20, 20),
            gt: vec![rect(0, 0, 10, 10)],
            votes,
            ink: None,
        }];
        let r = tune_threshold(
            &pages,
            VoteMethod::Uniform,
            &[7.0],
            0.75,
            InklessPolicy::Drop,
        )
        .unwrap();
        assert_eq!(r.best_threshold, 7.0);
        assert_eq!(r.best_fscore, 0.0);
        let r = tune_threshold(
            &pages,
            VoteMethod::Uniform,
            &[0.0, 1.0, 2.0],
            0.75,
            InklessPolicy::Drop,
        )
        .unwrap();
        assert_eq!(r.best_threshold, 0.0);
        assert_eq!(r.best_fscore, 1.0);
        assert!(
            tune_threshold(&pages, VoteMethod::Uniform, &[], 0.75, InklessPolicy::Drop).is_err()
        );
    }

    fn arb_boxes(max: usize) -> impl Strategy<Value = Vec<ScoredRect>> {
        proptest::collection::vec(
            (0u32..64, 0u32..64, 1u32..30, 1u32..30, 0.0f64..=1.0),
            0..=max,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, c)| {
                    ScoredRect::new(
                        Rect::new(x, y, (x + w).min(64), (y + h).min(64)).unwrap(),
                        c,
                    )
                    .unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn accumulator_invariants(dets in arb_boxes(20)) {
            let m = vote(&dets, (64, 64));
            for y in 0..64 {
                for x in 0..64 {
                    let (c, s, mx) = (m.count_at(x, y) as f64, m.weighted_sum_at(x, y), m.max_conf_at(x, y));
                    if c == 0.0 {
                        prop_assert!(s == 0.0 && mx == 0.0);
                    }
                    prop_assert!(mx <= s && s <= c);
                    prop_assert!(m.score_at(VoteMethod::Average, x, y) <= 1.0);
                    prop_assert!(mx <= s.min(1.0));
                }
            }
        }

        #[test]
        fn merge_equals_joint_accumulation(a in arb_boxes(10), b in arb_boxes(10)) {
            let mut ma = vote(&a, (64, 64));
            let mb = vote(&b, (64, 64));
            ma.merge(&mb).unwrap();
            let joint: Vec<_> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(ma.clone(), vote(&joint, (64, 64)));
            let mut mb2 = mb;
            mb2.merge(&vote(&a, (64, 64))).unwrap();
            prop_assert_eq!(ma, mb2);
        }

        #[test]
        fn masks_shrink_with_threshold(dets in arb_boxes(20), t1 in 0.0f64..6.0, dt in 0.0f64..6.0) {
            let m = vote(&dets, (64, 64));
            for method in [VoteMethod::Uniform, VoteMethod::Sum, VoteMethod::Max] {
                let lo = threshold_mask(&m, method, t1);
                let hi = threshold_mask(&m, method, t1 + dt);
                prop_assert!(hi.is_subset_of(&lo));
                let area = |mask: &BinaryMask| mask_components(mask).iter().map(|r| r.area()).sum::<u64>();
                prop_assert!(area(&hi) <= area(&lo));
            }
        }
    }
}
