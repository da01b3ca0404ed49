//! Cropping detections to the ink they cover.
//!
//! A box is replaced by the tight union of every ink component whose rect
//! touches it (shared border pixels count), repeated until no further
//! component touches the result. Boxes touching no ink are dropped.

use crate::components::{connected_components, BinaryMask, Component};
use crate::geometry::Rect;
use crate::raster::PageImage;

/// Otsu threshold over a 256-bin histogram: pixels `<= t` form the dark
/// class. `None` when fewer than two grey levels are present.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return None;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &h)| v as f64 * h as f64)
        .sum();
    let mut w0 = 0u64;
    let mut sum0 = 0f64;
    let mut best = (f64::NEG_INFINITY, 0u8);
    for (t, &h) in hist.iter().enumerate().take(255) {
        w0 += h;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        // strict: lowest threshold wins among equals
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Some(best.1)
}

pub fn histogram(pixels: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    hist
}

/// Ink mask of a grayscale raster (dark on light).
///
/// Uniform rasters have no Otsu split: they are all ink when dark
/// (below mid-grey) and empty otherwise.
pub fn binarize_pixels(width: u32, height: u32, pixels: &[u8]) -> BinaryMask {
    let hist = histogram(pixels);
    let data = match otsu_threshold(&hist) {
        Some(t) => pixels.iter().map(|&p| p <= t).collect(),
        None => {
            let dark = pixels.first().is_some_and(|&p| p < 128);
            vec![dark; pixels.len()]
        }
    };
    BinaryMask::from_vec(width, height, data).expect("pixel count matches dimensions")
}

pub fn binarize(page: &PageImage) -> BinaryMask {
    binarize_pixels(page.width(), page.height(), page.image.as_raw())
}

const GRID_CELL: u32 = 64;

/// Connected ink components of a page with a uniform-grid index for rect
/// queries.
#[derive(Debug, Clone)]
pub struct InkComponents {
    components: Vec<Component>,
    cols: u32,
    rows: u32,
    cells: Vec<Vec<u32>>,
}

impl InkComponents {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        InkComponents::from_components(mask.width(), mask.height(), connected_components(mask))
    }

    pub fn from_page(page: &PageImage) -> Self {
        InkComponents::from_mask(&binarize(page))
    }

    pub fn from_components(width: u32, height: u32, components: Vec<Component>) -> Self {
        let cols = width.div_ceil(GRID_CELL).max(1);
        let rows = height.div_ceil(GRID_CELL).max(1);
        let mut cells = vec![Vec::new(); cols as usize * rows as usize];
        for (i, c) in components.iter().enumerate() {
            let (c0, c1, r0, r1) = cell_span(&c.rect, cols, rows);
            for r in r0..=r1 {
                for cc in c0..=c1 {
                    cells[(r * cols + cc) as usize].push(i as u32);
                }
            }
        }
        InkComponents {
            components,
            cols,
            rows,
            cells,
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Indices of components whose rect intersects `r`, ascending.
    pub fn intersecting(&self, r: &Rect) -> Vec<usize> {
        let (c0, c1, r0, r1) = cell_span(r, self.cols, self.rows);
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                for &i in &self.cells[(row * self.cols + col) as usize] {
                    if self.components[i as usize].rect.intersection(r).is_some() {
                        out.push(i as usize);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Indices of components touching `r`, including components that only
    /// share a border pixel with it.
    pub fn touching(&self, r: &Rect) -> Vec<usize> {
        self.intersecting(&r.expand(1))
    }
}

fn cell_span(r: &Rect, cols: u32, rows: u32) -> (u32, u32, u32, u32) {
    let c0 = (r.left() / GRID_CELL).min(cols - 1);
    let c1 = ((r.right() - 1) / GRID_CELL).min(cols - 1);
    let r0 = (r.top() / GRID_CELL).min(rows - 1);
    let r1 = ((r.bottom() - 1) / GRID_CELL).min(rows - 1);
    (c0, c1, r0, r1)
}

/// Crops `b` to the ink components it touches, growing to a fixed point.
/// `None` when no ink touches `b`.
pub fn crop_box(b: &Rect, ink: &InkComponents) -> Option<Rect> {
    crop_box_within(b, ink, None)
}

/// As [`crop_box`], with the result clipped to `frame` (the window a
/// detection came from, for pre-stitch cropping).
pub fn crop_box_within(b: &Rect, ink: &InkComponents, frame: Option<&Rect>) -> Option<Rect> {
    let mut selected = ink.touching(b);
    let mut current = *b;
    // without a frame the selection only grows; the cap guards clipped cases
    for _ in 0..=ink.len() + 1 {
        let union = Rect::union_all(selected.iter().map(|&i| &ink.components[i].rect))?;
        current = match frame {
            Some(f) => union.intersection(f)?,
            None => union,
        };
        let next = ink.touching(&current);
        if next == selected {
            break;
        }
        selected = next;
    }
    Some(current)
}

/// What to do with a detection that touches no ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InklessPolicy {
    #[default]
    Drop,
    Keep,
}

pub fn crop_boxes(
    boxes: impl IntoIterator<Item = Rect>,
    ink: &InkComponents,
    frame: Option<&Rect>,
    policy: InklessPolicy,
) -> Vec<Rect> {
    boxes
        .into_iter()
        .filter_map(|b| match crop_box_within(&b, ink, frame) {
            Some(r) => Some(r),
            None if policy == InklessPolicy::Keep => Some(b),
            None => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(l: u32, t: u32, r: u32, b: u32) -> Rect {
        Rect::new(l, t, r, b).unwrap()
    }

    fn page_with(w: u32, h: u32, boxes: &[Rect]) -> PageImage {
        let mut p = PageImage::blank(w, h).unwrap();
        for b in boxes {
            p.fill_rect(b, 0);
        }
        p
    }

    #[test]
    fn binarize_examples() {
        assert!(binarize(&PageImage::blank(20, 10).unwrap()).is_empty());
        let black = page_with(20, 10, &[rect(0, 0, 20, 10)]);
        assert_eq!(binarize(&black).count_set(), 200);
        let half = page_with(20, 10, &[rect(0, 0, 10, 10)]);
        let m = binarize(&half);
        assert_eq!(m.count_set(), 100);
        assert!(m.get(9, 5) && !m.get(10, 5));
    }

    #[test]
    fn otsu_splits_bimodal_noise() {
        let mut hist = [0u64; 256];
        hist[20..40].fill(10);
        hist[200..230].fill(30);
        let t = otsu_threshold(&hist).unwrap();
        assert!((39..200).contains(&(t as usize)), "{t}");
    }

    #[test]
    fn crop_examples() {
        let glyph = rect(100, 100, 140, 160);
        let ink = InkComponents::from_page(&page_with(400, 400, &[glyph]));
        assert_eq!(crop_box(&glyph, &ink), Some(glyph));
        // half a glyph grows to the whole glyph
        assert_eq!(crop_box(&rect(120, 90, 200, 170), &ink), Some(glyph));
        assert_eq!(crop_box(&rect(90, 90, 120, 120), &ink), Some(glyph));
        assert_eq!(crop_box(&rect(300, 300, 350, 350), &ink), None);
        // shared border counts as touching
        assert_eq!(crop_box(&rect(140, 100, 180, 160), &ink), Some(glyph));
        assert_eq!(crop_box(&rect(141, 100, 180, 160), &ink), None);
    }

    #[test]
    fn crop_shrinks_padding() {
        let a = rect(100, 100, 120, 130);
        let b = rect(130, 105, 170, 125);
        let ink = InkComponents::from_page(&page_with(400, 400, &[a, b]));
        assert_eq!(crop_box(&rect(80, 80, 200, 160), &ink), Some(a.union(&b)));
    }

    #[test]
    fn crop_within_frame() {
        let glyph = rect(100, 100, 300, 160);
        let ink = InkComponents::from_page(&page_with(400, 400, &[glyph]));
        let frame = rect(0, 0, 200, 400);
        assert_eq!(
            crop_box_within(&rect(150, 110, 190, 150), &ink, Some(&frame)),
            Some(rect(100, 100, 200, 160))
        );
    }

    #[test]
    fn inkless_policy() {
        let ink = InkComponents::from_page(&page_with(100, 100, &[rect(10, 10, 20, 20)]));
        let boxes = [rect(50, 50, 60, 60), rect(12, 12, 14, 14)];
        assert_eq!(
            crop_boxes(boxes, &ink, None, InklessPolicy::Drop),
            vec![rect(10, 10, 20, 20)]
        );
        assert_eq!(
            crop_boxes(boxes, &ink, None, InklessPolicy::Keep),
            vec![rect(50, 50, 60, 60), rect(10, 10, 20, 20)]
        );
    }

    fn arb_layout() -> impl Strategy<Value = (Vec<Rect>, Rect)> {
        let glyph = (0u32..110, 0u32..110, 1u32..18, 1u32..18)
            .prop_map(|(x, y, w, h)| Rect::from_xywh(x, y, w, h).unwrap());
        let query = (0u32..120, 0u32..120, 1u32..40, 1u32..40)
            .prop_map(|(x, y, w, h)| Rect::from_xywh(x, y, w, h).unwrap());
        (proptest::collection::vec(glyph, 0..12), query)
    }

    proptest! {
        #[test]
        fn crop_is_idempotent_and_covers_touched_ink((glyphs, query) in arb_layout()) {
            let ink = InkComponents::from_page(&page_with(140, 140, &glyphs));
            if let Some(r) = crop_box(&query, &ink) {
                prop_assert_eq!(crop_box(&r, &ink), Some(r));
                for i in ink.touching(&r) {
                    prop_assert!(r.contains_rect(&ink.components()[i].rect));
                }
            } else {
                prop_assert!(ink.touching(&query).is_empty());
            }
        }

        #[test]
        fn grid_index_matches_scan((glyphs, query) in arb_layout()) {
            let ink = InkComponents::from_page(&page_with(140, 140, &glyphs));
            let scan: Vec<usize> = ink.components().iter().enumerate()
                .filter(|(_, c)| c.rect.intersection(&query).is_some())
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(ink.intersecting(&query), scan);
        }
    }
}
