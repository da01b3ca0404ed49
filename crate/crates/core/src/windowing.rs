//! Overlapping sliding windows over a page.
//!
//! Origins sit on multiples of the stride along each axis. When the last
//! strided window does not end flush with the page edge, one more window is
//! appended with its origin pulled back to `dim - window_size` (a clamped
//! window). Pages smaller than a window get a single window per axis at 0 and
//! are padded with white when cropped.

use std::io::{Read, Write};

use image::{GrayImage, Luma};
use num_rational::Ratio;
use serde::Deserialize;

use crate::dataset::PageKey;
use crate::error::{Error, Result};
use crate::geometry::{Rect, Transform};
use crate::raster::PageImage;

pub const DEFAULT_WINDOW_SIZE: u32 = 1200;
pub const DEFAULT_STRIDE: u32 = 120;
pub const DEFAULT_INPUT_SIZE: u32 = 512;

/// Clipped formulas below this coverage are not exported as training targets
/// unless they can still match a default box.
pub const EXPORT_MIN_COVERAGE: f64 = 0.25;

/// One window placement on a page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    /// Row-major index of the window on its page.
    pub id: usize,
    pub origin_x: u32,
    pub origin_y: u32,
    pub window_size: u32,
    pub input_size: u32,
    pub clamped: bool,
}

impl WindowSpec {
    /// Window crop coordinates (page minus origin) to detector input.
    pub fn to_input(&self) -> Transform {
        let s = Ratio::new(self.input_size as i64, self.window_size as i64);
        Transform::with_rational_offsets(
            s,
            s,
            -s * Ratio::from_integer(self.origin_x as i64),
            -s * Ratio::from_integer(self.origin_y as i64),
        )
        .expect("window sizes are positive")
    }

    /// The window's footprint in page coordinates. May extend past the page
    /// for pages smaller than the window.
    pub fn page_rect(&self) -> Rect {
        Rect::from_xywh(
            self.origin_x,
            self.origin_y,
            self.window_size,
            self.window_size,
        )
        .expect("window size is positive")
    }

    pub fn input_rect(&self) -> Rect {
        Rect::new(0, 0, self.input_size, self.input_size).expect("input size is positive")
    }

    /// Raster/CSV identifier `{doc_id}_{page}_{window_id}`.
    pub fn file_stem(&self, page: &PageKey) -> String {
        format!("{page}_{}", self.id)
    }
}

/// Window origins along one axis with their clamp flags.
pub fn axis_origins(dim: u32, window_size: u32, stride: u32) -> Vec<(u32, bool)> {
    if dim <= window_size {
        return vec![(0, false)];
    }
    let span = dim - window_size;
    let mut out: Vec<(u32, bool)> = (0..=span / stride).map(|k| (k * stride, false)).collect();
    if !span.is_multiple_of(stride) {
        out.push((span, true));
    }
    out
}

/// All windows for a page of `page_size = (width, height)`, row-major.
pub fn generate_windows(
    page_size: (u32, u32),
    window_size: u32,
    stride: u32,
    input_size: u32,
) -> Result<Vec<WindowSpec>> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if window_size == 0 || input_size == 0 {
        return Err(Error::Config(
            "window and input sizes must be positive".into(),
        ));
    }
    if page_size.0 == 0 || page_size.1 == 0 {
        return Err(Error::Data("page has zero size".into()));
    }
    let xs = axis_origins(page_size.0, window_size, stride);
    let ys = axis_origins(page_size.1, window_size, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &(oy, cy) in &ys {
        for &(ox, cx) in &xs {
            out.push(WindowSpec {
                id: out.len(),
                origin_x: ox,
                origin_y: oy,
                window_size,
                input_size,
                clamped: cx || cy,
            });
        }
    }
    Ok(out)
}

/// Per-axis interval whose pixels are covered by exactly
/// `window_size / stride` windows along that axis, for `dim > window_size`.
///
/// Left of `window_size - stride` fewer windows reach; right of
/// `dim - window_size` the clamped window may add one.
pub fn interior_range(dim: u32, window_size: u32, stride: u32) -> std::ops::Range<u32> {
    let lo = window_size.saturating_sub(stride);
    let hi = dim.saturating_sub(window_size);
    lo..hi.max(lo)
}

/// Area weights for resampling `src` samples onto `dst` samples: for every
/// output index a list of `(input index, overlap)` in units where the whole
/// axis is `src * dst` long.
fn area_weights(src: u32, dst: u32) -> Vec<Vec<(u32, u32)>> {
    (0..dst)
        .map(|i| {
            let lo = i as u64 * src as u64;
            let hi = lo + src as u64;
            let j0 = (lo / dst as u64) as u32;
            let j1 = hi.div_ceil(dst as u64) as u32;
            (j0..j1)
                .filter_map(|j| {
                    let a = (j as u64 * dst as u64).max(lo);
                    let b = ((j as u64 + 1) * dst as u64).min(hi);
                    (b > a).then_some((j, (b - a) as u32))
                })
                .collect()
        })
        .collect()
}

/// Crops the window (white outside the page) and resamples it to
/// `input_size x input_size` by area averaging.
pub fn crop_window(page: &PageImage, w: &WindowSpec) -> GrayImage {
    let n = w.window_size;
    let m = w.input_size;
    let weights = area_weights(n, m);
    let (pw, ph) = page.size();

    // horizontal pass: n rows x m columns, scaled by n
    let mut tmp = vec![0u32; n as usize * m as usize];
    let mut row_buf = vec![255u8; n as usize];
    for y in 0..n {
        let py = w.origin_y + y;
        row_buf.fill(255);
        if py < ph {
            let x_end = (w.origin_x + n).min(pw);
            if w.origin_x < x_end {
                let start = (py * pw + w.origin_x) as usize;
                let len = (x_end - w.origin_x) as usize;
                row_buf[..len].copy_from_slice(&page.image.as_raw()[start..start + len]);
            }
        }
        let out_row = &mut tmp[y as usize * m as usize..(y as usize + 1) * m as usize];
        for (i, ws) in weights.iter().enumerate() {
            out_row[i] = ws
                .iter()
                .map(|&(j, wt)| wt * row_buf[j as usize] as u32)
                .sum();
        }
    }

    let denom = n as u64 * n as u64;
    let mut out = GrayImage::new(m, m);
    for (k, ws) in weights.iter().enumerate() {
        for i in 0..m as usize {
            let acc: u64 = ws
                .iter()
                .map(|&(y, wt)| wt as u64 * tmp[y as usize * m as usize + i] as u64)
                .sum();
            let v = (acc + denom / 2) / denom;
            out.put_pixel(i as u32, k as u32, Luma([v.min(255) as u8]));
        }
    }
    out
}

/// A page formula as seen by one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CroppedTarget {
    /// Index into the formula list passed to [`crop_ground_truth`].
    pub formula_index: usize,
    /// Clipped box in page coordinates.
    pub page_rect: Rect,
    /// Clipped box in detector-input coordinates.
    pub input_rect: Rect,
    /// Clipped area over full formula area.
    pub coverage: f64,
}

/// Clips every formula intersecting the window and maps it to input
/// coordinates.
pub fn crop_ground_truth(w: &WindowSpec, formulas: &[Rect]) -> Vec<CroppedTarget> {
    let frame = w.page_rect();
    let to_input = w.to_input();
    formulas
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let clipped = f.intersection(&frame)?;
            let input_rect = to_input
                .apply(&clipped)
                .ok()?
                .intersection(&w.input_rect())?;
            Some(CroppedTarget {
                formula_index: i,
                page_rect: clipped,
                input_rect,
                coverage: clipped.area() as f64 / f.area() as f64,
            })
        })
        .collect()
}

/// Maps a detector-input rect back to page coordinates.
pub fn window_to_page(w: &WindowSpec, r: &Rect) -> Result<Rect> {
    Ok(w.to_input().inverse().apply(r)?)
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub page: PageKey,
    pub window: WindowSpec,
}

/// Writes `doc_id,page,window_id,origin_x,origin_y,window_size,input_size,clamped`.
pub fn write_manifest<W: Write>(writer: W, entries: &[ManifestEntry]) -> Result<()> {
    const CTX: &str = "window manifest";
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "doc_id",
        "page",
        "window_id",
        "origin_x",
        "origin_y",
        "window_size",
        "input_size",
        "clamped",
    ])
    .map_err(|e| Error::csv(CTX, e))?;
    for e in entries {
        let win = &e.window;
        w.write_record([
            e.page.doc_id.clone(),
            e.page.page.to_string(),
            win.id.to_string(),
            win.origin_x.to_string(),
            win.origin_y.to_string(),
            win.window_size.to_string(),
            win.input_size.to_string(),
            (win.clamped as u8).to_string(),
        ])
        .map_err(|e| Error::csv(CTX, e))?;
    }
    w.flush().map_err(|e| Error::io(CTX, e))?;
    Ok(())
}

#[derive(Deserialize)]
struct RawManifestRow {
    doc_id: String,
    page: u32,
    window_id: usize,
    origin_x: u32,
    origin_y: u32,
    window_size: u32,
    input_size: u32,
    clamped: u8,
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    const CTX: &str = "window manifest";
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<RawManifestRow>()
        .enumerate()
        .map(|(i, rec)| {
            let raw = rec.map_err(|e| Error::row(CTX, i as u64 + 2, e.to_string()))?;
            if raw.window_size == 0 || raw.input_size == 0 {
                return Err(Error::row(CTX, i as u64 + 2, "zero window or input size"));
            }
            Ok(ManifestEntry {
                page: PageKey::new(raw.doc_id, raw.page),
                window: WindowSpec {
                    id: raw.window_id,
                    origin_x: raw.origin_x,
                    origin_y: raw.origin_y,
                    window_size: raw.window_size,
                    input_size: raw.input_size,
                    clamped: raw.clamped != 0,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(l: u32, t: u32, r: u32, b: u32) -> Rect {
        Rect::new(l, t, r, b).unwrap()
    }

    #[test]
    fn window_counts() {
        let ws = generate_windows((2400, 2400), 1200, 120, 512).unwrap();
        assert_eq!(ws.len(), 121);
        assert!(ws.iter().all(|w| !w.clamped));

        let ws = generate_windows((1200, 1200), 1200, 120, 512).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!((ws[0].origin_x, ws[0].origin_y), (0, 0));

        let ws = generate_windows((1250, 1200), 1200, 120, 512).unwrap();
        let xs: Vec<_> = ws.iter().map(|w| (w.origin_x, w.clamped)).collect();
        assert_eq!(xs, vec![(0, false), (50, true)]);
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(generate_windows((2000, 2000), 1200, 0, 512).is_err());
    }

    #[test]
    fn small_page_single_padded_window() {
        let ws = generate_windows((800, 500), 1200, 120, 512).unwrap();
        assert_eq!(ws.len(), 1);
        let mut page = PageImage::blank(800, 500).unwrap();
        page.fill_rect(&rect(0, 0, 800, 500), 0);
        let crop = crop_window(&page, &ws[0]);
        // padded area stays white
        assert_eq!(crop.get_pixel(511, 511)[0], 255);
        assert_eq!(crop.get_pixel(0, 0)[0], 0);
    }

    #[test]
    fn crop_white_and_single_pixel() {
        let page = PageImage::blank(1500, 1300).unwrap();
        let w = generate_windows((1500, 1300), 1200, 120, 512).unwrap()[0];
        let crop = crop_window(&page, &w);
        assert!(crop.pixels().all(|p| p[0] == 255));

        let mut page = PageImage::blank(1500, 1300).unwrap();
        page.fill_rect(&rect(240, 120, 241, 121), 0);
        let w = generate_windows((1500, 1300), 1200, 120, 512).unwrap()[2];
        assert_eq!((w.origin_x, w.origin_y), (240, 0));
        let w = WindowSpec { origin_y: 120, ..w };
        let crop = crop_window(&page, &w);
        let dark: Vec<_> = crop
            .enumerate_pixels()
            .filter(|(_, _, p)| p[0] < 255)
            .map(|(x, y, _)| (x, y))
            .collect();
        assert_eq!(dark, vec![(0, 0)]);
    }

    #[test]
    fn crop_preserves_checkerboard_mean() {
        let mut img = GrayImage::new(1200, 1200);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Luma([if (x + y) % 2 == 0 { 0 } else { 255 }]);
        }
        let page = PageImage::new(img).unwrap();
        let w = generate_windows((1200, 1200), 1200, 120, 512).unwrap()[0];
        let crop = crop_window(&page, &w);
        let mean_in = 127.5;
        let mean_out = crop.pixels().map(|p| p[0] as f64).sum::<f64>() / (512.0 * 512.0);
        assert!((mean_out - mean_in).abs() <= 1.0, "{mean_out}");
    }

    #[test]
    fn area_weights_partition_axis() {
        let ws = area_weights(1200, 512);
        let mut per_input = vec![0u32; 1200];
        for row in &ws {
            assert_eq!(row.iter().map(|&(_, w)| w).sum::<u32>(), 1200);
            for &(j, w) in row {
                per_input[j as usize] += w;
            }
        }
        assert!(per_input.iter().all(|&w| w == 512));
    }

    #[test]
    fn ground_truth_cropping() {
        let w = generate_windows((2400, 2400), 1200, 120, 512).unwrap()[0];
        let inside = crop_ground_truth(&w, &[rect(300, 600, 900, 1200)]);
        assert_eq!(inside.len(), 1);
        assert_eq!(inside[0].coverage, 1.0);
        assert_eq!(inside[0].input_rect, rect(128, 256, 384, 512));

        assert!(crop_ground_truth(&w, &[rect(1300, 0, 1400, 100)]).is_empty());

        let part = crop_ground_truth(&w, &[rect(1100, 0, 1300, 100)]);
        assert_eq!(part[0].page_rect, rect(1100, 0, 1200, 100));
        assert_eq!(part[0].coverage, 0.5);
    }

    #[test]
    fn window_to_page_examples() {
        let ws = generate_windows((3000, 3000), 1200, 120, 512).unwrap();
        let w = *ws
            .iter()
            .find(|w| w.origin_x == 600 && w.origin_y == 600)
            .unwrap();
        assert_eq!(
            window_to_page(&w, &rect(0, 0, 512, 512)).unwrap(),
            rect(600, 600, 1800, 1800)
        );
        assert_eq!(
            window_to_page(&ws[0], &rect(128, 256, 384, 512)).unwrap(),
            rect(300, 600, 900, 1200)
        );
        // lattice-aligned: multiples of 75 page px map to multiples of 32 input px
        let r = rect(675, 750, 1275, 1425);
        let input = w.to_input().apply(&r).unwrap();
        assert_eq!(window_to_page(&w, &input).unwrap(), r);
    }

    #[test]
    fn manifest_round_trip() {
        let page = PageKey::new("doc", 4);
        let entries: Vec<_> = generate_windows((1300, 1250), 1200, 120, 512)
            .unwrap()
            .into_iter()
            .map(|window| ManifestEntry {
                page: page.clone(),
                window,
            })
            .collect();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &entries).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "doc_id,page,window_id,origin_x,origin_y,window_size,input_size,clamped\ndoc,4,0,0,0,1200,512,0\n"
        ));
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), entries);
    }
}
