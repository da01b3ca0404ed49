//! File bridge to an external window detector.
//!
//! Export writes a window manifest plus one PNG crop per window. The external
//! detector answers with a detection CSV
//! `doc_id,page,window_id,left,top,right,bottom,confidence` in detector-input
//! coordinates, which import validates against the manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::GrayImage;
use log::warn;
use serde::Deserialize;

use crate::dataset::PageKey;
use crate::error::{Error, Result};
use crate::geometry::{Rect, ScoredRect};
use crate::raster::PageImage;
use crate::windowing::{crop_window, generate_windows, write_manifest, ManifestEntry, WindowSpec};

use super::{WindowDetections, WindowDetector};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `manifest.csv` and `{doc_id}_{page}_{window_id}.png` crops for every
/// window of every page into `dir`.
pub fn bridge_export(
    dir: &Path,
    pages: &[(PageKey, &PageImage)],
    window_size: u32,
    stride: u32,
    input_size: u32,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (key, page) in pages {
        for window in generate_windows(page.size(), window_size, stride, input_size)? {
            let path = dir.join(format!("{}.png", window.file_stem(key)));
            crop_window(page, &window)
                .save(&path)
                .map_err(|source| Error::Image { path, source })?;
            entries.push(ManifestEntry {
                page: key.clone(),
                window,
            });
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_manifest(BufWriter::new(file), &entries)?;
    Ok(entries)
}

/// Writes the detection CSV; confidences carry six decimals.
pub fn write_detection_csv<W: Write>(
    writer: W,
    rows: &[(PageKey, Vec<WindowDetections>)],
) -> Result<()> {
    const CTX: &str = "detection csv";
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "doc_id",
        "page",
        "window_id",
        "left",
        "top",
        "right",
        "bottom",
        "confidence",
    ])
    .map_err(|e| Error::csv(CTX, e))?;
    for (key, windows) in rows {
        for wd in windows {
            for d in &wd.detections {
                w.write_record([
                    key.doc_id.clone(),
                    key.page.to_string(),
                    wd.window_id.to_string(),
                    d.rect.left().to_string(),
                    d.rect.top().to_string(),
                    d.rect.right().to_string(),
                    d.rect.bottom().to_string(),
                    format!("{:.6}", d.confidence()),
                ])
                .map_err(|e| Error::csv(CTX, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(CTX, e))?;
    Ok(())
}

#[derive(Deserialize)]
struct RawDetectionRow {
    doc_id: String,
    page: u32,
    window_id: usize,
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
    confidence: f64,
}

/// Imported detections grouped by page and window id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportedDetections {
    pub by_page: BTreeMap<PageKey, BTreeMap<usize, Vec<ScoredRect>>>,
    /// Rows whose box had to be clipped to the input square.
    pub clamped: usize,
    /// Rows dropped because nothing remained after clipping.
    pub dropped: usize,
}

impl ImportedDetections {
    pub fn window_detections(&self, page: &PageKey) -> Vec<WindowDetections> {
        self.by_page
            .get(page)
            .map(|m| {
                m.iter()
                    .map(|(&window_id, dets)| WindowDetections {
                        window_id,
                        detections: dets.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn detector_for(&self, page: &PageKey) -> ExternalDetector {
        ExternalDetector {
            detections: self.by_page.get(page).cloned().unwrap_or_default(),
        }
    }
}

/// Parses a detection CSV. Every `(doc_id, page, window_id)` must appear in
/// `manifest`; confidences must lie in `[0, 1]`. Fractional coordinates are
/// rounded outward.
pub fn bridge_import<R: Read>(reader: R, manifest: &[ManifestEntry]) -> Result<ImportedDetections> {
    const CTX: &str = "detection csv";
    let windows: HashMap<(&PageKey, usize), &WindowSpec> = manifest
        .iter()
        .map(|e| ((&e.page, e.window.id), &e.window))
        .collect();
    let mut out = ImportedDetections::default();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    for (i, rec) in rdr.deserialize::<RawDetectionRow>().enumerate() {
        let row = i as u64 + 2;
        let raw = rec.map_err(|e| Error::row(CTX, row, e.to_string()))?;
        let key = PageKey::new(raw.doc_id, raw.page);
        let window = windows
            .get(&(&key, raw.window_id))
            .ok_or_else(|| Error::UnknownWindow(format!("{key}_{}", raw.window_id)))?;
        if !(0.0..=1.0).contains(&raw.confidence) {
            return Err(Error::row(
                CTX,
                row,
                format!("confidence {} outside [0, 1]", raw.confidence),
            ));
        }
        let vals = [raw.left, raw.top, raw.right, raw.bottom];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::row(CTX, row, "non-finite coordinate"));
        }
        let size = window.input_size as f64;
        let l = raw.left.floor();
        let t = raw.top.floor();
        let r = raw.right.ceil();
        let b = raw.bottom.ceil();
        let clip = |v: f64| v.clamp(0.0, size);
        if [l, t, r, b].iter().any(|&v| clip(v) != v) {
            out.clamped += 1;
        }
        match Rect::from_i64(
            clip(l) as i64,
            clip(t) as i64,
            clip(r) as i64,
            clip(b) as i64,
        ) {
            Ok(rect) => out
                .by_page
                .entry(key)
                .or_default()
                .entry(raw.window_id)
                .or_default()
                .push(ScoredRect::new(rect, raw.confidence)?),
            Err(_) => out.dropped += 1,
        }
    }
    if out.clamped > 0 || out.dropped > 0 {
        warn!(
            "{CTX}: clipped {} detections to the input bounds, dropped {}",
            out.clamped, out.dropped
        );
    }
    Ok(out)
}

/// Replays imported detections for one page.
#[derive(Debug, Clone, Default)]
pub struct ExternalDetector {
    detections: BTreeMap<usize, Vec<ScoredRect>>,
}

impl WindowDetector for ExternalDetector {
    fn needs_raster(&self) -> bool {
        false
    }

    fn detect(&self, window: &WindowSpec, _raster: Option<&GrayImage>) -> Result<Vec<ScoredRect>> {
        Ok(self.detections.get(&window.id).cloned().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::read_manifest;

    const HEADER: &str = "doc_id,page,window_id,left,top,right,bottom,confidence\n";

    fn manifest() -> Vec<ManifestEntry> {
        generate_windows((1300, 1200), 1200, 120, 512)
            .unwrap()
            .into_iter()
            .map(|window| ManifestEntry {
                page: PageKey::new("doc", 1),
                window,
            })
            .collect()
    }

    #[test]
    fn empty_csv() {
        let imp = bridge_import(HEADER.as_bytes(), &manifest()).unwrap();
        assert!(imp.by_page.is_empty());
        let det = imp.detector_for(&PageKey::new("doc", 1));
        assert!(det.detect(&manifest()[0].window, None).unwrap().is_empty());
    }

    #[test]
    fn one_row() {
        let csv = format!("{HEADER}doc,1,1,10,20,30,40,0.750000\n");
        let imp = bridge_import(csv.as_bytes(), &manifest()).unwrap();
        let wd = imp.window_detections(&PageKey::new("doc", 1));
        assert_eq!(wd.len(), 1);
        assert_eq!(wd[0].window_id, 1);
        assert_eq!(wd[0].detections[0].rect, Rect::new(10, 20, 30, 40).unwrap());
        assert_eq!(wd[0].detections[0].confidence(), 0.75);
    }

    #[test]
    fn errors_and_clamping() {
        let m = manifest();
        let unknown = format!("{HEADER}doc,1,9,10,20,30,40,0.5\n");
        assert!(matches!(
            bridge_import(unknown.as_bytes(), &m),
            Err(Error::UnknownWindow(_))
        ));
        let other_page = format!("{HEADER}doc,2,0,10,20,30,40,0.5\n");
        assert!(bridge_import(other_page.as_bytes(), &m).is_err());
        let conf = format!("{HEADER}doc,1,0,10,20,30,40,1.5\n");
        assert!(bridge_import(conf.as_bytes(), &m).is_err());

        let clamp = format!("{HEADER}doc,1,0,-4,500,30.2,530,0.5\ndoc,1,0,600,0,700,10,0.5\n");
        let imp = bridge_import(clamp.as_bytes(), &m).unwrap();
        assert_eq!(imp.clamped, 2);
        assert_eq!(imp.dropped, 1);
        let d = &imp.by_page[&PageKey::new("doc", 1)][&0];
        assert_eq!(d[0].rect, Rect::new(0, 500, 31, 512).unwrap());
    }

    #[test]
    fn export_identity_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut page = PageImage::blank(1300, 1200).unwrap();
        page.fill_rect(&Rect::new(100, 100, 400, 160).unwrap(), 0);
        let key = PageKey::new("doc", 1);
        let entries = bridge_export(dir.path(), &[(key.clone(), &page)], 1200, 120, 512).unwrap();
        assert_eq!(entries.len(), 2);
        for e in &entries {
            let img = image::open(dir.path().join(format!("{}.png", e.window.file_stem(&key))))
                .unwrap()
                .into_luma8();
            assert_eq!(img.dimensions(), (512, 512));
        }
        let manifest = read_manifest(File::open(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest, entries);

        // an "external detector" that answers one full-input box per window
        let rows = vec![(
            key.clone(),
            manifest
                .iter()
                .map(|e| WindowDetections {
                    window_id: e.window.id,
                    detections: vec![ScoredRect::new(e.window.input_rect(), 0.123456).unwrap()],
                })
                .collect::<Vec<_>>(),
        )];
        let mut buf = Vec::new();
        write_detection_csv(&mut buf, &rows).unwrap();
        let imp = bridge_import(buf.as_slice(), &manifest).unwrap();
        let ids: Vec<usize> = imp.by_page[&key].keys().copied().collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(imp.window_detections(&key), rows[0].1);
    }
}
