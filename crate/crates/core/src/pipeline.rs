//! End-to-end page processing: tile, detect, suppress, stitch, vote,
//! threshold and crop.
//!
//! All parallel work collects results in input order and votes are integer
//! or fixed-point sums, so outputs do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{Rgb, RgbImage};
use log::{debug, info};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{DetectorKind, PipelineConfig};
use crate::dataset::PageKey;
use crate::detector::bridge::ImportedDetections;
use crate::detector::{
    detect_window, nms, HeuristicDetector, OracleDetector, WindowDetections, WindowDetector,
};
use crate::error::{Error, Result};
use crate::geometry::{Rect, ScoredRect};
use crate::pooling::{finalize_regions, regions, VoteMap};
use crate::postprocess::{crop_box_within, InkComponents, InklessPolicy};
use crate::raster::PageImage;
use crate::windowing::{crop_window, generate_windows, window_to_page, WindowSpec};

/// Raw window detections of one page after per-window suppression.
pub fn detect_page(
    cfg: &PipelineConfig,
    page: &PageImage,
    detector: &dyn WindowDetector,
) -> Result<(Vec<WindowSpec>, Vec<WindowDetections>)> {
    let windows = generate_windows(page.size(), cfg.window_size, cfg.stride, cfg.input_size)?;
    let dets = windows
        .par_iter()
        .map(|w| {
            let raster = detector.needs_raster().then(|| crop_window(page, w));
            let mut wd = detect_window(detector, w, raster.as_ref())?;
            wd.detections = nms(&wd.detections, cfg.nms_iou);
            Ok(wd)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((windows, dets))
}

/// Maps window detections to the page, cropping each to the ink inside its
/// window when `ink` is given.
pub fn stitch_cropped(
    windows: &[WindowSpec],
    window_dets: &[WindowDetections],
    ink: Option<&InkComponents>,
    policy: InklessPolicy,
) -> Result<Vec<ScoredRect>> {
    let by_id: BTreeMap<usize, &WindowSpec> = windows.iter().map(|w| (w.id, w)).collect();
    let per_window = window_dets
        .par_iter()
        .map(|wd| {
            let w = by_id
                .get(&wd.window_id)
                .ok_or_else(|| Error::UnknownWindow(wd.window_id.to_string()))?;
            let frame = w.page_rect();
            let mut out = Vec::with_capacity(wd.detections.len());
            for d in &wd.detections {
                let r = window_to_page(w, &d.rect)?;
                let r = match ink {
                    None => Some(r),
                    Some(ink) => match crop_box_within(&r, ink, Some(&frame)) {
                        Some(c) => Some(c),
                        None if policy == InklessPolicy::Keep => Some(r),
                        None => None,
                    },
                };
                if let Some(r) = r {
                    out.push(d.with_rect(r));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_window.into_iter().flatten().collect())
}

/// Everything produced for one page.
#[derive(Debug, Clone)]
pub struct PageOutput {
    pub key: PageKey,
    pub windows: Vec<WindowSpec>,
    pub window_detections: Vec<WindowDetections>,
    pub votes: VoteMap,
    pub detections: Vec<Rect>,
}

/// Pools window detections of one page into final regions.
pub fn pool_page(
    cfg: &PipelineConfig,
    page_size: (u32, u32),
    windows: &[WindowSpec],
    window_dets: &[WindowDetections],
    ink: Option<&InkComponents>,
) -> Result<(VoteMap, Vec<Rect>)> {
    let pre = if cfg.crop_before_stitch { ink } else { None };
    let stitched = stitch_cropped(windows, window_dets, pre, cfg.inkless)?;
    let mut votes = VoteMap::new(page_size, cfg.vote_downscale);
    votes.add_votes(&stitched);
    let raw = regions(&votes, cfg.vote_method, cfg.vote_threshold, page_size);
    let post = if cfg.crop_after_pooling { ink } else { None };
    let dets = finalize_regions(raw, post, cfg.inkless);
    Ok((votes, dets))
}

/// Runs detection and pooling on one page.
pub fn process_page(
    cfg: &PipelineConfig,
    key: &PageKey,
    page: &PageImage,
    detector: &dyn WindowDetector,
) -> Result<PageOutput> {
    let t0 = Instant::now();
    let ink =
        (cfg.crop_before_stitch || cfg.crop_after_pooling).then(|| InkComponents::from_page(page));
    let t_ink = t0.elapsed();
    let (windows, window_detections) = detect_page(cfg, page, detector)?;
    let t_detect = t0.elapsed();
    let (votes, detections) =
        pool_page(cfg, page.size(), &windows, &window_detections, ink.as_ref())?;
    debug!(
        "{key}: ink {:?}, detect {:?}, pool {:?}, {} windows, {} regions",
        t_ink,
        t_detect - t_ink,
        t0.elapsed() - t_detect,
        windows.len(),
        detections.len()
    );
    Ok(PageOutput {
        key: key.clone(),
        windows,
        window_detections,
        votes,
        detections,
    })
}

/// Where window detections come from.
pub enum DetectorSource<'a> {
    /// Zero-or-noisy replay of ground-truth formula boxes (page coordinates).
    Oracle(&'a BTreeMap<PageKey, Vec<Rect>>),
    Heuristic,
    External(&'a ImportedDetections),
}

impl DetectorSource<'_> {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorSource::Oracle(_) => DetectorKind::Oracle,
            DetectorSource::Heuristic => DetectorKind::Heuristic,
            DetectorSource::External(_) => DetectorKind::External,
        }
    }

    pub fn detector_for(&self, cfg: &PipelineConfig, key: &PageKey) -> Box<dyn WindowDetector> {
        match self {
            DetectorSource::Oracle(gt) => Box::new(OracleDetector::new(
                key.clone(),
                gt.get(key).cloned().unwrap_or_default(),
                cfg.oracle,
                cfg.seed,
            )),
            DetectorSource::Heuristic => Box::new(HeuristicDetector::default()),
            DetectorSource::External(imp) => Box::new(imp.detector_for(key)),
        }
    }
}

/// A page to process: either already in memory or a raster file.
#[derive(Debug, Clone)]
pub enum PageSource {
    Memory(PageKey, PageImage),
    File(PageKey, PathBuf),
}

impl PageSource {
    pub fn key(&self) -> &PageKey {
        match self {
            PageSource::Memory(k, _) | PageSource::File(k, _) => k,
        }
    }
}

/// Thread pool with `workers` threads (0 = one per core).
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every page through [`process_page`] on a pool of `cfg.workers`
/// threads. Outputs come back in input order.
pub fn run_pages(
    cfg: &PipelineConfig,
    pages: &[PageSource],
    source: &DetectorSource<'_>,
) -> Result<Vec<PageOutput>> {
    cfg.validate()?;
    let pool = thread_pool(cfg.workers)?;
    let t0 = Instant::now();
    let out = pool.install(|| {
        pages
            .par_iter()
            .map(|p| {
                let loaded;
                let (key, image) = match p {
                    PageSource::Memory(k, img) => (k, img),
                    PageSource::File(k, path) => {
                        loaded = PageImage::load(path)?;
                        (k, &loaded)
                    }
                };
                let det = source.detector_for(cfg, key);
                process_page(cfg, key, image, det.as_ref())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    info!(
        "processed {} pages with the {} detector in {:?}",
        pages.len(),
        source.kind().as_str(),
        t0.elapsed()
    );
    Ok(out)
}

pub fn detections_map(outputs: &[PageOutput]) -> BTreeMap<PageKey, Vec<Rect>> {
    outputs
        .iter()
        .map(|o| (o.key.clone(), o.detections.clone()))
        .collect()
}

/// Page rasters named `{doc_id}_{page}.png` in `dir`, sorted by key.
pub fn discover_pages(dir: &Path) -> Result<Vec<PageSource>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        if let Some(key) = parse_page_stem(stem) {
            out.push(PageSource::File(key, path));
        }
    }
    out.sort_by(|a, b| a.key().cmp(b.key()));
    Ok(out)
}

/// `{doc_id}_{page}` with the page number after the last underscore.
pub fn parse_page_stem(stem: &str) -> Option<PageKey> {
    let (doc, page) = stem.rsplit_once('_')?;
    if doc.is_empty() {
        return None;
    }
    Some(PageKey::new(doc, page.parse().ok()?))
}

/// Path of the raster for `key` in `dir`.
pub fn page_path(dir: &Path, key: &PageKey) -> PathBuf {
    dir.join(format!("{key}.png"))
}

/// Copy of the page with detections outlined in red.
pub fn render_overlay(page: &PageImage, dets: &[Rect]) -> RgbImage {
    const THICKNESS: u32 = 3;
    let (w, h) = page.size();
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let v = page.image.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    for r in dets {
        for y in r.top()..r.bottom().min(h) {
            for x in r.left()..r.right().min(w) {
                let edge = x < r.left() + THICKNESS
                    || x + THICKNESS >= r.right()
                    || y < r.top() + THICKNESS
                    || y + THICKNESS >= r.bottom();
                if edge {
                    img.put_pixel(x, y, Rgb([220, 0, 0]));
                }
            }
        }
    }
    img
}

/// Hex SHA-256 of a file's contents.
pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: String,
    /// `(path, sha256)` of every input file.
    pub inputs: Vec<(String, String)>,
    /// `(path, sha256)` of every output file.
    pub outputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            config: cfg.canonical_text(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .push((path.display().to_string(), hash_file(path)?));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .push((path.display().to_string(), hash_file(path)?));
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut text = format!(
            "command={}\nversion={}\nconfig_hash={}\n",
            self.command, self.version, self.config_hash
        );
        for line in self.config.lines() {
            text.push_str(&format!("config.{line}\n"));
        }
        for (p, h) in &self.inputs {
            text.push_str(&format!("input {h} {p}\n"));
        }
        for (p, h) in &self.outputs {
            text.push_str(&format!("output {h} {p}\n"));
        }
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::DEFAULT_WINDOW_SIZE;

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
    fn oracle_three_formula_page_reproduces_truth() {
        let formulas = vec![
            rect(700, 700, 1300, 800),
            rect(1500, 1200, 1700, 1290),
            rect(800, 1800, 1900, 2000),
        ];
        let page = page_with(2550, 3300, &formulas);
        let key = PageKey::new("doc", 1);
        let gt: BTreeMap<PageKey, Vec<Rect>> = [(key.clone(), formulas.clone())].into();
        let cfg = PipelineConfig::default();
        let out = run_pages(
            &cfg,
            &[PageSource::Memory(key, page)],
            &DetectorSource::Oracle(&gt),
        )
        .unwrap();
        assert_eq!(out[0].detections, formulas);
    }

    #[test]
    fn stitch_crops_within_window() {
        let f = rect(1000, 500, 1500, 560);
        let page = page_with(2400, 1200, &[f]);
        let ink = InkComponents::from_page(&page);
        let windows = generate_windows(page.size(), DEFAULT_WINDOW_SIZE, 120, 512).unwrap();
        // whole-window detection in window 0 crops to the visible part of f
        let wd = WindowDetections {
            window_id: 0,
            detections: vec![ScoredRect::new(rect(0, 0, 512, 512), 1.0).unwrap()],
        };
        let s = stitch_cropped(&windows, &[wd], Some(&ink), InklessPolicy::Drop).unwrap();
        assert_eq!(s[0].rect, rect(1000, 500, 1200, 560));
        let blank = WindowDetections {
            window_id: 1,
            detections: vec![ScoredRect::new(rect(0, 0, 10, 10), 1.0).unwrap()],
        };
        assert!(stitch_cropped(
            &windows,
            std::slice::from_ref(&blank),
            Some(&ink),
            InklessPolicy::Drop
        )
        .unwrap()
        .is_empty());
        assert_eq!(
            stitch_cropped(&windows, &[blank], Some(&ink), InklessPolicy::Keep)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let formulas = vec![rect(300, 400, 900, 470), rect(1400, 1500, 1600, 1560)];
        let page = page_with(2000, 2100, &formulas);
        let key = PageKey::new("d", 2);
        let gt: BTreeMap<PageKey, Vec<Rect>> = [(key.clone(), formulas)].into();
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&[
            "oracle.position_px=8",
            "oracle.drop_prob=0.3",
            "oracle.confidence=0.2..1",
        ])
        .unwrap();
        let pages = [PageSource::Memory(key, page)];
        let run = |workers| {
            let c = PipelineConfig {
                workers,
                ..cfg.clone()
            };
            run_pages(&c, &pages, &DetectorSource::Oracle(&gt)).unwrap()
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a[0].detections, b[0].detections);
        assert_eq!(a[0].votes, b[0].votes);
        assert_eq!(a[0].window_detections, b[0].window_detections);
    }

    #[test]
    fn page_stems() {
        assert_eq!(parse_page_stem("a_b_12"), Some(PageKey::new("a_b", 12)));
        assert_eq!(parse_page_stem("nopage"), None);
        assert_eq!(parse_page_stem("_3"), None);
        assert_eq!(parse_page_stem("x_y"), None);
    }

    #[test]
    fn overlay_outlines() {
        let page = PageImage::blank(50, 50).unwrap();
        let img = render_overlay(&page, &[rect(10, 10, 30, 30)]);
        assert_eq!(img.get_pixel(10, 20), &Rgb([220, 0, 0]));
        assert_eq!(img.get_pixel(20, 20), &Rgb([255, 255, 255]));
    }

    #[test]
    fn manifest_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"abc").unwrap();
        let mut m = RunManifest::new("run", &PipelineConfig::default());
        m.add_input(&input).unwrap();
        let out = dir.path().join("manifest.txt");
        m.write_to(&out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.contains("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
        assert!(text.contains(&format!("config_hash={}", PipelineConfig::default().hash())));
        assert!(m.add_input(&dir.path().join("missing")).is_err());
    }
}
