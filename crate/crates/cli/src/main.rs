//! `fdp`: command-line driver for the formula detection pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 failure inside a pipeline stage.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use fdp_core::anchors::{export_training_targets, generate_default_boxes, TrainingPage};
use fdp_core::config::{DetectorKind, PipelineConfig};
use fdp_core::dataset::{
    adjust_ground_truth, collection_stats, formula_map, parse_gtdb, read_formula_csv,
    write_formula_csv, CoordConvention, FormulaBox, GroundTruthPage, PageKey,
};
use fdp_core::detector::bridge::{
    bridge_export, bridge_import, write_detection_csv, ImportedDetections,
};
use fdp_core::evaluation::{
    character_metrics, evaluate_suite, format_report, report_rows, write_report_csv,
};
use fdp_core::geometry::{Rect, Transform};
use fdp_core::pipeline::{
    detect_page, detections_map, discover_pages, pool_page, render_overlay, run_pages, thread_pool,
    DetectorSource, PageSource, RunManifest,
};
use fdp_core::pooling::{
    default_grid, tune_threshold, write_page_detections, TunePage, VoteMethod,
};
use fdp_core::postprocess::InkComponents;
use fdp_core::raster::PageImage;
use fdp_core::synthetic::{generate_corpus, write_corpus, SyntheticParams};
use fdp_core::windowing::{generate_windows, ManifestEntry};
use fdp_core::Error;

#[derive(Parser)]
#[command(
    name = "fdp",
    version,
    about = "Sliding-window formula detection pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for the oracle detector.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Derive formula regions from character-level ground truth.
    Ingest(IngestArgs),
    /// Print collection statistics of character-level ground truth.
    Stats(StatsArgs),
    /// Write window crops and the window manifest for an external detector.
    Tile(TileArgs),
    /// Write default-box training targets for every window.
    ExportTargets(ExportTargetsArgs),
    /// Run the window detector and write window-level detections.
    Detect(DetectArgs),
    /// Stitch and pool window-level detections into page-level regions.
    Pool(PoolArgs),
    /// Score page-level detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Grid-search the vote threshold.
    Tune(TuneArgs),
    /// Run the whole pipeline.
    #[command(alias = "pipeline")]
    Run(RunArgs),
    /// Generate a synthetic corpus of pages with black-box formulas.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Character-level ground-truth CSV files.
    #[arg(required = true)]
    gt: Vec<PathBuf>,
    /// Output formula-region CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Right/bottom coordinates in the input are inclusive.
    #[arg(long)]
    inclusive: bool,
    /// Scale all boxes by NUM/DEN, e.g. `1/2`.
    #[arg(long, value_name = "NUM/DEN")]
    scale: Option<String>,
    /// Translate all boxes (after scaling).
    #[arg(long, value_name = "DX,DY")]
    translate: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(required = true)]
    gt: Vec<PathBuf>,
    #[arg(long)]
    inclusive: bool,
}

#[derive(Args)]
struct PagesArg {
    /// Directory of page rasters named `{doc_id}_{page}.png`.
    #[arg(long)]
    pages: PathBuf,
}

#[derive(Args)]
struct TileArgs {
    #[command(flatten)]
    pages: PagesArg,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportTargetsArgs {
    #[command(flatten)]
    pages: PagesArg,
    /// Formula-region CSV.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectorArgs {
    /// Formula-region CSV (oracle detector).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// External detection CSV in detector-input coordinates.
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    pages: PagesArg,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    #[command(flatten)]
    pages: PagesArg,
    /// Window-level detection CSV.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Write one vote heat map per page into this directory.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Formula-region CSV.
    #[arg(long)]
    gt: PathBuf,
    /// Page-level detection CSV.
    #[arg(long)]
    detections: PathBuf,
    /// Character-level ground truth for character metrics.
    #[arg(long)]
    chars: Option<PathBuf>,
    /// Write the report as CSV.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    pages: PagesArg,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Formula-region CSV used as tuning ground truth.
    #[arg(long = "truth")]
    truth: PathBuf,
    /// Vote method to tune (defaults to the configured one).
    #[arg(long)]
    method: Option<String>,
    /// Matching threshold of the tuned f-score.
    #[arg(long, default_value_t = 0.75)]
    iou: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pages: PagesArg,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, short)]
    out: PathBuf,
    /// Draw detections onto copies of the pages.
    #[arg(long)]
    render_overlays: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

type CmdResult<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

/// Attributes a library error to `stage`.
fn stage(stage: &'static str) -> impl Fn(Error) -> Failure {
    move |e| Failure {
        code: match &e {
            Error::Config(_) => 1,
            e if e.is_data_error() => 2,
            _ => 3,
        },
        message: format!("{stage}: {e}"),
    }
}

fn open(path: &Path, st: &'static str) -> CmdResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| stage(st)(Error::io(path, e)))
}

fn create(path: &Path, st: &'static str) -> CmdResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| stage(st)(Error::io(parent, e)))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| stage(st)(Error::io(path, e)))
}

fn load_config(g: &GlobalOpts) -> CmdResult<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::from_file(p).map_err(stage("config"))?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&g.overrides).map_err(stage("config"))?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(stage("config"))?;
    Ok(cfg)
}

fn read_gtdb(paths: &[PathBuf], inclusive: bool) -> CmdResult<Vec<GroundTruthPage>> {
    let convention = if inclusive {
        CoordConvention::Inclusive
    } else {
        CoordConvention::HalfOpen
    };
    let mut pages = Vec::new();
    for p in paths {
        let parsed = parse_gtdb(open(p, "ingest")?, convention)
            .map_err(|e| stage("ingest")(e).with_path(p))?;
        pages.extend(parsed);
    }
    pages.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(pages)
}

impl Failure {
    fn with_path(mut self, p: &Path) -> Self {
        self.message = format!("{}: {}", p.display(), self.message);
        self
    }
}

fn parse_transform(scale: Option<&str>, translate: Option<&str>) -> CmdResult<Option<Transform>> {
    if scale.is_none() && translate.is_none() {
        return Ok(None);
    }
    let mut t = Transform::identity();
    if let Some(s) = scale {
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let (n, d): (i64, i64) = (
            n.trim()
                .parse()
                .map_err(|_| usage(format!("bad --scale {s:?}")))?,
            d.trim()
                .parse()
                .map_err(|_| usage(format!("bad --scale {s:?}")))?,
        );
        t = Transform::scale(n, d).map_err(|e| usage(format!("bad --scale {s:?}: {e}")))?;
    }
    if let Some(s) = translate {
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| usage(format!("bad --translate {s:?}, expected DX,DY")))?;
        let (x, y): (i64, i64) = (
            x.trim()
                .parse()
                .map_err(|_| usage(format!("bad --translate {s:?}")))?,
            y.trim()
                .parse()
                .map_err(|_| usage(format!("bad --translate {s:?}")))?,
        );
        t = Transform::translation(x, y).compose(&t);
    }
    Ok(Some(t))
}

fn print_stats(pages: &[GroundTruthPage]) {
    let s = collection_stats(pages);
    println!("documents             {}", s.docs);
    println!("pages                 {}", s.pages);
    println!("formulas              {}", s.total);
    println!("  single-symbol       {}", s.single_symbol_formulas);
    println!("  multi-symbol        {}", s.multi_symbol_formulas);
}

fn cmd_ingest(a: &IngestArgs) -> CmdResult {
    let mut pages = read_gtdb(&a.gt, a.inclusive)?;
    if let Some(t) = parse_transform(a.scale.as_deref(), a.translate.as_deref())? {
        pages = pages
            .iter()
            .map(|p| adjust_ground_truth(p, &t))
            .collect::<Result<_, _>>()
            .map_err(stage("ingest"))?;
    }
    write_formula_csv(create(&a.out, "ingest")?, &formula_map(&pages)).map_err(stage("ingest"))?;
    print_stats(&pages);
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> CmdResult {
    print_stats(&read_gtdb(&a.gt, a.inclusive)?);
    Ok(())
}

fn page_sources(dir: &Path) -> CmdResult<Vec<PageSource>> {
    let pages = discover_pages(dir).map_err(stage("load pages"))?;
    if pages.is_empty() {
        return Err(stage("load pages")(Error::Data(format!(
            "no page rasters named {{doc_id}}_{{page}}.png in {}",
            dir.display()
        ))));
    }
    Ok(pages)
}

fn load_page(p: &PageSource) -> CmdResult<PageImage> {
    match p {
        PageSource::Memory(_, img) => Ok(img.clone()),
        PageSource::File(_, path) => PageImage::load(path).map_err(stage("load pages")),
    }
}

fn page_size(p: &PageSource) -> CmdResult<(u32, u32)> {
    match p {
        PageSource::Memory(_, img) => Ok(img.size()),
        PageSource::File(_, path) => image::image_dimensions(path).map_err(|source| {
            stage("load pages")(Error::Image {
                path: path.clone(),
                source,
            })
        }),
    }
}

/// Manifest of the windows the configuration generates for `pages`.
fn window_manifest(cfg: &PipelineConfig, pages: &[PageSource]) -> CmdResult<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for p in pages {
        let windows = generate_windows(page_size(p)?, cfg.window_size, cfg.stride, cfg.input_size)
            .map_err(stage("tile"))?;
        entries.extend(windows.into_iter().map(|window| ManifestEntry {
            page: p.key().clone(),
            window,
        }));
    }
    Ok(entries)
}

fn cmd_tile(cfg: &PipelineConfig, a: &TileArgs) -> CmdResult {
    let sources = page_sources(&a.pages.pages)?;
    let images = sources
        .iter()
        .map(load_page)
        .collect::<CmdResult<Vec<_>>>()?;
    let pages: Vec<(PageKey, &PageImage)> = sources
        .iter()
        .map(|p| p.key().clone())
        .zip(&images)
        .collect();
    let entries = bridge_export(&a.out, &pages, cfg.window_size, cfg.stride, cfg.input_size)
        .map_err(stage("tile"))?;
    println!(
        "wrote {} window crops for {} pages to {}",
        entries.len(),
        pages.len(),
        a.out.display()
    );
    Ok(())
}

fn read_truth(path: &Path) -> CmdResult<BTreeMap<PageKey, Vec<FormulaBox>>> {
    read_formula_csv(open(path, "read ground truth")?)
        .map_err(|e| stage("read ground truth")(e).with_path(path))
}

fn rect_map(gt: &BTreeMap<PageKey, Vec<FormulaBox>>) -> BTreeMap<PageKey, Vec<Rect>> {
    gt.iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|f| f.rect).collect()))
        .collect()
}

fn cmd_export_targets(cfg: &PipelineConfig, a: &ExportTargetsArgs) -> CmdResult {
    let sources = page_sources(&a.pages.pages)?;
    let gt = rect_map(&read_truth(&a.gt)?);
    let pages = sources
        .iter()
        .map(|p| {
            Ok(TrainingPage {
                key: p.key().clone(),
                size: page_size(p)?,
                formulas: gt.get(p.key()).cloned().unwrap_or_default(),
            })
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let boxes = generate_default_boxes(&cfg.anchors).map_err(stage("export targets"))?;
    let n = export_training_targets(
        create(&a.out, "export targets")?,
        &pages,
        cfg.window_size,
        cfg.stride,
        &boxes.boxes,
    )
    .map_err(stage("export targets"))?;
    println!(
        "wrote {n} targets over {} default boxes ({} degenerate boxes dropped)",
        boxes.boxes.len(),
        boxes.dropped
    );
    Ok(())
}

/// Detector inputs kept alive for the duration of a command.
struct DetectorInputs {
    truth: BTreeMap<PageKey, Vec<Rect>>,
    imported: ImportedDetections,
}

impl DetectorInputs {
    fn load(
        cfg: &PipelineConfig,
        a: &DetectorArgs,
        pages: &[PageSource],
        manifest: &mut RunManifest,
    ) -> CmdResult<Self> {
        let mut inputs = DetectorInputs {
            truth: BTreeMap::new(),
            imported: ImportedDetections::default(),
        };
        match cfg.detector {
            DetectorKind::Oracle => {
                let gt =
                    a.gt.as_ref()
                        .ok_or_else(|| usage("the oracle detector needs --gt FORMULAS.csv"))?;
                inputs.truth = rect_map(&read_truth(gt)?);
                manifest.add_input(gt).map_err(stage("detect"))?;
            }
            DetectorKind::External => {
                let path = a
                    .detections
                    .as_ref()
                    .ok_or_else(|| usage("the external detector needs --detections FILE.csv"))?;
                let windows = window_manifest(cfg, pages)?;
                inputs.imported = bridge_import(open(path, "import detections")?, &windows)
                    .map_err(|e| stage("import detections")(e).with_path(path))?;
                manifest.add_input(path).map_err(stage("detect"))?;
            }
            DetectorKind::Heuristic => {}
        }
        Ok(inputs)
    }

    fn source(&self, kind: DetectorKind) -> DetectorSource<'_> {
        match kind {
            DetectorKind::Oracle => DetectorSource::Oracle(&self.truth),
            DetectorKind::Heuristic => DetectorSource::Heuristic,
            DetectorKind::External => DetectorSource::External(&self.imported),
        }
    }
}

fn cmd_detect(cfg: &PipelineConfig, a: &DetectArgs) -> CmdResult {
    let sources = page_sources(&a.pages.pages)?;
    let mut manifest = RunManifest::new("detect", cfg);
    let inputs = DetectorInputs::load(cfg, &a.detector, &sources, &mut manifest)?;
    let source = inputs.source(cfg.detector);
    let pool = thread_pool(cfg.workers).map_err(stage("detect"))?;
    let rows = pool.install(|| {
        sources
            .iter()
            .map(|p| {
                let img = load_page(p)?;
                let det = source.detector_for(cfg, p.key());
                let (_, dets) = detect_page(cfg, &img, det.as_ref()).map_err(stage("detect"))?;
                Ok((p.key().clone(), dets))
            })
            .collect::<CmdResult<Vec<_>>>()
    })?;
    write_detection_csv(create(&a.out, "detect")?, &rows).map_err(stage("detect"))?;
    let n: usize = rows
        .iter()
        .flat_map(|r| &r.1)
        .map(|w| w.detections.len())
        .sum();
    println!("wrote {n} window detections for {} pages", rows.len());
    Ok(())
}

fn cmd_pool(cfg: &PipelineConfig, a: &PoolArgs) -> CmdResult {
    let sources = page_sources(&a.pages.pages)?;
    let windows = window_manifest(cfg, &sources)?;
    let imported = bridge_import(open(&a.detections, "pool")?, &windows)
        .map_err(|e| stage("pool")(e).with_path(&a.detections))?;
    let pool = thread_pool(cfg.workers).map_err(stage("pool"))?;
    let mut out = BTreeMap::new();
    pool.install(|| -> CmdResult {
        for p in &sources {
            let img = load_page(p)?;
            let ink = InkComponents::from_page(&img);
            let wins = generate_windows(img.size(), cfg.window_size, cfg.stride, cfg.input_size)
                .map_err(stage("pool"))?;
            let wd = imported.window_detections(p.key());
            let (votes, dets) =
                pool_page(cfg, img.size(), &wins, &wd, Some(&ink)).map_err(stage("pool"))?;
            if let Some(dir) = &a.heatmaps {
                std::fs::create_dir_all(dir).map_err(|e| stage("pool")(Error::io(dir, e)))?;
                let path = dir.join(format!("{}_{}.png", p.key(), cfg.vote_method));
                votes
                    .heatmap(cfg.vote_method)
                    .save(&path)
                    .map_err(|source| stage("pool")(Error::Image { path, source }))?;
            }
            out.insert(p.key().clone(), dets);
        }
        Ok(())
    })?;
    write_page_detections(create(&a.out, "pool")?, &out).map_err(stage("pool"))?;
    println!(
        "wrote {} regions for {} pages",
        out.values().map(Vec::len).sum::<usize>(),
        out.len()
    );
    Ok(())
}

fn report(
    gt: &BTreeMap<PageKey, Vec<FormulaBox>>,
    dets: &BTreeMap<PageKey, Vec<Rect>>,
    chars: Option<&[GroundTruthPage]>,
    out: Option<&Path>,
) -> CmdResult {
    let suite = evaluate_suite(gt, dets);
    let char_result = chars.map(|c| character_metrics(c, dets));
    let rows = report_rows(&suite, char_result.as_ref());
    print!("{}", format_report(&rows));
    if let Some(path) = out {
        write_report_csv(create(path, "evaluate")?, &rows).map_err(stage("evaluate"))?;
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> CmdResult {
    let gt = read_truth(&a.gt)?;
    let dets = fdp_core::pooling::read_page_detections(open(&a.detections, "evaluate")?)
        .map_err(|e| stage("evaluate")(e).with_path(&a.detections))?;
    let chars = match &a.chars {
        Some(p) => Some(read_gtdb(std::slice::from_ref(p), false)?),
        None => None,
    };
    report(&gt, &dets, chars.as_deref(), a.out.as_deref())
}

fn cmd_tune(cfg: &PipelineConfig, a: &TuneArgs) -> CmdResult {
    let method: VoteMethod = match &a.method {
        Some(m) => m.parse().map_err(stage("tune"))?,
        None => cfg.vote_method,
    };
    let sources = page_sources(&a.pages.pages)?;
    let mut manifest = RunManifest::new("tune", cfg);
    let inputs = DetectorInputs::load(cfg, &a.detector, &sources, &mut manifest)?;
    let truth = rect_map(&read_truth(&a.truth)?);
    let outputs =
        run_pages(cfg, &sources, &inputs.source(cfg.detector)).map_err(stage("detect"))?;
    let inks = sources
        .iter()
        .map(|p| load_page(p).map(|img| InkComponents::from_page(&img)))
        .collect::<CmdResult<Vec<_>>>()?;
    let pages: Vec<TunePage<'_>> = outputs
        .iter()
        .zip(&sources)
        .zip(&inks)
        .map(|((o, p), ink)| {
            Ok(TunePage {
                page_size: page_size(p)?,
                gt: truth.get(&o.key).cloned().unwrap_or_default(),
                votes: o.votes.clone(),
                ink: cfg.crop_after_pooling.then_some(ink),
            })
        })
        .collect::<CmdResult<_>>()?;
    let grid = default_grid(method).values();
    let pool = thread_pool(cfg.workers).map_err(stage("tune"))?;
    let res = pool
        .install(|| tune_threshold(&pages, method, &grid, a.iou, cfg.inkless))
        .map_err(stage("tune"))?;
    println!("threshold  fscore");
    for (t, c) in &res.evaluated {
        println!("{t:>9.2}  {:.4}", c.metrics().fscore);
    }
    println!(
        "best {method} threshold {} (f-score {:.4} at IOU >= {})",
        res.best_threshold, res.best_fscore, a.iou
    );
    Ok(())
}

fn cmd_run(cfg: &PipelineConfig, a: &RunArgs) -> CmdResult {
    let t0 = Instant::now();
    let sources = page_sources(&a.pages.pages)?;
    let mut manifest = RunManifest::new("run", cfg);
    for p in &sources {
        if let PageSource::File(_, path) = p {
            manifest.add_input(path).map_err(stage("load pages"))?;
        }
    }
    let inputs = DetectorInputs::load(cfg, &a.detector, &sources, &mut manifest)?;
    let outputs =
        run_pages(cfg, &sources, &inputs.source(cfg.detector)).map_err(stage("detect and pool"))?;
    info!("pipeline finished in {:?}", t0.elapsed());
    let dets = detections_map(&outputs);
    std::fs::create_dir_all(&a.out).map_err(|e| stage("write outputs")(Error::io(&a.out, e)))?;
    let det_path = a.out.join("detections.csv");
    write_page_detections(create(&det_path, "write outputs")?, &dets)
        .map_err(stage("write outputs"))?;
    manifest
        .add_output(&det_path)
        .map_err(stage("write outputs"))?;
    if a.render_overlays {
        let dir = a.out.join("overlays");
        std::fs::create_dir_all(&dir).map_err(|e| stage("render overlays")(Error::io(&dir, e)))?;
        for p in &sources {
            let img = load_page(p)?;
            let path = dir.join(format!("{}.png", p.key()));
            render_overlay(&img, dets.get(p.key()).map(Vec::as_slice).unwrap_or(&[]))
                .save(&path)
                .map_err(|source| stage("render overlays")(Error::Image { path, source }))?;
        }
    }
    if cfg.detector == DetectorKind::Oracle {
        if let Some(gt) = &a.detector.gt {
            let report_path = a.out.join("report.csv");
            report(&read_truth(gt)?, &dets, None, Some(&report_path))?;
            manifest
                .add_output(&report_path)
                .map_err(stage("write outputs"))?;
        }
    }
    manifest
        .write_to(&a.out.join("manifest.txt"))
        .map_err(stage("write outputs"))?;
    println!(
        "wrote {} regions for {} pages to {}",
        dets.values().map(Vec::len).sum::<usize>(),
        dets.len(),
        det_path.display()
    );
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, a: &SynthArgs) -> CmdResult {
    let pages =
        generate_corpus(&SyntheticParams::default(), a.count, cfg.seed).map_err(stage("synth"))?;
    write_corpus(&a.out, &pages).map_err(stage("synth"))?;
    println!(
        "wrote {} pages with {} formulas to {}",
        pages.len(),
        pages.iter().map(|p| p.formulas.len()).sum::<usize>(),
        a.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Tile(a) => cmd_tile(&cfg, a),
        Command::ExportTargets(a) => cmd_export_targets(&cfg, a),
        Command::Detect(a) => cmd_detect(&cfg, a),
        Command::Pool(a) => cmd_pool(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tune(a) => cmd_tune(&cfg, a),
        Command::Run(a) => cmd_run(&cfg, a),
        Command::Synth(a) => cmd_synth(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
