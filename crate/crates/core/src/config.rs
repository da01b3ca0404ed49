//! Pipeline configuration.
//!
//! Stored as a plain `key = value` file; `#` starts a comment. Values given
//! later (command-line overrides) replace earlier ones, so precedence is
//! overrides > file > defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::anchors::AnchorConfig;
use crate::detector::{ConfidenceModel, OracleParams, DEFAULT_NMS_IOU};
use crate::error::{Error, Result};
use crate::pooling::{VoteMethod, DEFAULT_DOWNSCALE, DEFAULT_VOTE_THRESHOLD};
use crate::postprocess::InklessPolicy;
use crate::windowing::{DEFAULT_INPUT_SIZE, DEFAULT_STRIDE, DEFAULT_WINDOW_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectorKind {
    #[default]
    Oracle,
    Heuristic,
    External,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::Oracle => "oracle",
            DetectorKind::Heuristic => "heuristic",
            DetectorKind::External => "external",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(DetectorKind::Oracle),
            "heuristic" => Ok(DetectorKind::Heuristic),
            "external" => Ok(DetectorKind::External),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window_size: u32,
    pub stride: u32,
    pub input_size: u32,
    pub vote_method: VoteMethod,
    pub vote_threshold: f64,
    pub vote_downscale: u32,
    pub nms_iou: f64,
    pub anchors: AnchorConfig,
    pub detector: DetectorKind,
    pub oracle: OracleParams,
    pub seed: u64,
    pub inkless: InklessPolicy,
    /// Crop window detections to ink before stitching.
    pub crop_before_stitch: bool,
    /// Crop pooled regions to ink.
    pub crop_after_pooling: bool,
    /// Worker threads; 0 uses all cores. Never affects outputs.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_size: DEFAULT_WINDOW_SIZE,
            stride: DEFAULT_STRIDE,
            input_size: DEFAULT_INPUT_SIZE,
            vote_method: VoteMethod::Uniform,
            vote_threshold: DEFAULT_VOTE_THRESHOLD,
            vote_downscale: DEFAULT_DOWNSCALE,
            nms_iou: DEFAULT_NMS_IOU,
            anchors: AnchorConfig::default(),
            detector: DetectorKind::Oracle,
            oracle: OracleParams::default(),
            seed: 0,
            inkless: InklessPolicy::Drop,
            crop_before_stitch: true,
            crop_after_pooling: true,
            workers: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: invalid value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_confidence(key: &str, value: &str) -> Result<ConfidenceModel> {
    match value.split_once("..") {
        Some((lo, hi)) => Ok(ConfidenceModel::Uniform {
            low: parse(key, lo)?,
            high: parse(key, hi)?,
        }),
        None => Ok(ConfidenceModel::Constant(parse(key, value)?)),
    }
}

fn fmt_confidence(c: &ConfidenceModel) -> String {
    match c {
        ConfidenceModel::Constant(v) => v.to_string(),
        ConfidenceModel::Uniform { low, high } => format!("{low}..{high}"),
    }
}

impl PipelineConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "window_size" => self.window_size = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "input_size" => {
                self.input_size = parse(key, value)?;
                self.anchors.input_size = self.input_size;
            }
            "vote_method" => self.vote_method = value.parse()?,
            "vote_threshold" => self.vote_threshold = parse(key, value)?,
            "vote_downscale" => self.vote_downscale = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "anchors.grid_sizes" => self.anchors.grid_sizes = parse_list(key, value)?,
            "anchors.scale_min" => self.anchors.scale_min = parse(key, value)?,
            "anchors.scale_max" => self.anchors.scale_max = parse(key, value)?,
            "anchors.aspect_ratios" => self.anchors.aspect_ratios = parse_list(key, value)?,
            "detector" => self.detector = value.parse()?,
            "oracle.position_px" => self.oracle.position_px = parse(key, value)?,
            "oracle.size_px" => self.oracle.size_px = parse(key, value)?,
            "oracle.drop_prob" => self.oracle.drop_prob = parse(key, value)?,
            "oracle.confidence" => self.oracle.confidence = parse_confidence(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "inkless" => {
                self.inkless = match value.trim().to_ascii_lowercase().as_str() {
                    "drop" => InklessPolicy::Drop,
                    "keep" => InklessPolicy::Keep,
                    _ => {
                        return Err(Error::Config(format!(
                            "inkless: expected drop or keep, got {value:?}"
                        )))
                    }
                }
            }
            "crop_before_stitch" => self.crop_before_stitch = parse_bool(key, value)?,
            "crop_after_pooling" => self.crop_after_pooling = parse_bool(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {o:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies the lines of a config file.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    i + 1
                ))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window_size == 0 || self.stride == 0 || self.input_size == 0 {
            return bad("window_size, stride and input_size must be positive".into());
        }
        if self.stride > self.window_size {
            return bad(format!(
                "stride {} exceeds window_size {}",
                self.stride, self.window_size
            ));
        }
        if self.vote_downscale == 0 {
            return bad("vote_downscale must be positive".into());
        }
        if !(self.vote_threshold.is_finite() && self.vote_threshold >= 0.0) {
            return bad("vote_threshold must be a non-negative number".into());
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("nms_iou must lie in [0, 1]".into());
        }
        if self.anchors.input_size != self.input_size {
            return bad("anchor input size differs from input_size".into());
        }
        self.anchors.validate()?;
        self.oracle.validate()?;
        Ok(())
    }

    /// Every key except `workers`, one `key=value` per line in a fixed order.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("window_size", self.window_size.to_string());
        kv("stride", self.stride.to_string());
        kv("input_size", self.input_size.to_string());
        kv("vote_method", self.vote_method.to_string());
        kv("vote_threshold", self.vote_threshold.to_string());
        kv("vote_downscale", self.vote_downscale.to_string());
        kv("nms_iou", self.nms_iou.to_string());
        kv("anchors.grid_sizes", fmt_list(&self.anchors.grid_sizes));
        kv("anchors.scale_min", self.anchors.scale_min.to_string());
        kv("anchors.scale_max", self.anchors.scale_max.to_string());
        kv(
            "anchors.aspect_ratios",
            fmt_list(&self.anchors.aspect_ratios),
        );
        kv("detector", self.detector.as_str().to_string());
        kv("oracle.position_px", self.oracle.position_px.to_string());
        kv("oracle.size_px", self.oracle.size_px.to_string());
        kv("oracle.drop_prob", self.oracle.drop_prob.to_string());
        kv("oracle.confidence", fmt_confidence(&self.oracle.confidence));
        kv("seed", self.seed.to_string());
        kv(
            "inkless",
            match self.inkless {
                InklessPolicy::Drop => "drop",
                InklessPolicy::Keep => "keep",
            }
            .to_string(),
        );
        kv("crop_before_stitch", self.crop_before_stitch.to_string());
        kv("crop_after_pooling", self.crop_after_pooling.to_string());
        s
    }

    /// Hex SHA-256 of [`PipelineConfig::canonical_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&[
            "vote_method=max",
            "oracle.confidence=0.5..0.9",
            "anchors.aspect_ratios=1,2,3",
            "inkless=keep",
            "seed=17",
        ])
        .unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.canonical_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn workers_do_not_change_hash() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            workers: 8,
            ..PipelineConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig {
            seed: 1,
            ..PipelineConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn file_then_overrides() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# comment\nstride = 240\nvote_threshold = 10 # trailing\n")
            .unwrap();
        cfg.apply_overrides(&["stride=60"]).unwrap();
        assert_eq!(cfg.stride, 60);
        assert_eq!(cfg.vote_threshold, 10.0);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("stride", "abc").is_err());
        assert!(cfg.apply_text("stride 10").is_err());
        assert!(cfg.apply_overrides(&["stride"]).is_err());
        cfg.stride = 2000;
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            nms_iou: 1.5,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        PipelineConfig::default().validate().unwrap();
    }
}
