//! Pipeline configuration: a flat `key = value` text format with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! modality = AVT
//! clustering.method = spectral
//! turn.w = 0.45
//! paths.subtitles = ep01.srt
//! ```

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{ScoringMode, ScoringOptions};
use crate::turn::DEFAULT_WINDOW;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    /// Timbre clustering only; audio clusters are the speakers.
    A,
    /// Visual anchors plus timbre-only supplementation.
    AV,
    /// Visual anchors plus scorer-assisted turn detection.
    AVT,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::A => "A",
            Modality::AV => "AV",
            Modality::AVT => "AVT",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Modality::A),
            "AV" | "av" => Ok(Modality::AV),
            "AVT" | "avt" => Ok(Modality::AVT),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusteringMethod {
    Ahc,
    Spectral,
}

impl ClusteringMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusteringMethod::Ahc => "ahc",
            ClusteringMethod::Spectral => "spectral",
        }
    }
}

impl FromStr for ClusteringMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ahc" => Ok(ClusteringMethod::Ahc),
            "spectral" => Ok(ClusteringMethod::Spectral),
            other => Err(Error::Config(format!(
                "unknown clustering method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Paths {
    pub subtitles: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub turn_scores: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub modality: Modality,
    pub clustering_method: ClusteringMethod,
    pub k_max_visual: usize,
    pub k_max_audio: usize,
    /// AHC stop threshold on average-linkage cosine similarity.
    pub ahc_threshold: f64,
    pub turn_w: f64,
    pub turn_window: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub metrics_mode: ScoringMode,
    /// Collar half-width in seconds.
    pub metrics_collar: f64,
    pub rng_seed: u64,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            modality: Modality::AVT,
            clustering_method: ClusteringMethod::Spectral,
            k_max_visual: 50,
            k_max_audio: 60,
            ahc_threshold: 0.6,
            turn_w: 0.45,
            turn_window: DEFAULT_WINDOW,
            eta: 0.45,
            epsilon: 0.6,
            metrics_mode: ScoringMode::Line,
            metrics_collar: 0.0,
            rng_seed: 0,
            paths: Paths::default(),
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    /// Sets one dotted key. Relative paths are kept as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key.trim() {
            "modality" => self.modality = value.parse()?,
            "clustering.method" => self.clustering_method = value.parse()?,
            "clustering.k_max_visual" => self.k_max_visual = parse_value(key, value)?,
            "clustering.k_max_audio" => self.k_max_audio = parse_value(key, value)?,
            "ahc.threshold" => self.ahc_threshold = parse_value(key, value)?,
            "turn.w" => self.turn_w = parse_value(key, value)?,
            "turn.window" => self.turn_window = parse_value(key, value)?,
            "supplement.eta" => self.eta = parse_value(key, value)?,
            "supplement.epsilon" => self.epsilon = parse_value(key, value)?,
            "metrics.mode" => {
                self.metrics_mode = ScoringMode::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown metrics.mode {value:?}")))?
            }
            "metrics.collar" => self.metrics_collar = parse_value(key, value)?,
            "rng_seed" => self.rng_seed = parse_value(key, value)?,
            "paths.subtitles" => self.paths.subtitles = path(),
            "paths.features" => self.paths.features = path(),
            "paths.turn_scores" => self.paths.turn_scores = path(),
            "paths.ground_truth" => self.paths.ground_truth = path(),
            "paths.output_dir" => self.paths.output_dir = path(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| {
                Error::Config(format!("override {:?} is not key=value", o.as_ref()))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults. A key may appear
    /// only once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {k:?}",
                    idx + 1
                )));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve_against(base);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.k_max_visual == 0 || self.k_max_audio == 0 {
            return Err(Error::param("clustering.k_max", "must be at least 1"));
        }
        if !(-1.0..=1.0).contains(&self.ahc_threshold) {
            return Err(Error::param("ahc.threshold", "must lie in [-1, 1]"));
        }
        if !unit(self.turn_w) {
            return Err(Error::param("turn.w", "must lie in [0, 1]"));
        }
        if !(2..=DEFAULT_WINDOW).contains(&self.turn_window) {
            return Err(Error::param(
                "turn.window",
                format!("must lie in 2..={DEFAULT_WINDOW}"),
            ));
        }
        if !unit(self.eta) {
            return Err(Error::param("supplement.eta", "must lie in [0, 1]"));
        }
        if !unit(self.epsilon) {
            return Err(Error::param("supplement.epsilon", "must lie in [0, 1]"));
        }
        if !(self.metrics_collar >= 0.0 && self.metrics_collar.is_finite()) {
            return Err(Error::param(
                "metrics.collar",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn scoring_options(&self) -> ScoringOptions {
        ScoringOptions {
            mode: self.metrics_mode,
            collar_ms: (self.metrics_collar * 1000.0).round() as u64,
        }
    }

    /// Serializes every key; [`PipelineConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| {
            v.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut out = String::new();
        let rows: [(&str, String); 17] = [
            ("modality", self.modality.to_string()),
            ("clustering.method", self.clustering_method.as_str().into()),
            ("clustering.k_max_visual", self.k_max_visual.to_string()),
            ("clustering.k_max_audio", self.k_max_audio.to_string()),
            ("ahc.threshold", self.ahc_threshold.to_string()),
            ("turn.w", self.turn_w.to_string()),
            ("turn.window", self.turn_window.to_string()),
            ("supplement.eta", self.eta.to_string()),
            ("supplement.epsilon", self.epsilon.to_string()),
            ("metrics.mode", self.metrics_mode.as_str().into()),
            ("metrics.collar", self.metrics_collar.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("paths.subtitles", p(&self.paths.subtitles)),
            ("paths.features", p(&self.paths.features)),
            ("paths.turn_scores", p(&self.paths.turn_scores)),
            ("paths.ground_truth", p(&self.paths.ground_truth)),
            ("paths.output_dir", p(&self.paths.output_dir)),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.subtitles,
            &mut self.features,
            &mut self.turn_scores,
            &mut self.ground_truth,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
