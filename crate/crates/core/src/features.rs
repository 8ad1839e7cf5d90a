//! Per-line multimodal features and external turn scores, read from JSONL.
//!
//! Feature record: `{"line_id":0,"active":true,"face":[...],"timbre":[...]}`;
//! `face` is present exactly when `active` is true.
//! Turn-score record: `{"left_line_id":0,"right_line_id":1,"p0":0.2,"p1":0.6}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{unit_normalize, Embedding, Program};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LineFeatures<T> {
    pub line_id: usize,
    /// An active speaker was detected in the line's video span.
    pub active: bool,
    pub face: Option<Embedding<T>>,
    pub timbre: Embedding<T>,
}

pub type FeatureMap<T> = BTreeMap<usize, LineFeatures<T>>;

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRecord {
    line_id: usize,
    active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    face: Option<Vec<f64>>,
    timbre: Vec<f64>,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses feature JSONL and validates it against `program`: one record per
/// program line, consistent dims per embedding kind, and the active/face
/// invariant. Embeddings are unit-normalized on load.
pub fn parse_features<T: Real>(text: &str, program: &Program) -> Result<FeatureMap<T>> {
    let mut out = BTreeMap::new();
    let mut face_dim: Option<usize> = None;
    let mut timbre_dim: Option<usize> = None;
    for (line_no, raw) in content_lines(text) {
        let err = |reason: String| Error::Features {
            line: line_no,
            reason,
        };
        let rec: FeatureRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if rec.line_id >= program.len() {
            return Err(err(format!(
                "line_id {} outside program of {} lines",
                rec.line_id,
                program.len()
            )));
        }
        let embed = |values: &[f64], kind: &str, dim: &mut Option<usize>| -> Result<Embedding<T>> {
            let e = Embedding::from_f64(values).map_err(|e| err(format!("{kind}: {e}")))?;
            match *dim {
                Some(d) if d != e.dim() => {
                    return Err(err(format!(
                        "{kind} dim {} differs from earlier dim {d}",
                        e.dim()
                    )))
                }
                _ => *dim = Some(e.dim()),
            }
            unit_normalize(&e).map_err(|e| err(format!("{kind}: {e}")))
        };
        let face = match (rec.active, &rec.face) {
            (true, Some(f)) => Some(embed(f, "face", &mut face_dim)?),
            (true, None) => return Err(err("active line without a face embedding".into())),
            (false, Some(_)) => return Err(err("inactive line carries a face embedding".into())),
            (false, None) => None,
        };
        let timbre = embed(&rec.timbre, "timbre", &mut timbre_dim)?;
        let feat = LineFeatures {
            line_id: rec.line_id,
            active: rec.active,
            face,
            timbre,
        };
        if out.insert(rec.line_id, feat).is_some() {
            return Err(err(format!("duplicate record for line {}", rec.line_id)));
        }
    }
    if let Some(line_id) = (0..program.len()).find(|id| !out.contains_key(id)) {
        return Err(Error::MissingLine {
            line_id,
            what: "feature record",
        });
    }
    Ok(out)
}

pub fn load_features<T: Real>(path: impl AsRef<Path>, program: &Program) -> Result<FeatureMap<T>> {
    parse_features(&read_file(path.as_ref())?, program)
}

pub fn write_features<T: Real, W: Write>(features: &FeatureMap<T>, mut sink: W) -> Result<()> {
    let to_f64 = |e: &Embedding<T>| e.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    for f in features.values() {
        let rec = FeatureRecord {
            line_id: f.line_id,
            active: f.active,
            face: f.face.as_ref().map(to_f64),
            timbre: to_f64(&f.timbre),
        };
        serde_json::to_writer(&mut sink, &rec).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Label-token probabilities emitted by an external scorer for one adjacent
/// line pair; `p1` is the "same speaker" token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnScoreRecord {
    pub left_line_id: usize,
    pub right_line_id: usize,
    pub p0: f64,
    pub p1: f64,
}

/// Keyed by the left line id of the pair.
pub type TurnScoreMap = BTreeMap<usize, TurnScoreRecord>;

/// Parses turn-score JSONL. Coverage may be partial; missing pairs are
/// scored as neutral downstream.
pub fn parse_turn_scores(text: &str) -> Result<TurnScoreMap> {
    let mut out = BTreeMap::new();
    for (line_no, raw) in content_lines(text) {
        let err = |reason: String| Error::TurnScores {
            line: line_no,
            reason,
        };
        let rec: TurnScoreRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if rec.right_line_id != rec.left_line_id + 1 {
            return Err(err(format!(
                "pair ({}, {}) is not adjacent",
                rec.left_line_id, rec.right_line_id
            )));
        }
        if !(rec.p0.is_finite() && rec.p1.is_finite()) || rec.p0 < 0.0 || rec.p1 < 0.0 {
            return Err(err("probabilities must be finite and non-negative".into()));
        }
        if rec.p0 + rec.p1 <= 0.0 {
            return Err(err("p0 + p1 must be positive".into()));
        }
        if out.insert(rec.left_line_id, rec).is_some() {
            return Err(err(format!(
                "duplicate pair starting at line {}",
                rec.left_line_id
            )));
        }
    }
    Ok(out)
}

pub fn load_turn_scores(path: impl AsRef<Path>) -> Result<TurnScoreMap> {
    parse_turn_scores(&read_file(path.as_ref())?)
}

pub fn write_turn_scores<W: Write>(scores: &TurnScoreMap, mut sink: W) -> Result<()> {
    for rec in scores.values() {
        serde_json::to_writer(&mut sink, rec).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}
