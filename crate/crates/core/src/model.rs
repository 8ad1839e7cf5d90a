//! Value types shared by every stage, plus embedding arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One subtitle cue: the atomic unit that gets mapped to a speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    /// Position of the line within its program (0-based, after sorting by time).
    pub line_id: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

impl Line {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// An ordered, validated sequence of lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub program_id: String,
    lines: Vec<Line>,
}

impl Program {
    /// Validates an already-ordered line list: `line_id` must equal the
    /// position, every line must have positive duration and lines must be
    /// sorted by start time.
    pub fn new(program_id: impl Into<String>, lines: Vec<Line>) -> Result<Self> {
        for (pos, line) in lines.iter().enumerate() {
            if line.line_id != pos {
                return Err(Error::Program(format!(
                    "line at position {pos} has line_id {}",
                    line.line_id
                )));
            }
            if line.end_ms <= line.start_ms {
                return Err(Error::Program(format!(
                    "line {pos} ends at {} ms, not after its start {} ms",
                    line.end_ms, line.start_ms
                )));
            }
        }
        if let Some(w) = lines.windows(2).find(|w| w[1].start_ms < w[0].start_ms) {
            return Err(Error::Program(format!(
                "line {} starts before line {}",
                w[1].line_id, w[0].line_id
            )));
        }
        Ok(Self {
            program_id: program_id.into(),
            lines,
        })
    }

    /// Builds a program from cues in file order: sorts stably by start time and
    /// renumbers line ids positionally.
    pub fn from_cues(
        program_id: impl Into<String>,
        cues: impl IntoIterator<Item = (u64, u64, String)>,
    ) -> Result<Self> {
        let mut cues: Vec<_> = cues.into_iter().collect();
        cues.sort_by_key(|c| c.0);
        let lines = cues
            .into_iter()
            .enumerate()
            .map(|(line_id, (start_ms, end_ms, text))| Line {
                line_id,
                start_ms,
                end_ms,
                text,
            })
            .collect();
        Self::new(program_id, lines)
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Real> Embedding<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn check_dims<T: Real>(a: &Embedding<T>, b: &Embedding<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity<T: Real>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let c = dot(&a.values, &b.values) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

pub fn unit_normalize<T: Real>(e: &Embedding<T>) -> Result<Embedding<T>> {
    let n = e.norm();
    if n == T::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok(Embedding {
        values: e.values.iter().map(|&v| v / n).collect(),
    })
}

/// Componentwise arithmetic mean. The result is not re-normalized.
pub fn mean_embedding<'a, T: Real>(
    set: impl IntoIterator<Item = &'a Embedding<T>>,
) -> Result<Embedding<T>> {
    let mut iter = set.into_iter();
    let first = iter.next().ok_or(Error::Empty("embedding set"))?;
    let mut acc = first.values.clone();
    let mut count = 1u64;
    for e in iter {
        check_dims(first, e)?;
        for (a, &v) in acc.iter_mut().zip(&e.values) {
            *a = *a + v;
        }
        count += 1;
    }
    if count > 1 {
        let n = T::from_count(count);
        for a in &mut acc {
            *a = *a / n;
        }
    }
    Ok(Embedding { values: acc })
}

/// Where a registered speaker came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// A visual (face) cluster.
    VisualAnchor,
    /// Registered from a novel group of off-screen lines.
    Supplemented,
    /// An audio cluster, used directly as a speaker in audio-only mode.
    AudioCluster,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::VisualAnchor => "visual_anchor",
            Origin::Supplemented => "supplemented",
            Origin::AudioCluster => "audio_cluster",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "visual_anchor" => Some(Origin::VisualAnchor),
            "supplemented" => Some(Origin::Supplemented),
            "audio_cluster" => Some(Origin::AudioCluster),
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpeakerId {
    pub id: u32,
    pub origin: Origin,
}

impl SpeakerId {
    pub fn new(id: u32, origin: Origin) -> Self {
        Self { id, origin }
    }

    /// Label used in RTTM output and metric timelines.
    pub fn label(&self) -> String {
        format!("spk{}", self.id)
    }
}

/// Pipeline stage that produced a line's final assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ActiveVisual,
    PrototypeNearest,
    GroupStandardized,
    Supplemented,
    AudioCluster,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::ActiveVisual => "active_visual",
            Stage::PrototypeNearest => "prototype_nearest",
            Stage::GroupStandardized => "group_standardized",
            Stage::Supplemented => "supplemented",
            Stage::AudioCluster => "audio_cluster",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active_visual" => Some(Stage::ActiveVisual),
            "prototype_nearest" => Some(Stage::PrototypeNearest),
            "group_standardized" => Some(Stage::GroupStandardized),
            "supplemented" => Some(Stage::Supplemented),
            "audio_cluster" => Some(Stage::AudioCluster),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment<T> {
    pub line_id: usize,
    pub speaker: SpeakerId,
    pub confidence: T,
    pub stage: Stage,
}
