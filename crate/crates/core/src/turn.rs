//! Speaker turn detection: fuse external scorer probabilities with timbre
//! similarity for every adjacent line pair, then cut the program into groups
//! at predicted turns.

use crate::error::{Error, Result};
use crate::features::{FeatureMap, TurnScoreMap};
use crate::model::{cosine_similarity, Embedding, Program};
use crate::scalar::Real;

/// Probabilities for one adjacent pair as `(p0, p1)`, `p1` = same speaker.
pub type PairScore = (f64, f64);

pub const NEUTRAL: PairScore = (0.5, 0.5);

/// Default number of consecutive lines handed to a scorer at once.
pub const DEFAULT_WINDOW: usize = 10;

/// What a scorer sees of one line: its id, text, and the audio span it refers to.
#[derive(Debug, Clone, Copy)]
pub struct WindowLine<'a> {
    pub line_id: usize,
    pub text: &'a str,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// External same-speaker scorer. Given an ordered window of consecutive lines
/// it returns one `(p0, p1)` per adjacent pair inside the window.
pub trait TurnScorer {
    fn score(&self, window: &[WindowLine<'_>]) -> Result<Vec<PairScore>>;
}

/// Always answers `p0 = p1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeutralScorer;

impl TurnScorer for NeutralScorer {
    fn score(&self, window: &[WindowLine<'_>]) -> Result<Vec<PairScore>> {
        Ok(vec![NEUTRAL; window.len().saturating_sub(1)])
    }
}

/// Replays pre-computed scores; pairs absent from the file are neutral.
#[derive(Debug, Clone, Default)]
pub struct ReplayScorer {
    pub scores: TurnScoreMap,
}

impl ReplayScorer {
    pub fn new(scores: TurnScoreMap) -> Self {
        Self { scores }
    }
}

impl TurnScorer for ReplayScorer {
    fn score(&self, window: &[WindowLine<'_>]) -> Result<Vec<PairScore>> {
        Ok(window
            .windows(2)
            .map(|w| {
                self.scores
                    .get(&w[0].line_id)
                    .filter(|r| r.right_line_id == w[1].line_id)
                    .map_or(NEUTRAL, |r| (r.p0, r.p1))
            })
            .collect())
    }
}

/// `P_alm = p1 / (p0 + p1)`.
pub fn alm_probability<T: Real>(p0: T, p1: T) -> Result<T> {
    if !(p0 >= T::zero() && p1 >= T::zero()) {
        return Err(Error::param("p0/p1", "must be non-negative"));
    }
    let total = p0 + p1;
    if total <= T::zero() {
        return Err(Error::param("p0/p1", "p0 + p1 must be positive"));
    }
    Ok(p1 / total)
}

/// Cosine similarity mapped affinely to `[0, 1]`.
pub fn timbre_turn_similarity<T: Real>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T> {
    let c = cosine_similarity(a, b)?;
    let half = T::lit(0.5);
    Ok(((c + T::one()) * half).max(T::zero()).min(T::one()))
}

/// `P_std = w * P_alm + (1 - w) * S_tim`.
pub fn fuse<T: Real>(p_alm: T, s_tim: T, w: T) -> Result<T> {
    if !(w >= T::zero() && w <= T::one()) {
        return Err(Error::param("turn.w", format!("{w} outside [0, 1]")));
    }
    Ok(w * p_alm + (T::one() - w) * s_tim)
}

fn valid_score(s: &PairScore) -> bool {
    s.0.is_finite() && s.1.is_finite() && s.0 >= 0.0 && s.1 >= 0.0 && s.0 + s.1 > 0.0
}

/// Scores one window. A scorer error or malformed answer degrades to neutral
/// scores for the whole window.
pub fn score_window<S: TurnScorer + ?Sized>(
    scorer: &S,
    window: &[WindowLine<'_>],
) -> Vec<PairScore> {
    let expected = window.len().saturating_sub(1);
    match scorer.score(window) {
        Ok(scores) if scores.len() == expected && scores.iter().all(valid_score) => scores,
        Ok(scores) => {
            log::warn!(
                "scorer returned {} scores (expected {expected}) or invalid probabilities for window at line {}; using neutral scores",
                scores.len(),
                window.first().map_or(0, |l| l.line_id)
            );
            vec![NEUTRAL; expected]
        }
        Err(e) => {
            log::warn!(
                "scorer failed on window at line {}: {e}; using neutral scores",
                window.first().map_or(0, |l| l.line_id)
            );
            vec![NEUTRAL; expected]
        }
    }
}

/// Window start/end positions: windows of `size` lines overlapping by one
/// line, so every adjacent pair lands in exactly one window.
pub fn window_spans(n_lines: usize, size: usize) -> Result<Vec<(usize, usize)>> {
    if !(2..=DEFAULT_WINDOW).contains(&size) {
        return Err(Error::param(
            "turn.window",
            format!("{size} not in 2..={DEFAULT_WINDOW}"),
        ));
    }
    let mut spans = Vec::new();
    let mut start = 0;
    while start + 1 < n_lines {
        let end = (start + size).min(n_lines);
        spans.push((start, end));
        start = end - 1;
    }
    Ok(spans)
}

/// Scores every adjacent pair of the program, in pair order.
pub fn score_program<S: TurnScorer + ?Sized>(
    scorer: &S,
    program: &Program,
    window: usize,
) -> Result<Vec<PairScore>> {
    let lines: Vec<WindowLine<'_>> = program
        .lines()
        .iter()
        .map(|l| WindowLine {
            line_id: l.line_id,
            text: &l.text,
            start_ms: l.start_ms,
            end_ms: l.end_ms,
        })
        .collect();
    let mut out = Vec::with_capacity(lines.len().saturating_sub(1));
    for (start, end) in window_spans(lines.len(), window)? {
        out.extend(score_window(scorer, &lines[start..end]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnDecision<T> {
    pub left: usize,
    pub right: usize,
    pub p_alm: T,
    pub s_tim: T,
    pub p_std: T,
    /// `p_std >= 0.5`.
    pub same_speaker: bool,
}

pub fn decide_pair<T: Real>(
    left: usize,
    score: PairScore,
    a: &Embedding<T>,
    b: &Embedding<T>,
    w: T,
) -> Result<TurnDecision<T>> {
    let p_alm = alm_probability(T::lit(score.0), T::lit(score.1))?;
    let s_tim = timbre_turn_similarity(a, b)?;
    let p_std = fuse(p_alm, s_tim, w)?;
    Ok(TurnDecision {
        left,
        right: left + 1,
        p_alm,
        s_tim,
        p_std,
        same_speaker: p_std >= T::lit(0.5),
    })
}

/// One decision per adjacent pair of the program.
pub fn detect_turns<T: Real, S: TurnScorer + ?Sized>(
    program: &Program,
    features: &FeatureMap<T>,
    scorer: &S,
    window: usize,
    w: T,
) -> Result<Vec<TurnDecision<T>>> {
    fuse(T::zero(), T::zero(), w)?;
    let scores = score_program(scorer, program, window)?;
    let timbre = |id: usize| {
        features
            .get(&id)
            .map(|f| &f.timbre)
            .ok_or(Error::MissingLine {
                line_id: id,
                what: "feature record",
            })
    };
    scores
        .into_iter()
        .enumerate()
        .map(|(left, score)| decide_pair(left, score, timbre(left)?, timbre(left + 1)?, w))
        .collect()
}

/// Maximal run of lines with no predicted turn inside. Bounds are inclusive
/// line ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group<T> {
    pub first: usize,
    pub last: usize,
    /// `P_std` of the pair closing the group on the left / right, if any.
    pub left_boundary: Option<T>,
    pub right_boundary: Option<T>,
}

impl<T> Group<T> {
    pub fn lines(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Cuts `n_lines` lines at every pair with `same_speaker == false`.
pub fn segment_groups<T: Real>(
    n_lines: usize,
    decisions: &[TurnDecision<T>],
) -> Result<Vec<Group<T>>> {
    if n_lines == 0 {
        return Ok(Vec::new());
    }
    for left in 0..n_lines - 1 {
        match decisions.get(left) {
            Some(d) if d.left == left && d.right == left + 1 => {}
            _ => return Err(Error::MissingDecision(left, left + 1)),
        }
    }
    let mut groups = Vec::new();
    let mut first = 0;
    let mut left_boundary = None;
    for d in &decisions[..n_lines - 1] {
        if !d.same_speaker {
            groups.push(Group {
                first,
                last: d.left,
                left_boundary,
                right_boundary: Some(d.p_std),
            });
            first = d.right;
            left_boundary = Some(d.p_std);
        }
    }
    groups.push(Group {
        first,
        last: n_lines - 1,
        left_boundary,
        right_boundary: None,
    });
    Ok(groups)
}
