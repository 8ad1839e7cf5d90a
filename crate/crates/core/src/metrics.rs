//! Diarization scoring (DER, JER, speaker error) under an optimal one-to-one
//! speaker mapping, and turn-detection scoring (AUC, F1).
//!
//! Durations are accumulated in integer milliseconds, so error times are exact
//! and the final ratios are the only rounding step.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Line, Program};
use crate::scalar::{cmp_real, Real};
use crate::subtitle::RttmRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub label: String,
}

/// Labeled speech segments; segments may overlap.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledTimeline {
    pub segments: Vec<Segment>,
}

impl LabeledTimeline {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if let Some(s) = segments.iter().find(|s| s.end_ms <= s.start_ms) {
            return Err(Error::param(
                "segment",
                format!(
                    "[{}, {}) for {} has no duration",
                    s.start_ms, s.end_ms, s.label
                ),
            ));
        }
        Ok(Self { segments })
    }

    /// One segment per line, labeled by `labels[line_id]`.
    pub fn from_lines<S: AsRef<str>>(program: &Program, labels: &[S]) -> Result<Self> {
        if labels.len() != program.len() {
            return Err(Error::Program(format!(
                "{} labels for {} lines",
                labels.len(),
                program.len()
            )));
        }
        Self::new(
            program
                .lines()
                .iter()
                .zip(labels)
                .map(|(l, s): (&Line, _)| Segment {
                    start_ms: l.start_ms,
                    end_ms: l.end_ms,
                    label: s.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn from_rttm(records: &[RttmRecord]) -> Result<Self> {
        Self::new(
            records
                .iter()
                .map(|r| Segment {
                    start_ms: r.onset_ms,
                    end_ms: r.onset_ms + r.duration_ms,
                    label: r.speaker_label.clone(),
                })
                .collect(),
        )
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.segments.iter().map(|s| s.label.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringMode {
    /// Reference and hypothesis share segment boundaries (one segment per
    /// subtitle line); only speaker confusion can occur.
    Line,
    /// Free-form timelines; overlap regions count once per active reference
    /// speaker.
    Timeline,
}

impl ScoringMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "line" => Some(ScoringMode::Line),
            "timeline" => Some(ScoringMode::Timeline),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::Line => "line",
            ScoringMode::Timeline => "timeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringOptions {
    pub mode: ScoringMode,
    /// No-score zone of this half-width around every reference boundary
    /// (timeline mode only).
    pub collar_ms: u64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            mode: ScoringMode::Line,
            collar_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationScore<T> {
    pub der: T,
    pub jer: T,
    pub spke: T,
    pub scored_ms: u64,
    pub missed_ms: u64,
    pub false_alarm_ms: u64,
    pub confusion_ms: u64,
    /// Scoring mapping, reference label -> hypothesis label: maximum total
    /// overlap, then maximum summed Jaccard index.
    pub mapping: BTreeMap<String, String>,
}

/// Maximum-weight one-to-one assignment of reference rows to hypothesis
/// columns. Among optimal assignments the lexicographically smallest one
/// wins: row 0 takes the smallest column that still admits the optimum, then
/// row 1, and so on. Rows mapped only through zero overlap are reported as
/// unmapped.
pub fn optimal_mapping<T: Real>(overlap: &[Vec<T>]) -> Vec<Option<usize>> {
    let rows = overlap.len();
    let cols = overlap.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let all_cols: Vec<usize> = (0..cols).collect();
    let best = best_total(overlap, 0, &all_cols);
    let tol = T::epsilon() * T::from_count(4 * (rows + cols) as u64) * best.abs().max(T::one());

    let mut out = vec![None; rows];
    let mut free = all_cols;
    let mut fixed = T::zero();
    for r in 0..rows {
        let mut chosen = None;
        for pos in 0..free.len() {
            let h = free[pos];
            if overlap[r][h] <= T::zero() {
                continue;
            }
            let mut rest = free.clone();
            rest.remove(pos);
            if fixed + overlap[r][h] + best_total(overlap, r + 1, &rest) >= best - tol {
                chosen = Some(pos);
                break;
            }
        }
        if let Some(pos) = chosen {
            let h = free.remove(pos);
            fixed = fixed + overlap[r][h];
            out[r] = Some(h);
        }
    }
    out
}

/// Optimal total of rows `first..` restricted to columns `cols`.
fn best_total<T: Real>(overlap: &[Vec<T>], first: usize, cols: &[usize]) -> T {
    let sub: Vec<Vec<T>> = overlap[first..]
        .iter()
        .map(|row| cols.iter().map(|&c| row[c]).collect())
        .collect();
    hungarian(&sub)
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| sub[r][c]))
        .fold(T::zero(), |a, b| a + b)
}

/// Hungarian algorithm on the zero-padded square matrix, maximizing weight.
fn hungarian<T: Real>(overlap: &[Vec<T>]) -> Vec<Option<usize>> {
    let rows = overlap.len();
    let cols = overlap.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let (matched_row, _, _) = solve_min(n, |i, j| {
        if i < rows && j < cols {
            -overlap[i][j]
        } else {
            T::zero()
        }
    });
    read_matching(&matched_row, rows, cols, |i, j| overlap[i][j] > T::zero())
}

fn read_matching(
    matched_row: &[usize],
    rows: usize,
    cols: usize,
    keep: impl Fn(usize, usize) -> bool,
) -> Vec<Option<usize>> {
    let mut out = vec![None; rows];
    for (j, &i) in matched_row.iter().enumerate().skip(1) {
        if i >= 1 && i <= rows && j <= cols && keep(i - 1, j - 1) {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Minimum-cost perfect matching on an `n x n` cost function (e-maxx
/// Hungarian). Returns the row matched to each column and the final dual
/// potentials, all 1-based with index 0 as sentinel.
fn solve_min<T: Real>(n: usize, cost: impl Fn(usize, usize) -> T) -> (Vec<usize>, Vec<T>, Vec<T>) {
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] = u[matched_row[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (matched_row, u, v)
}

/// Mapping used for scoring: maximum total overlap first, then, among those,
/// maximum summed Jaccard index. The second stage keeps JER independent of
/// how hypothesis speakers are named when several mappings tie on overlap.
///
/// Overlaps are whole milliseconds, so the first stage and its dual
/// potentials are exact in `f64`; an assignment is overlap-optimal exactly
/// when it uses only edges that are tight under those potentials.
fn scoring_mapping(overlap: &[Vec<u64>], ref_ms: &[u64], hyp_ms: &[u64]) -> Vec<Option<usize>> {
    let rows = overlap.len();
    let cols = hyp_ms.len();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let primary = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -(overlap[i][j] as f64)
        } else {
            0.0
        }
    };
    let (_, u, v) = solve_min(n, primary);
    let forbidden = 2.0 * n as f64 + 1.0;
    let (matched_row, _, _) = solve_min(n, |i, j| {
        if u[i + 1] + v[j + 1] != primary(i, j) {
            forbidden
        } else if i < rows && j < cols && overlap[i][j] > 0 {
            let inter = overlap[i][j];
            -(inter as f64 / (ref_ms[i] + hyp_ms[j] - inter) as f64)
        } else {
            0.0
        }
    });
    read_matching(&matched_row, rows, cols, |i, j| overlap[i][j] > 0)
}

struct Tally {
    ref_labels: Vec<String>,
    hyp_labels: Vec<String>,
    overlap: Vec<Vec<u64>>,
    ref_ms: Vec<u64>,
    hyp_ms: Vec<u64>,
    scored_ms: u64,
    missed_ms: u64,
    false_alarm_ms: u64,
    /// Sum over time of min(#ref, #hyp) speakers.
    matchable_ms: u64,
}

impl Tally {
    fn new(reference: &LabeledTimeline, hypothesis: &LabeledTimeline) -> Self {
        let ref_labels: Vec<String> = reference.labels().into_iter().map(String::from).collect();
        let hyp_labels: Vec<String> = hypothesis.labels().into_iter().map(String::from).collect();
        Self {
            overlap: vec![vec![0; hyp_labels.len()]; ref_labels.len()],
            ref_ms: vec![0; ref_labels.len()],
            hyp_ms: vec![0; hyp_labels.len()],
            ref_labels,
            hyp_labels,
            scored_ms: 0,
            missed_ms: 0,
            false_alarm_ms: 0,
            matchable_ms: 0,
        }
    }

    fn ref_index(&self, label: &str) -> usize {
        self.ref_labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .expect("known label")
    }

    fn hyp_index(&self, label: &str) -> usize {
        self.hyp_labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .expect("known label")
    }

    fn add(&mut self, refs: &[usize], hyps: &[usize], d: u64) {
        if d == 0 {
            return;
        }
        let (nr, nh) = (refs.len() as u64, hyps.len() as u64);
        self.scored_ms += d * nr;
        self.missed_ms += d * nr.saturating_sub(nh);
        self.false_alarm_ms += d * nh.saturating_sub(nr);
        self.matchable_ms += d * nr.min(nh);
        for &r in refs {
            self.ref_ms[r] += d;
            for &h in hyps {
                self.overlap[r][h] += d;
            }
        }
        for &h in hyps {
            self.hyp_ms[h] += d;
        }
    }

    fn finish<T: Real>(self) -> Result<DiarizationScore<T>> {
        if self.scored_ms == 0 {
            return Err(Error::Empty("reference speech"));
        }
        let mapping = scoring_mapping(&self.overlap, &self.ref_ms, &self.hyp_ms);
        let mapped_ms: u64 = mapping
            .iter()
            .enumerate()
            .filter_map(|(r, h)| h.map(|h| self.overlap[r][h]))
            .sum();
        let confusion_ms = self.matchable_ms - mapped_ms;
        let scored = T::from_count(self.scored_ms);

        let mut jer_sum = T::zero();
        let mut jer_count = 0u64;
        for (r, h) in mapping.iter().enumerate() {
            if self.ref_ms[r] == 0 {
                continue;
            }
            jer_count += 1;
            jer_sum = jer_sum
                + match h {
                    Some(h) => {
                        let inter = self.overlap[r][*h];
                        let union = self.ref_ms[r] + self.hyp_ms[*h] - inter;
                        T::one() - T::from_count(inter) / T::from_count(union)
                    }
                    None => T::one(),
                };
        }
        let jer = if jer_count == 0 {
            T::zero()
        } else {
            jer_sum / T::from_count(jer_count)
        };

        Ok(DiarizationScore {
            der: T::from_count(self.missed_ms + self.false_alarm_ms + confusion_ms) / scored,
            jer,
            spke: T::from_count(confusion_ms) / scored,
            scored_ms: self.scored_ms,
            missed_ms: self.missed_ms,
            false_alarm_ms: self.false_alarm_ms,
            confusion_ms,
            mapping: mapping
                .iter()
                .enumerate()
                .filter_map(|(r, h)| {
                    h.map(|h| (self.ref_labels[r].clone(), self.hyp_labels[h].clone()))
                })
                .collect(),
        })
    }
}

fn tally_lines(reference: &LabeledTimeline, hypothesis: &LabeledTimeline) -> Result<Tally> {
    if reference.segments.len() != hypothesis.segments.len() {
        return Err(Error::BoundaryMismatch(format!(
            "{} reference vs {} hypothesis segments",
            reference.segments.len(),
            hypothesis.segments.len()
        )));
    }
    let mut tally = Tally::new(reference, hypothesis);
    for (i, (r, h)) in reference
        .segments
        .iter()
        .zip(&hypothesis.segments)
        .enumerate()
    {
        if (r.start_ms, r.end_ms) != (h.start_ms, h.end_ms) {
            return Err(Error::BoundaryMismatch(format!(
                "segment {i}: [{}, {}) vs [{}, {})",
                r.start_ms, r.end_ms, h.start_ms, h.end_ms
            )));
        }
        let (ri, hi) = (tally.ref_index(&r.label), tally.hyp_index(&h.label));
        tally.add(&[ri], &[hi], r.end_ms - r.start_ms);
    }
    Ok(tally)
}

fn tally_timeline(
    reference: &LabeledTimeline,
    hypothesis: &LabeledTimeline,
    collar_ms: u64,
) -> Tally {
    let mut tally = Tally::new(reference, hypothesis);

    // merged no-score zones around reference boundaries
    let mut zones: Vec<(u64, u64)> = Vec::new();
    if collar_ms > 0 {
        for s in &reference.segments {
            for b in [s.start_ms, s.end_ms] {
                zones.push((b.saturating_sub(collar_ms), b + collar_ms));
            }
        }
        zones.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(zones.len());
        for z in zones {
            match merged.last_mut() {
                Some(last) if z.0 <= last.1 => last.1 = last.1.max(z.1),
                _ => merged.push(z),
            }
        }
        zones = merged;
    }

    // (time, delta, is_ref, label index)
    let mut events: Vec<(u64, i64, bool, usize)> = Vec::new();
    for s in &reference.segments {
        let i = tally.ref_index(&s.label);
        events.push((s.start_ms, 1, true, i));
        events.push((s.end_ms, -1, true, i));
    }
    for s in &hypothesis.segments {
        let i = tally.hyp_index(&s.label);
        events.push((s.start_ms, 1, false, i));
        events.push((s.end_ms, -1, false, i));
    }
    let mut cuts: Vec<u64> = events.iter().map(|e| e.0).collect();
    cuts.extend(zones.iter().flat_map(|z| [z.0, z.1]));
    cuts.sort_unstable();
    cuts.dedup();
    events.sort_unstable();

    let mut ref_count = vec![0i64; tally.ref_labels.len()];
    let mut hyp_count = vec![0i64; tally.hyp_labels.len()];
    let mut next_event = 0;
    let mut zone_idx = 0;
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        while next_event < events.len() && events[next_event].0 <= t0 {
            let (_, delta, is_ref, i) = events[next_event];
            if is_ref {
                ref_count[i] += delta;
            } else {
                hyp_count[i] += delta;
            }
            next_event += 1;
        }
        while zone_idx < zones.len() && zones[zone_idx].1 <= t0 {
            zone_idx += 1;
        }
        if zone_idx < zones.len() && zones[zone_idx].0 <= t0 {
            continue;
        }
        let refs: Vec<usize> = (0..ref_count.len()).filter(|&i| ref_count[i] > 0).collect();
        let hyps: Vec<usize> = (0..hyp_count.len()).filter(|&i| hyp_count[i] > 0).collect();
        tally.add(&refs, &hyps, t1 - t0);
    }
    tally
}

/// Full diarization score of `hypothesis` against `reference`.
pub fn score<T: Real>(
    reference: &LabeledTimeline,
    hypothesis: &LabeledTimeline,
    options: &ScoringOptions,
) -> Result<DiarizationScore<T>> {
    if reference.segments.is_empty() {
        return Err(Error::Empty("reference timeline"));
    }
    let tally = match options.mode {
        ScoringMode::Line => tally_lines(reference, hypothesis)?,
        ScoringMode::Timeline => tally_timeline(reference, hypothesis, options.collar_ms),
    };
    tally.finish()
}

/// Diarization error rate: (missed + false alarm + confusion) / reference time.
pub fn der<T: Real>(
    reference: &LabeledTimeline,
    hypothesis: &LabeledTimeline,
    options: &ScoringOptions,
) -> Result<T> {
    Ok(score(reference, hypothesis, options)?.der)
}

/// Jaccard error rate averaged over reference speakers.
pub fn jer<T: Real>(
    reference: &LabeledTimeline,
    hypothesis: &LabeledTimeline,
    options: &ScoringOptions,
) -> Result<T> {
    Ok(score(reference, hypothesis, options)?.jer)
}

/// Speaker-confusion share of the reference time.
pub fn spke<T: Real>(
    reference: &LabeledTimeline,
    hypothesis: &LabeledTimeline,
    options: &ScoringOptions,
) -> Result<T> {
    Ok(score(reference, hypothesis, options)?.spke)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnMetrics<T> {
    /// Undefined when only one class is present.
    pub auc: Option<T>,
    /// F1 of the same-speaker class at `score >= 0.5`.
    pub f1: T,
}

/// AUC (Mann-Whitney with midranks) and F1 for `(score, is_same_speaker)`.
/// F1 is 1 when there are neither actual nor predicted same-speaker pairs.
pub fn turn_metrics<T: Real>(decisions: &[(T, bool)]) -> TurnMetrics<T> {
    let half = T::lit(0.5);
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for &(s, truth) in decisions {
        match (s >= half, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let f1 = if tp + fp + fneg == 0 {
        T::one()
    } else {
        T::from_count(2 * tp) / T::from_count(2 * tp + fp + fneg)
    };

    let n_pos = decisions.iter().filter(|d| d.1).count() as u64;
    let n_neg = decisions.len() as u64 - n_pos;
    let auc = (n_pos > 0 && n_neg > 0).then(|| {
        let mut order: Vec<usize> = (0..decisions.len()).collect();
        order.sort_by(|&a, &b| cmp_real(decisions[a].0, decisions[b].0));
        let mut rank_sum_pos = T::zero();
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && decisions[order[j + 1]].0 == decisions[order[i]].0 {
                j += 1;
            }
            // ranks i+1 ..= j+1 share their average
            let midrank = T::from_count((i + j + 2) as u64) * half;
            for &k in &order[i..=j] {
                if decisions[k].1 {
                    rank_sum_pos = rank_sum_pos + midrank;
                }
            }
            i = j + 1;
        }
        let p = T::from_count(n_pos);
        (rank_sum_pos - p * (p + T::one()) * half) / (p * T::from_count(n_neg))
    });
    TurnMetrics { auc, f1 }
}
