//! Subtitle ingestion (SRT) and result serialization (annotation CSV, RTTM).

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, Origin, Program, SpeakerId, Stage};
use crate::scalar::Real;

pub const ANNOTATION_HEADER: [&str; 8] = [
    "line_id",
    "start_ms",
    "end_ms",
    "speaker_id",
    "origin",
    "stage",
    "confidence",
    "text",
];

/// Parses `HH:MM:SS,mmm` into milliseconds.
fn parse_timestamp(s: &str) -> Option<u64> {
    let (hms, millis) = s.split_once(',')?;
    let mut parts = hms.split(':');
    let (h, m, sec) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let digits = |x: &str, len: Option<usize>| {
        !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit()) && len.is_none_or(|l| x.len() == l)
    };
    if !(digits(h, None) && h.len() >= 2 && digits(m, Some(2)) && digits(sec, Some(2)))
        || !digits(millis, Some(3))
    {
        return None;
    }
    let (h, m, sec, ms): (u64, u64, u64, u64) = (
        h.parse().ok()?,
        m.parse().ok()?,
        sec.parse().ok()?,
        millis.parse().ok()?,
    );
    if m >= 60 || sec >= 60 {
        return None;
    }
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

fn parse_timing(line: &str) -> Option<(u64, u64)> {
    let (a, b) = line.trim().split_once("-->")?;
    Some((parse_timestamp(a.trim())?, parse_timestamp(b.trim())?))
}

/// Parses SRT text into a [`Program`].
///
/// Cue indices are checked but not used for identity: lines are sorted by
/// start time (stable, so file order breaks ties) and numbered positionally.
/// A duplicated cue index only logs a warning.
pub fn parse_srt(program_id: &str, input: &str) -> Result<Program> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for raw in input.lines() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let mut seen_indices = HashSet::new();
    let mut cues = Vec::with_capacity(blocks.len());
    for (b, block) in blocks.iter().enumerate() {
        let block_no = b + 1;
        let err = |reason: String| Error::Srt {
            block: block_no,
            reason,
        };
        let mut rest = &block[..];
        if !rest[0].contains("-->") {
            let idx: u64 = rest[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("expected a cue index, found {:?}", rest[0])))?;
            if !seen_indices.insert(idx) {
                log::warn!("duplicate cue index {idx} in block {block_no}; keeping both cues");
            }
            rest = &rest[1..];
        }
        let timing = rest
            .first()
            .ok_or_else(|| err("missing timing line".into()))?;
        let (start, end) = parse_timing(timing).ok_or_else(|| {
            err(format!(
                "malformed timing {timing:?}, expected HH:MM:SS,mmm --> HH:MM:SS,mmm"
            ))
        })?;
        if end <= start {
            return Err(err(format!(
                "cue ends at {end} ms, not after its start {start} ms"
            )));
        }
        cues.push((start, end, rest[1..].join("\n")));
    }
    Program::from_cues(program_id, cues)
}

pub fn read_srt(path: impl AsRef<Path>) -> Result<Program> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_srt(&id, &text)
}

/// Renders a program back to SRT, with positional cue indices starting at 1.
pub fn write_srt(program: &Program) -> String {
    fn ts(ms: u64) -> String {
        let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
        format!(
            "{:02}:{:02}:{:02},{:03}",
            h,
            rem / 60_000,
            (rem % 60_000) / 1000,
            rem % 1000
        )
    }
    let mut out = String::new();
    for line in program.lines() {
        out.push_str(&format!(
            "{}\n{} --> {}\n{}\n\n",
            line.line_id + 1,
            ts(line.start_ms),
            ts(line.end_ms),
            line.text
        ));
    }
    out
}

/// Orders assignments by line id and checks they cover the program exactly once.
pub(crate) fn ordered_assignments<'a, T>(
    program: &Program,
    assignments: &'a [Assignment<T>],
) -> Result<Vec<&'a Assignment<T>>> {
    let mut slots: Vec<Option<&Assignment<T>>> = vec![None; program.len()];
    for a in assignments {
        let slot = slots
            .get_mut(a.line_id)
            .ok_or_else(|| Error::Program(format!("assignment for unknown line {}", a.line_id)))?;
        if slot.replace(a).is_some() {
            return Err(Error::Program(format!("line {} assigned twice", a.line_id)));
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(line_id, s)| {
            s.ok_or(Error::MissingLine {
                line_id,
                what: "assignment",
            })
        })
        .collect()
}

/// Writes the per-line annotation CSV (fixed header, one record per line in
/// line-id order).
pub fn write_annotation<T: Real, W: Write>(
    program: &Program,
    assignments: &[Assignment<T>],
    sink: W,
) -> Result<()> {
    let ordered = ordered_assignments(program, assignments)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(ANNOTATION_HEADER)?;
    for (line, a) in program.lines().iter().zip(ordered) {
        w.write_record([
            line.line_id.to_string(),
            line.start_ms.to_string(),
            line.end_ms.to_string(),
            a.speaker.id.to_string(),
            a.speaker.origin.to_string(),
            a.stage.to_string(),
            a.confidence.to_string(),
            line.text.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed annotation CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord<T> {
    pub line_id: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub assignment: Assignment<T>,
    pub text: String,
}

#[derive(Deserialize)]
struct RawAnnotation {
    line_id: usize,
    start_ms: u64,
    end_ms: u64,
    speaker_id: u32,
    origin: String,
    stage: String,
    confidence: f64,
    text: String,
}

pub fn read_annotation<T: Real, R: Read>(source: R) -> Result<Vec<AnnotationRecord<T>>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(ANNOTATION_HEADER) {
        return Err(Error::Annotation(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawAnnotation>() {
        let r = row?;
        let origin = Origin::parse(&r.origin)
            .ok_or_else(|| Error::Annotation(format!("unknown origin {:?}", r.origin)))?;
        let stage = Stage::parse(&r.stage)
            .ok_or_else(|| Error::Annotation(format!("unknown stage {:?}", r.stage)))?;
        out.push(AnnotationRecord {
            line_id: r.line_id,
            start_ms: r.start_ms,
            end_ms: r.end_ms,
            assignment: Assignment {
                line_id: r.line_id,
                speaker: SpeakerId::new(r.speaker_id, origin),
                confidence: T::lit(r.confidence),
                stage,
            },
            text: r.text,
        });
    }
    Ok(out)
}

/// One `SPEAKER` record of an RTTM file. Times are kept in whole
/// milliseconds, matching the 3-decimal text representation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttmRecord {
    pub file_id: String,
    pub onset_ms: u64,
    pub duration_ms: u64,
    pub speaker_label: String,
}

impl RttmRecord {
    pub fn to_line(&self) -> String {
        format!(
            "SPEAKER {} 1 {} {} <NA> <NA> {} <NA> <NA>",
            self.file_id,
            fmt_seconds(self.onset_ms),
            fmt_seconds(self.duration_ms),
            self.speaker_label
        )
    }
}

fn fmt_seconds(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

fn parse_seconds(field: &str) -> Option<u64> {
    let v: f64 = field.parse().ok()?;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    Some((v * 1000.0).round() as u64)
}

pub fn rttm_records<T>(
    program: &Program,
    assignments: &[Assignment<T>],
    file_id: &str,
) -> Result<Vec<RttmRecord>> {
    let ordered = ordered_assignments(program, assignments)?;
    Ok(program
        .lines()
        .iter()
        .zip(ordered)
        .map(|(line, a)| RttmRecord {
            file_id: file_id.to_string(),
            onset_ms: line.start_ms,
            duration_ms: line.duration_ms(),
            speaker_label: a.speaker.label(),
        })
        .collect())
}

pub fn write_rttm<T>(
    program: &Program,
    assignments: &[Assignment<T>],
    file_id: &str,
) -> Result<String> {
    Ok(rttm_records(program, assignments, file_id)?
        .iter()
        .map(|r| r.to_line() + "\n")
        .collect())
}

/// Parses `SPEAKER` records. Blank lines and `;;` comments are skipped; other
/// record types (e.g. `SPKR-INFO`) are ignored.
pub fn parse_rttm(input: &str) -> Result<Vec<RttmRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::Rttm {
                line: line_no,
                reason: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        if fields[0] != "SPEAKER" {
            continue;
        }
        let num = |f: &str, what: &str| {
            parse_seconds(f).ok_or_else(|| Error::Rttm {
                line: line_no,
                reason: format!("invalid {what} {f:?}"),
            })
        };
        let onset_ms = num(fields[3], "onset")?;
        let duration_ms = num(fields[4], "duration")?;
        if duration_ms == 0 {
            return Err(Error::Rttm {
                line: line_no,
                reason: "duration must be positive".into(),
            });
        }
        out.push(RttmRecord {
            file_id: fields[1].to_string(),
            onset_ms,
            duration_ms,
            speaker_label: fields[7].to_string(),
        });
    }
    Ok(out)
}
