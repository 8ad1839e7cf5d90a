//! Synthetic labeled programs for desk-scale verification.
//!
//! Speakers get well-separated timbre and face prototypes on the unit sphere;
//! lines follow a sticky Markov chain over speakers, and every observed
//! embedding is a noisy, re-normalized copy of its speaker's prototype.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::Paths;
use crate::error::{Error, Result};
use crate::features::{
    write_features, write_turn_scores, FeatureMap, LineFeatures, TurnScoreMap, TurnScoreRecord,
};
use crate::model::{cosine_similarity, unit_normalize, Embedding, Program};
use crate::scalar::Real;
use crate::subtitle::write_srt;

/// Probability that the next line keeps the current speaker.
pub const STAY_PROBABILITY: f64 = 0.6;
/// Upper bound on the cosine between any two prototypes.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.5;
const MAX_DRAWS_PER_PROTOTYPE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub n_lines: usize,
    pub embedding_dim: usize,
    /// Per-component standard deviation of the face perturbation.
    pub face_noise_std: f64,
    /// Per-component standard deviation of the timbre perturbation.
    pub timbre_noise_std: f64,
    /// Chance that a line of an on-screen speaker has no detected active speaker.
    pub offscreen_rate: f64,
    /// Speakers (the last ones by index) whose lines are never on screen.
    pub unregistered_offscreen_speakers: usize,
    /// Chance that the synthetic scorer's label agrees with the truth.
    pub turn_score_accuracy: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 5,
            n_lines: 100,
            embedding_dim: 32,
            face_noise_std: 0.0,
            timbre_noise_std: 0.0,
            offscreen_rate: 0.0,
            unregistered_offscreen_speakers: 0,
            turn_score_accuracy: 1.0,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_speakers == 0 {
            return Err(Error::param("n_speakers", "must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::param("embedding_dim", "must be at least 1"));
        }
        if !(self.face_noise_std >= 0.0 && self.face_noise_std.is_finite())
            || !(self.timbre_noise_std >= 0.0 && self.timbre_noise_std.is_finite())
        {
            return Err(Error::param("noise std", "must be finite and non-negative"));
        }
        if !prob(self.offscreen_rate) {
            return Err(Error::param("offscreen_rate", "must lie in [0, 1]"));
        }
        if !prob(self.turn_score_accuracy) {
            return Err(Error::param("turn_score_accuracy", "must lie in [0, 1]"));
        }
        if self.unregistered_offscreen_speakers >= self.n_speakers {
            return Err(Error::param(
                "unregistered_offscreen_speakers",
                "at least one speaker must be able to appear on screen",
            ));
        }
        Ok(())
    }
}

/// Reference speaker label per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: Vec<String>,
}

impl GroundTruth {
    pub fn same_speaker(&self, left: usize) -> bool {
        self.labels[left] == self.labels[left + 1]
    }

    pub fn speaker_count(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// CSV with header `line_id,speaker`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        w.write_record(["line_id", "speaker"])?;
        for (i, l) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), l.clone()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`GroundTruth::write_csv`]; rows may come in
    /// any order but must cover `0..n` exactly once.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            line_id: usize,
            speaker: String,
        }
        let mut rows = BTreeMap::new();
        for row in csv::Reader::from_reader(source).deserialize::<Row>() {
            let r = row?;
            if rows.insert(r.line_id, r.speaker).is_some() {
                return Err(Error::Annotation(format!(
                    "duplicate truth for line {}",
                    r.line_id
                )));
            }
        }
        if let Some((pos, _)) = rows.keys().enumerate().find(|(pos, id)| pos != *id) {
            return Err(Error::MissingLine {
                line_id: pos,
                what: "ground-truth label",
            });
        }
        Ok(Self {
            labels: rows.into_values().collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthProgram<T> {
    pub program: Program,
    pub features: FeatureMap<T>,
    pub turn_scores: TurnScoreMap,
    pub truth: GroundTruth,
    /// True speaker index per line.
    pub speakers: Vec<usize>,
    /// Speakers that never appear on screen.
    pub offscreen_speakers: BTreeSet<usize>,
    pub timbre_prototypes: Vec<Embedding<T>>,
}

impl<T: Real> SynthProgram<T> {
    /// Writes `<stem>.srt`, `features.jsonl`, `turn_scores.jsonl` and
    /// `truth.csv` into `dir` and returns their paths.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<Paths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = Paths {
            subtitles: Some(dir.join(format!("{stem}.srt"))),
            features: Some(dir.join("features.jsonl")),
            turn_scores: Some(dir.join("turn_scores.jsonl")),
            ground_truth: Some(dir.join("truth.csv")),
            output_dir: None,
        };
        let mut features = Vec::new();
        write_features(&self.features, &mut features)?;
        let mut scores = Vec::new();
        write_turn_scores(&self.turn_scores, &mut scores)?;
        let mut truth = Vec::new();
        self.truth.write_csv(&mut truth)?;
        for (path, bytes) in [
            (&paths.subtitles, write_srt(&self.program).into_bytes()),
            (&paths.features, features),
            (&paths.turn_scores, scores),
            (&paths.ground_truth, truth),
        ] {
            let path = path.as_ref().expect("set above");
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}

fn random_unit<T: Real>(dim: usize, rng: &mut ChaCha8Rng) -> Result<Embedding<T>> {
    loop {
        let v: Vec<T> = (0..dim)
            .map(|_| T::lit(StandardNormal.sample(rng)))
            .collect();
        let e = Embedding::new(v)?;
        if e.norm() > T::zero() {
            return unit_normalize(&e);
        }
    }
}

fn sample_prototypes<T: Real>(
    n: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Embedding<T>>> {
    let max_cos = T::lit(MAX_PROTOTYPE_COSINE);
    let mut protos: Vec<Embedding<T>> = Vec::with_capacity(n);
    while protos.len() < n {
        let mut accepted = None;
        for _ in 0..MAX_DRAWS_PER_PROTOTYPE {
            let cand = random_unit(dim, rng)?;
            let mut ok = true;
            for p in &protos {
                if cosine_similarity(&cand, p)? > max_cos {
                    ok = false;
                    break;
                }
            }
            if ok {
                accepted = Some(cand);
                break;
            }
        }
        protos.push(accepted.ok_or(Error::InfeasibleSynth {
            n,
            dim,
            max_cos: MAX_PROTOTYPE_COSINE,
        })?);
    }
    Ok(protos)
}

fn perturb<T: Real>(
    proto: &Embedding<T>,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Embedding<T>> {
    let v: Vec<T> = proto
        .as_slice()
        .iter()
        .map(|&x| x + T::lit(noise.sample(rng)))
        .collect();
    unit_normalize(&Embedding::new(v)?)
}

/// Generates a program with features, synthetic turn scores and ground
/// truth. Fully determined by `cfg` (including its seed).
///
/// Scorer model: each pair's predicted label matches the truth with
/// probability `turn_score_accuracy`; the predicted label's token gets
/// probability `q ~ U[0.5 + 0.5 * accuracy, 1]`, so a perfectly accurate
/// scorer emits hard 0/1 probabilities.
pub fn synth_program<T: Real>(cfg: &SynthConfig) -> Result<SynthProgram<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let timbre_protos = sample_prototypes::<T>(cfg.n_speakers, cfg.embedding_dim, &mut rng)?;
    let face_protos = sample_prototypes::<T>(cfg.n_speakers, cfg.embedding_dim, &mut rng)?;
    let offscreen: BTreeSet<usize> =
        (cfg.n_speakers - cfg.unregistered_offscreen_speakers..cfg.n_speakers).collect();

    let mut speakers = Vec::with_capacity(cfg.n_lines);
    for i in 0..cfg.n_lines {
        let next = if i == 0 {
            rng.random_range(0..cfg.n_speakers)
        } else {
            let prev = speakers[i - 1];
            if cfg.n_speakers == 1 || rng.random::<f64>() < STAY_PROBABILITY {
                prev
            } else {
                let k = rng.random_range(0..cfg.n_speakers - 1);
                if k >= prev {
                    k + 1
                } else {
                    k
                }
            }
        };
        speakers.push(next);
    }

    let timbre_noise = Normal::new(0.0, cfg.timbre_noise_std).expect("validated std");
    let face_noise = Normal::new(0.0, cfg.face_noise_std).expect("validated std");
    let mut cues = Vec::with_capacity(cfg.n_lines);
    let mut features = FeatureMap::new();
    let mut clock = 1000u64;
    for (line_id, &spk) in speakers.iter().enumerate() {
        let duration = rng.random_range(800..4000u64);
        let gap = rng.random_range(100..1200u64);
        cues.push((clock, clock + duration, format!("Line {}.", line_id + 1)));
        clock += duration + gap;

        let timbre = perturb(&timbre_protos[spk], &timbre_noise, &mut rng)?;
        let offscreen_draw = rng.random::<f64>();
        let active = !offscreen.contains(&spk) && offscreen_draw >= cfg.offscreen_rate;
        let face = if active {
            Some(perturb(&face_protos[spk], &face_noise, &mut rng)?)
        } else {
            None
        };
        features.insert(
            line_id,
            LineFeatures {
                line_id,
                active,
                face,
                timbre,
            },
        );
    }
    let program = Program::from_cues(format!("synth-{}", cfg.rng_seed), cues)?;

    let floor = 0.5 + 0.5 * cfg.turn_score_accuracy;
    let mut turn_scores = TurnScoreMap::new();
    for left in 0..cfg.n_lines.saturating_sub(1) {
        let same = speakers[left] == speakers[left + 1];
        let agree = rng.random::<f64>() < cfg.turn_score_accuracy;
        let predicted_same = if agree { same } else { !same };
        let q = if floor < 1.0 {
            rng.random_range(floor..=1.0)
        } else {
            1.0
        };
        let p1 = if predicted_same { q } else { 1.0 - q };
        turn_scores.insert(
            left,
            TurnScoreRecord {
                left_line_id: left,
                right_line_id: left + 1,
                p0: 1.0 - p1,
                p1,
            },
        );
    }

    Ok(SynthProgram {
        program,
        features,
        turn_scores,
        truth: GroundTruth {
            labels: speakers.iter().map(|s| format!("S{s}")).collect(),
        },
        speakers,
        offscreen_speakers: offscreen,
        timbre_prototypes: timbre_protos,
    })
}
