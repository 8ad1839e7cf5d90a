//! Visual-anchor speaker registration.
//!
//! Every visual cluster becomes a speaker. Its lines vote for an audio
//! cluster, and the timbre prototype is the mean timbre of the lines that sit
//! in both the visual cluster and the winning audio cluster.

use std::collections::{BTreeMap, BTreeSet};

use crate::clustering::ClusterLabels;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::{
    cosine_similarity, mean_embedding, Assignment, Embedding, Origin, SpeakerId, Stage,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredSpeaker<T> {
    pub id: SpeakerId,
    pub prototype: Embedding<T>,
    /// Lines whose timbres were averaged into the prototype.
    pub support: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeakerRegistry<T> {
    pub speakers: Vec<RegisteredSpeaker<T>>,
}

impl<T: Real> SpeakerRegistry<T> {
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.speakers
            .iter()
            .filter(|s| s.id.origin == origin)
            .count()
    }

    pub fn get(&self, id: u32) -> Option<&RegisteredSpeaker<T>> {
        self.speakers.iter().find(|s| s.id.id == id)
    }

    pub fn next_id(&self) -> u32 {
        self.speakers.iter().map(|s| s.id.id + 1).max().unwrap_or(1)
    }

    /// Most similar speaker among those of `origin`; smallest id wins ties.
    pub fn nearest(&self, timbre: &Embedding<T>, origin: Origin) -> Result<Option<(SpeakerId, T)>> {
        let mut best: Option<(SpeakerId, T)> = None;
        for s in self.speakers.iter().filter(|s| s.id.origin == origin) {
            let sim = cosine_similarity(timbre, &s.prototype)?;
            let better = match best {
                None => true,
                Some((id, b)) => sim > b || (sim == b && s.id.id < id.id),
            };
            if better {
                best = Some((s.id, sim));
            }
        }
        Ok(best)
    }
}

/// Audio cluster with the most votes among `lines`; smallest cluster id on ties.
pub fn vote_audio_cluster(lines: &[usize], audio: &ClusterLabels) -> Result<usize> {
    if lines.is_empty() {
        return Err(Error::Empty("visual cluster"));
    }
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for &line_id in lines {
        let c = audio.get(line_id).ok_or(Error::MissingLine {
            line_id,
            what: "audio cluster label",
        })?;
        *votes.entry(c).or_default() += 1;
    }
    let mut best = (0, 0);
    for (c, n) in votes {
        if n > best.1 {
            best = (c, n);
        }
    }
    Ok(best.0)
}

/// Registers one speaker per visual cluster (id = visual cluster label).
pub fn build_registry<T: Real>(
    features: &FeatureMap<T>,
    visual: &ClusterLabels,
    audio: &ClusterLabels,
) -> Result<SpeakerRegistry<T>> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&line_id, &c) in &visual.labels {
        members.entry(c).or_default().push(line_id);
    }
    let mut speakers = Vec::with_capacity(visual.n);
    for cluster in 1..=visual.n {
        let lines = members
            .get(&cluster)
            .expect("visual cluster labels are 1..=n without gaps");
        let winner = vote_audio_cluster(lines, audio)?;
        let support: BTreeSet<usize> = lines
            .iter()
            .copied()
            .filter(|&l| audio.get(l) == Some(winner))
            .collect();
        let timbres = support
            .iter()
            .map(|l| {
                features
                    .get(l)
                    .map(|f| &f.timbre)
                    .ok_or(Error::MissingLine {
                        line_id: *l,
                        what: "feature record",
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        speakers.push(RegisteredSpeaker {
            id: SpeakerId::new(cluster as u32, Origin::VisualAnchor),
            prototype: mean_embedding(timbres)?,
            support,
        });
    }
    Ok(SpeakerRegistry { speakers })
}

/// Active lines take their visual cluster's speaker with confidence 1;
/// the rest take the most timbre-similar visual-anchored prototype.
pub fn assign_initial<T: Real>(
    features: &FeatureMap<T>,
    visual: &ClusterLabels,
    registry: &SpeakerRegistry<T>,
) -> Result<Vec<Assignment<T>>> {
    if registry.count(Origin::VisualAnchor) == 0 {
        return Err(Error::Empty("speaker registry"));
    }
    features
        .values()
        .map(|f| {
            if f.active {
                let c = visual.get(f.line_id).ok_or(Error::MissingLine {
                    line_id: f.line_id,
                    what: "visual cluster label",
                })?;
                Ok(Assignment {
                    line_id: f.line_id,
                    speaker: SpeakerId::new(c as u32, Origin::VisualAnchor),
                    confidence: T::one(),
                    stage: Stage::ActiveVisual,
                })
            } else {
                let (speaker, sim) = registry
                    .nearest(&f.timbre, Origin::VisualAnchor)?
                    .expect("registry checked non-empty");
                Ok(Assignment {
                    line_id: f.line_id,
                    speaker,
                    confidence: sim,
                    stage: Stage::PrototypeNearest,
                })
            }
        })
        .collect()
}
