//! Off-screen speaker supplementation.
//!
//! Groups from turn detection are standardized to a main speaker; groups whose
//! lines look unlike every visual-anchored prototype are registered as new
//! speakers, or merged into an earlier supplemented speaker with a similar
//! group timbre.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, LineFeatures};
use crate::model::{
    cosine_similarity, mean_embedding, Assignment, Embedding, Origin, SpeakerId, Stage,
};
use crate::registration::{RegisteredSpeaker, SpeakerRegistry};
use crate::scalar::{cmp_real, Real};
use crate::turn::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupAction {
    Keep,
    NewSpeaker(u32),
    MergedInto(u32),
}

impl GroupAction {
    pub fn label(&self) -> String {
        match self {
            GroupAction::Keep => "keep".into(),
            GroupAction::NewSpeaker(id) => format!("new_speaker:{id}"),
            GroupAction::MergedInto(id) => format!("merged_into:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupVerdict<T> {
    pub first: usize,
    pub last: usize,
    pub main_speaker: SpeakerId,
    pub sigma_g: T,
    pub action: GroupAction,
}

#[derive(Debug, Clone, Copy)]
pub struct SupplementParams<T> {
    /// Novelty threshold: groups with `sigma(G) < eta` get a supplemented
    /// speaker. `eta = 0` disables supplementation.
    pub eta: T,
    /// Timbre similarity at which a novel group joins an existing
    /// supplemented speaker.
    pub epsilon: T,
}

impl<T: Real> SupplementParams<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.eta) {
            return Err(Error::param(
                "supplement.eta",
                format!("{} outside [0, 1]", self.eta),
            ));
        }
        if !unit(self.epsilon) {
            return Err(Error::param(
                "supplement.epsilon",
                format!("{} outside [0, 1]", self.epsilon),
            ));
        }
        Ok(())
    }
}

impl Default for SupplementParams<f64> {
    fn default() -> Self {
        Self {
            eta: 0.45,
            epsilon: 0.6,
        }
    }
}

/// `sigma(s)`: 1 for lines with a detected active speaker, otherwise the best
/// timbre similarity to a visual-anchored prototype.
pub fn line_novelty_score<T: Real>(
    line: &LineFeatures<T>,
    registry: &SpeakerRegistry<T>,
) -> Result<T> {
    let best = registry.nearest(&line.timbre, Origin::VisualAnchor)?;
    let (_, sim) = best.ok_or(Error::Empty("speaker registry"))?;
    Ok(if line.active { T::one() } else { sim })
}

/// `sigma(G)`: mean of the per-line scores.
pub fn group_novelty_score<T: Real>(sigmas: &[T]) -> Result<T> {
    if sigmas.is_empty() {
        return Err(Error::Empty("group"));
    }
    Ok(sigmas.iter().copied().sum::<T>() / T::from_count(sigmas.len() as u64))
}

fn feature<T>(features: &FeatureMap<T>, line_id: usize) -> Result<&LineFeatures<T>> {
    features.get(&line_id).ok_or(Error::MissingLine {
        line_id,
        what: "feature record",
    })
}

fn prototype<T: Real>(registry: &SpeakerRegistry<T>, id: SpeakerId) -> Result<&Embedding<T>> {
    registry
        .speakers
        .iter()
        .find(|s| s.id == id)
        .map(|s| &s.prototype)
        .ok_or_else(|| Error::Program(format!("speaker {} is not registered", id.id)))
}

/// Weighted plurality over the lines' initial speakers (active lines count
/// twice). Ties go to the highest summed timbre similarity over the group,
/// then to the smallest speaker id.
pub fn group_main_speaker<T: Real>(
    lines: std::ops::RangeInclusive<usize>,
    initial: &[Assignment<T>],
    features: &FeatureMap<T>,
    registry: &SpeakerRegistry<T>,
) -> Result<SpeakerId> {
    let mut votes: BTreeMap<SpeakerId, u32> = BTreeMap::new();
    for line_id in lines.clone() {
        let a = initial.get(line_id).ok_or(Error::MissingLine {
            line_id,
            what: "initial assignment",
        })?;
        let weight = if feature(features, line_id)?.active {
            2
        } else {
            1
        };
        *votes.entry(a.speaker).or_default() += weight;
    }
    let top = *votes.values().max().ok_or(Error::Empty("group"))?;
    let tied: Vec<SpeakerId> = votes
        .into_iter()
        .filter(|&(_, v)| v == top)
        .map(|(s, _)| s)
        .collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    let mut best: Option<(SpeakerId, T)> = None;
    for s in tied {
        let proto = prototype(registry, s)?;
        let mut total = T::zero();
        for line_id in lines.clone() {
            total = total + cosine_similarity(&feature(features, line_id)?.timbre, proto)?;
        }
        let better = match best {
            None => true,
            Some((b, bt)) => total > bt || (total == bt && s.id < b.id),
        };
        if better {
            best = Some((s, total));
        }
    }
    Ok(best.expect("at least one tied speaker").0)
}

#[derive(Debug, Clone)]
pub struct SupplementOutcome<T> {
    pub registry: SpeakerRegistry<T>,
    pub assignments: Vec<Assignment<T>>,
    pub verdicts: Vec<GroupVerdict<T>>,
}

/// Processes groups in time order. Lines with a detected active speaker
/// always keep their visual anchor; only the other lines are standardized or
/// moved to a supplemented speaker.
pub fn supplement<T: Real>(
    groups: &[Group<T>],
    initial: &[Assignment<T>],
    features: &FeatureMap<T>,
    registry: &SpeakerRegistry<T>,
    params: &SupplementParams<T>,
) -> Result<SupplementOutcome<T>> {
    params.validate()?;
    let mut registry = registry.clone();
    let mut assignments = initial.to_vec();
    let mut verdicts = Vec::with_capacity(groups.len());

    for g in groups {
        let mut sigmas = Vec::with_capacity(g.len());
        for line_id in g.lines() {
            sigmas.push(line_novelty_score(feature(features, line_id)?, &registry)?);
        }
        let sigma_g = group_novelty_score(&sigmas)?;
        let main = group_main_speaker(g.lines(), initial, features, &registry)?;

        let novel = params.eta > T::zero() && sigma_g < params.eta;
        let action = if novel {
            let timbres = g
                .lines()
                .map(|l| feature(features, l).map(|f| &f.timbre))
                .collect::<Result<Vec<_>>>()?;
            let group_mean = mean_embedding(timbres)?;
            let mut candidates = Vec::new();
            for s in registry
                .speakers
                .iter()
                .filter(|s| s.id.origin == Origin::Supplemented)
            {
                candidates.push((s.id.id, cosine_similarity(&group_mean, &s.prototype)?));
            }
            // highest similarity, then smallest id
            let nearest = candidates
                .into_iter()
                .max_by(|a, b| cmp_real(a.1, b.1).then(b.0.cmp(&a.0)));
            let support: BTreeSet<usize> = g.lines().collect();
            match nearest {
                Some((id, sim)) if sim >= params.epsilon => {
                    let target = registry
                        .speakers
                        .iter_mut()
                        .find(|s| s.id.id == id)
                        .expect("candidate came from the registry");
                    let old_n = T::from_count(target.support.len() as u64);
                    let new_n = T::from_count(support.len() as u64);
                    let merged: Vec<T> = target
                        .prototype
                        .as_slice()
                        .iter()
                        .zip(group_mean.as_slice())
                        .map(|(&a, &b)| (a * old_n + b * new_n) / (old_n + new_n))
                        .collect();
                    target.prototype = Embedding::new(merged)?;
                    target.support.extend(support);
                    GroupAction::MergedInto(id)
                }
                _ => {
                    let id = registry.next_id();
                    registry.speakers.push(RegisteredSpeaker {
                        id: SpeakerId::new(id, Origin::Supplemented),
                        prototype: group_mean,
                        support,
                    });
                    GroupAction::NewSpeaker(id)
                }
            }
        } else {
            GroupAction::Keep
        };

        let (target, stage) = match action {
            GroupAction::Keep => (main, Stage::GroupStandardized),
            GroupAction::NewSpeaker(id) | GroupAction::MergedInto(id) => (
                SpeakerId::new(id, Origin::Supplemented),
                Stage::Supplemented,
            ),
        };
        let proto = prototype(&registry, target)?.clone();
        for line_id in g.lines() {
            let f = feature(features, line_id)?;
            if f.active {
                continue;
            }
            assignments[line_id] = Assignment {
                line_id,
                speaker: target,
                confidence: cosine_similarity(&f.timbre, &proto)?,
                stage,
            };
        }
        verdicts.push(GroupVerdict {
            first: g.first,
            last: g.last,
            main_speaker: main,
            sigma_g,
            action,
        });
    }
    Ok(SupplementOutcome {
        registry,
        assignments,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::RegisteredSpeaker;

    fn e(v: &[f64]) -> Embedding<f64> {
        Embedding::from_f64(v).unwrap()
    }

    fn registry(protos: &[&[f64]]) -> SpeakerRegistry<f64> {
        SpeakerRegistry {
            speakers: protos
                .iter()
                .enumerate()
                .map(|(i, p)| RegisteredSpeaker {
                    id: SpeakerId::new(i as u32 + 1, Origin::VisualAnchor),
                    prototype: e(p),
                    support: BTreeSet::from([i]),
                })
                .collect(),
        }
    }

    fn feat(line_id: usize, active: bool, timbre: &[f64]) -> LineFeatures<f64> {
        LineFeatures {
            line_id,
            active,
            face: active.then(|| e(&[1.0])),
            timbre: e(timbre),
        }
    }

    fn assign(line_id: usize, speaker: u32) -> Assignment<f64> {
        Assignment {
            line_id,
            speaker: SpeakerId::new(speaker, Origin::VisualAnchor),
            confidence: 1.0,
            stage: Stage::PrototypeNearest,
        }
    }

    fn group(first: usize, last: usize) -> Group<f64> {
        Group {
            first,
            last,
            left_boundary: None,
            right_boundary: None,
        }
    }

    /// Unit vector at cosine `c` from the first axis, turned into axis `axis`.
    fn at_cos(c: f64, axis: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = c;
        v[axis] = (1.0 - c * c).sqrt();
        v
    }

    #[test]
    fn line_scores() {
        let reg = registry(&[&[1.0, 0.0, 0.0]]);
        assert_eq!(
            line_novelty_score(&feat(0, true, &[0.0, 1.0, 0.0]), &reg).unwrap(),
            1.0
        );
        let s = line_novelty_score(&feat(0, false, &at_cos(0.185, 1, 3)), &reg).unwrap();
        assert!((s - 0.185).abs() < 1e-12);
        assert_eq!(
            line_novelty_score(&feat(0, false, &[2.0, 0.0, 0.0]), &reg).unwrap(),
            1.0
        );
        assert!(line_novelty_score(&feat(0, false, &[1.0]), &SpeakerRegistry::default()).is_err());
    }

    #[test]
    fn group_scores() {
        assert!((group_novelty_score::<f64>(&[0.185, 0.235]).unwrap() - 0.210).abs() < 1e-12);
        assert!(
            (group_novelty_score::<f64>(&[0.312, 0.264, 0.279]).unwrap() - 0.285).abs() < 1e-12
        );
        assert_eq!(group_novelty_score(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!(group_novelty_score::<f64>(&[]).is_err());
    }

    #[test]
    fn main_speaker_votes() {
        let reg = registry(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let features: FeatureMap<f64> = (0..4).map(|i| (i, feat(i, i == 0, &[0.0, 1.0]))).collect();
        let unanimous = vec![assign(0, 3), assign(1, 3), assign(2, 3)];
        assert_eq!(
            group_main_speaker(0..=2, &unanimous, &features, &reg)
                .unwrap()
                .id,
            3
        );

        // speaker 1: line 0 (active) + line 1; speaker 2: lines 2, 3 -> 3 votes vs 2
        let initial = vec![assign(0, 1), assign(1, 1), assign(2, 2), assign(3, 2)];
        assert_eq!(
            group_main_speaker(0..=3, &initial, &features, &reg)
                .unwrap()
                .id,
            1
        );

        // one vote each; timbres favor speaker 2
        let initial = vec![assign(0, 1), assign(1, 1), assign(2, 2)];
        assert_eq!(
            group_main_speaker(1..=2, &initial, &features, &reg)
                .unwrap()
                .id,
            2
        );
    }

    #[test]
    fn worked_supplementation() {
        // one registered speaker along the first axis; off-screen groups at
        // low similarity on two different axes
        let dim = 4;
        let reg = registry(&[&[1.0, 0.0, 0.0, 0.0]]);
        let rows: Vec<(bool, Vec<f64>)> = vec![
            (true, vec![1.0, 0.0, 0.0, 0.0]),
            (true, vec![1.0, 0.0, 0.0, 0.0]),
            (true, vec![1.0, 0.0, 0.0, 0.0]),
            (false, at_cos(0.185, 1, dim)),
            (false, at_cos(0.235, 1, dim)),
            (true, vec![1.0, 0.0, 0.0, 0.0]),
            (false, at_cos(0.312, 2, dim)),
            (false, at_cos(0.264, 2, dim)),
            (false, at_cos(0.279, 2, dim)),
        ];
        let features: FeatureMap<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, (a, t))| (i, feat(i, *a, t)))
            .collect();
        let initial: Vec<_> = (0..9).map(|i| assign(i, 1)).collect();
        let groups = [group(0, 2), group(3, 4), group(5, 5), group(6, 8)];
        let out = supplement(
            &groups,
            &initial,
            &features,
            &reg,
            &SupplementParams::default(),
        )
        .unwrap();
        let sig: Vec<f64> = out.verdicts.iter().map(|v| v.sigma_g).collect();
        assert_eq!(format!("{:.3}", sig[1]), "0.210");
        assert_eq!(format!("{:.3}", sig[3]), "0.285");
        assert_eq!(sig[0], 1.0);
        assert_eq!(out.verdicts[0].action, GroupAction::Keep);
        assert_eq!(out.verdicts[1].action, GroupAction::NewSpeaker(2));
        assert_eq!(out.verdicts[2].action, GroupAction::Keep);
        assert_eq!(out.verdicts[3].action, GroupAction::NewSpeaker(3));
        assert_eq!(
            out.assignments[3].speaker,
            SpeakerId::new(2, Origin::Supplemented)
        );
        assert_eq!(out.assignments[8].stage, Stage::Supplemented);
        assert_eq!(out.assignments[0].stage, Stage::PrototypeNearest);

        // same novel timbre twice: second group merges into the first
        let rows2 = [at_cos(0.1, 1, dim), at_cos(0.1, 1, dim)];
        let features2: FeatureMap<f64> = rows2
            .iter()
            .enumerate()
            .map(|(i, t)| (i, feat(i, false, t)))
            .collect();
        let initial2: Vec<_> = (0..2).map(|i| assign(i, 1)).collect();
        let out2 = supplement(
            &[group(0, 0), group(1, 1)],
            &initial2,
            &features2,
            &reg,
            &SupplementParams::default(),
        )
        .unwrap();
        assert_eq!(out2.verdicts[1].action, GroupAction::MergedInto(2));
        assert_eq!(out2.registry.count(Origin::Supplemented), 1);
        assert_eq!(
            out2.registry.get(2).unwrap().support,
            BTreeSet::from([0, 1])
        );
    }

    #[test]
    fn eta_zero_disables() {
        let reg = registry(&[&[1.0, 0.0]]);
        let features: FeatureMap<f64> = (0..2).map(|i| (i, feat(i, false, &[-1.0, 0.1]))).collect();
        let initial: Vec<_> = (0..2).map(|i| assign(i, 1)).collect();
        let params = SupplementParams {
            eta: 0.0,
            epsilon: 0.6,
        };
        let out = supplement(&[group(0, 1)], &initial, &features, &reg, &params).unwrap();
        assert_eq!(out.registry, reg);
        assert_eq!(out.assignments[0].stage, Stage::GroupStandardized);
    }

    #[test]
    fn active_lines_keep_anchor() {
        let reg = registry(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let features: FeatureMap<f64> = vec![
            (0, feat(0, true, &[0.0, 0.0, 1.0])),
            (1, feat(1, false, &[0.0, 0.0, 1.0])),
            (2, feat(2, false, &[0.0, 0.0, 1.0])),
        ]
        .into_iter()
        .collect();
        let initial = vec![
            Assignment {
                stage: Stage::ActiveVisual,
                ..assign(0, 2)
            },
            assign(1, 1),
            assign(2, 1),
        ];
        // sigma(G) = (1 + 0 + 0) / 3 < 0.45
        let out = supplement(
            &[group(0, 2)],
            &initial,
            &features,
            &reg,
            &SupplementParams::default(),
        )
        .unwrap();
        assert_eq!(out.assignments[0], initial[0]);
        assert_eq!(out.assignments[1].speaker.origin, Origin::Supplemented);
    }

    #[test]
    fn invalid_thresholds() {
        let reg = registry(&[&[1.0]]);
        let p = SupplementParams {
            eta: 1.5,
            epsilon: 0.6,
        };
        assert!(supplement(&[], &[], &FeatureMap::new(), &reg, &p).is_err());
        let p = SupplementParams {
            eta: 0.5,
            epsilon: -0.1,
        };
        assert!(supplement(&[], &[], &FeatureMap::new(), &reg, &p).is_err());
    }
}
