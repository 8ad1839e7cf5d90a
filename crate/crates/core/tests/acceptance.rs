//! Acceptance suite. Every criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Criteria run sequentially so that the wall-clock
//! budgets are measured without interference.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use subdiar::clustering::{ahc, canonical_labels, spectral_cluster, SpectralParams};
use subdiar::config::{ClusteringMethod, Modality, PipelineConfig};
use subdiar::features::{FeatureMap, LineFeatures};
use subdiar::metrics::{
    optimal_mapping, score, LabeledTimeline, ScoringMode, ScoringOptions, Segment,
};
use subdiar::model::{cosine_similarity, Assignment, Embedding, Origin, Program, SpeakerId, Stage};
use subdiar::pipeline::{
    run_from_config, run_pipeline, sweep, PipelineInputs, SweepParam, OUTPUT_FILES,
};
use subdiar::registration::{RegisteredSpeaker, SpeakerRegistry};
use subdiar::supplement::{supplement, GroupAction, SupplementParams};
use subdiar::synth::{synth_program, SynthConfig};
use subdiar::turn::Group;

/// Tolerance for metric values against hand-computed oracles.
const METRIC_TOL: f64 = 1e-9;
/// Tolerance for sigma(G) against the hand-computed mean.
const SIGMA_TOL: f64 = 1e-12;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn inputs_for(cfg: &SynthConfig) -> (PipelineInputs<f64>, subdiar::synth::SynthProgram<f64>) {
    let s = synth_program::<f64>(cfg).expect("valid synth config");
    let inputs = PipelineInputs {
        program: s.program.clone(),
        features: s.features.clone(),
        turn_scores: Some(s.turn_scores.clone()),
        truth: Some(s.truth.clone()),
    };
    (inputs, s)
}

fn pipeline(modality: Modality, method: ClusteringMethod) -> PipelineConfig {
    PipelineConfig {
        modality,
        clustering_method: method,
        ..Default::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------------------
// worked example

fn unit(v: Vec<f64>) -> Embedding<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding::new(v.into_iter().map(|x| x / n).collect()).unwrap()
}

/// Unit timbre at cosine `c` from axis 0, leaning towards axis 1.
fn timbre_at(c: f64) -> Embedding<f64> {
    Embedding::new(vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0]).unwrap()
}

fn worked_example() -> Check {
    // groups: 3 active lines | 2 off-screen lines | 1 active line | 3 off-screen lines
    let sigmas_g2 = [0.185, 0.235];
    let sigmas_g4 = [0.312, 0.264, 0.279];
    let mut specs: Vec<(bool, f64)> = vec![(true, 0.9), (true, 0.95), (true, 0.97)];
    specs.extend(sigmas_g2.iter().map(|&c| (false, c)));
    specs.push((true, 0.92));
    specs.extend(sigmas_g4.iter().map(|&c| (false, c)));

    let face = unit(vec![0.0, 0.0, 1.0, 0.0]);
    let features: FeatureMap<f64> = specs
        .iter()
        .enumerate()
        .map(|(line_id, &(active, c))| {
            (
                line_id,
                LineFeatures {
                    line_id,
                    active,
                    face: active.then(|| face.clone()),
                    timbre: timbre_at(c),
                },
            )
        })
        .collect();
    let anchor = SpeakerId::new(1, Origin::VisualAnchor);
    let registry = SpeakerRegistry {
        speakers: vec![RegisteredSpeaker {
            id: anchor,
            prototype: unit(vec![1.0, 0.0, 0.0, 0.0]),
            support: BTreeSet::from([0, 1, 2, 5]),
        }],
    };
    let initial: Vec<Assignment<f64>> = specs
        .iter()
        .enumerate()
        .map(|(line_id, &(active, c))| Assignment {
            line_id,
            speaker: anchor,
            confidence: if active { 1.0 } else { c },
            stage: if active {
                Stage::ActiveVisual
            } else {
                Stage::PrototypeNearest
            },
        })
        .collect();
    let groups: Vec<Group<f64>> = [(0, 2), (3, 4), (5, 5), (6, 8)]
        .iter()
        .map(|&(first, last)| Group {
            first,
            last,
            left_boundary: None,
            right_boundary: None,
        })
        .collect();
    let params = SupplementParams {
        eta: 0.45,
        epsilon: 0.6,
    };
    let out =
        supplement(&groups, &initial, &features, &registry, &params).map_err(|e| e.to_string())?;
    let v = &out.verdicts;
    ensure!(v.len() == 4, "expected 4 verdicts, got {}", v.len());

    let hand_g2 = (0.185 + 0.235) / 2.0;
    let hand_g4 = (0.312 + 0.264 + 0.279) / 3.0;
    ensure!(
        (v[1].sigma_g - hand_g2).abs() < SIGMA_TOL,
        "sigma(G2) = {}",
        v[1].sigma_g
    );
    ensure!(
        (v[3].sigma_g - hand_g4).abs() < SIGMA_TOL,
        "sigma(G4) = {}",
        v[3].sigma_g
    );
    let (s2, s4) = (
        format!("{:.3}", v[1].sigma_g),
        format!("{:.3}", v[3].sigma_g),
    );
    ensure!(
        s2 == "0.210" && s4 == "0.285",
        "3-decimal sigma(G) = {s2}, {s4}"
    );

    for i in [0, 2] {
        ensure!(
            v[i].sigma_g == 1.0,
            "all-active group {i} has sigma {}",
            v[i].sigma_g
        );
        ensure!(
            v[i].action == GroupAction::Keep,
            "all-active group {i}: {}",
            v[i].action.label()
        );
        ensure!(
            v[i].action.label() == "keep",
            "label {}",
            v[i].action.label()
        );
    }
    let new_id = match v[1].action {
        GroupAction::NewSpeaker(id) => id,
        other => {
            return Err(format!(
                "group 2 should register a new speaker, got {}",
                other.label()
            ))
        }
    };
    match v[3].action {
        GroupAction::MergedInto(id) if id == new_id => {}
        GroupAction::NewSpeaker(_) => return Err("group 4 registered instead of merging".into()),
        other => return Err(format!("group 4: {}", other.label())),
    }
    for a in &out.assignments {
        let active = specs[a.line_id].0;
        let expected = if active {
            anchor
        } else {
            SpeakerId::new(new_id, Origin::Supplemented)
        };
        ensure!(
            a.speaker == expected,
            "line {} assigned to {:?}",
            a.line_id,
            a.speaker
        );
    }
    Ok(format!(
        "sigma(G) = 1.000, {s2}, 1.000, {s4}; actions {}",
        v.iter()
            .map(|x| x.action.label())
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

// ---------------------------------------------------------------------------
// synthetic end-to-end criteria

fn noise_free_recovery() -> Check {
    let cfg = SynthConfig {
        n_speakers: 10,
        n_lines: 300,
        embedding_dim: 64,
        face_noise_std: 0.0,
        timbre_noise_std: 0.0,
        offscreen_rate: 0.0,
        unregistered_offscreen_speakers: 0,
        turn_score_accuracy: 1.0,
        rng_seed: 2026,
    };
    let (inputs, _) = inputs_for(&cfg);
    let mut parts = Vec::new();
    for method in [ClusteringMethod::Ahc, ClusteringMethod::Spectral] {
        let r =
            run_pipeline(&pipeline(Modality::AVT, method), &inputs).map_err(|e| e.to_string())?;
        let m = r.report.expect("truth given");
        ensure!(
            m.der == 0.0 && m.jer == 0.0,
            "{}: DER {} JER {}",
            method.as_str(),
            m.der,
            m.jer
        );
        ensure!(
            m.hypothesis_speakers == 10,
            "{}: {} speakers",
            method.as_str(),
            m.hypothesis_speakers
        );
        parts.push(format!("{} DER 0 JER 0", method.as_str()));
    }
    Ok(parts.join("; "))
}

fn offscreen_supplementation() -> Check {
    let cfg = SynthConfig {
        n_speakers: 8,
        n_lines: 300,
        embedding_dim: 64,
        unregistered_offscreen_speakers: 2,
        turn_score_accuracy: 1.0,
        rng_seed: 7,
        ..Default::default()
    };
    let (inputs, s) = inputs_for(&cfg);
    // precondition of the setup: off-screen prototypes sit below eta from every on-screen one
    let mut max_cross: f64 = -1.0;
    for &off in &s.offscreen_speakers {
        for on in (0..cfg.n_speakers).filter(|k| !s.offscreen_speakers.contains(k)) {
            max_cross = max_cross.max(
                cosine_similarity(&s.timbre_prototypes[off], &s.timbre_prototypes[on]).unwrap(),
            );
        }
    }
    let mut parts = Vec::new();
    for method in [ClusteringMethod::Ahc, ClusteringMethod::Spectral] {
        let r =
            run_pipeline(&pipeline(Modality::AVT, method), &inputs).map_err(|e| e.to_string())?;
        let n_sup = r.registry.count(Origin::Supplemented);
        ensure!(
            n_sup == 2,
            "{}: {n_sup} supplemented speakers",
            method.as_str()
        );
        let m = r.report.as_ref().expect("truth given");
        ensure!(m.der == 0.0, "{}: DER {}", method.as_str(), m.der);
        // each supplemented speaker owns exactly the lines of one off-screen speaker
        let mut owned: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        for a in r
            .assignments
            .iter()
            .filter(|a| a.speaker.origin == Origin::Supplemented)
        {
            owned.entry(a.speaker.id).or_default().insert(a.line_id);
        }
        let truth_sets: BTreeSet<BTreeSet<usize>> = s
            .offscreen_speakers
            .iter()
            .map(|&k| {
                (0..s.speakers.len())
                    .filter(|&l| s.speakers[l] == k)
                    .collect()
            })
            .collect();
        let got: BTreeSet<BTreeSet<usize>> = owned.into_values().collect();
        ensure!(
            got == truth_sets,
            "{}: supplemented line sets differ from truth",
            method.as_str()
        );
        parts.push(format!("{} 2 supplemented, DER 0", method.as_str()));
    }
    Ok(format!(
        "{} (max off/on prototype cosine {max_cross:.3})",
        parts.join("; ")
    ))
}

fn noisy(seed: u64) -> SynthConfig {
    SynthConfig {
        n_speakers: 6,
        n_lines: 300,
        embedding_dim: 32,
        face_noise_std: 0.05,
        timbre_noise_std: 0.25,
        offscreen_rate: 0.3,
        unregistered_offscreen_speakers: 0,
        turn_score_accuracy: 0.85,
        rng_seed: seed,
    }
}

const TREND_SEEDS: u64 = 10;

fn modality_trend() -> Check {
    let mut parts = Vec::new();
    for method in [ClusteringMethod::Spectral, ClusteringMethod::Ahc] {
        let (mut a, mut av, mut avt) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..TREND_SEEDS {
            let (inputs, _) = inputs_for(&noisy(seed));
            let der = |m| {
                run_pipeline(&pipeline(m, method), &inputs)
                    .map(|r| r.report.expect("truth given").der)
                    .map_err(|e| e.to_string())
            };
            a.push(der(Modality::A)?);
            av.push(der(Modality::AV)?);
            avt.push(der(Modality::AVT)?);
        }
        let wins = a.iter().zip(&av).filter(|(x, y)| y < x).count();
        let (ma, mav, mavt) = (median(a), median(av), median(avt));
        ensure!(
            mavt <= mav && mav < ma,
            "{}: median DER A {ma:.4} AV {mav:.4} AVT {mavt:.4}",
            method.as_str()
        );
        ensure!(
            wins >= 9,
            "{}: AV beats A in only {wins}/10 seeds",
            method.as_str()
        );
        parts.push(format!(
            "{}: median DER A {ma:.4} > AV {mav:.4} >= AVT {mavt:.4}, AV<A in {wins}/10",
            method.as_str()
        ));
    }
    Ok(parts.join("; "))
}

fn sweeps() -> Check {
    let w_grid = [0.0, 0.25, 0.45, 0.75, 1.0];
    let eta_grid = [0.1, 0.45, 0.9];
    let cfg = PipelineConfig::default();
    let mut best_ws = Vec::new();
    let mut counts = Vec::new();
    for seed in 0..TREND_SEEDS {
        let (inputs, _) = inputs_for(&noisy(seed));
        let rows = sweep(&cfg, &inputs, SweepParam::W, &w_grid).map_err(|e| e.to_string())?;
        let f1: Vec<f64> = rows
            .iter()
            .map(|r| r.turn_f1.expect("AVT has decisions"))
            .collect();
        let interior = f1[1..4].iter().cloned().fold(f64::MIN, f64::max);
        let ends = f1[0].max(f1[4]);
        ensure!(
            interior > ends,
            "seed {seed}: F1 over w grid {f1:?} peaks at an endpoint"
        );
        let best = (1..4).find(|&i| f1[i] == interior).unwrap();
        best_ws.push(w_grid[best]);

        let rows = sweep(&cfg, &inputs, SweepParam::Eta, &eta_grid).map_err(|e| e.to_string())?;
        let n: Vec<usize> = rows.iter().map(|r| r.supplemented_speakers).collect();
        ensure!(
            n.windows(2).all(|p| p[0] <= p[1]),
            "seed {seed}: supplemented counts {n:?} over eta grid"
        );
        counts.push(n);
    }
    Ok(format!(
        "best w per seed {best_ws:?}; supplemented counts (eta 0.1/0.45/0.9) {counts:?}"
    ))
}

// ---------------------------------------------------------------------------
// metric oracles

fn seg(start_ms: u64, end_ms: u64, label: &str) -> Segment {
    Segment {
        start_ms,
        end_ms,
        label: label.to_string(),
    }
}

fn three_line_case() -> Check {
    // lines of 2 s, 2 s, 6 s; reference A B C, hypothesis X X Z: line B is confused
    let reference = LabeledTimeline::new(vec![
        seg(0, 2000, "A"),
        seg(2000, 4000, "B"),
        seg(4000, 10000, "C"),
    ])
    .unwrap();
    let hypothesis = LabeledTimeline::new(vec![
        seg(0, 2000, "X"),
        seg(2000, 4000, "X"),
        seg(4000, 10000, "Z"),
    ])
    .unwrap();
    let hand_der = 2000.0 / 10000.0;
    // A->X: |A∩X| = 2000, |A∪X| = 4000; B unmapped; C->Z exact
    let hand_jer = ((1.0 - 2000.0 / 4000.0) + 1.0 + 0.0) / 3.0;
    for mode in [ScoringMode::Line, ScoringMode::Timeline] {
        let opts = ScoringOptions { mode, collar_ms: 0 };
        let s = score::<f64>(&reference, &hypothesis, &opts).map_err(|e| e.to_string())?;
        ensure!(
            (s.der - hand_der).abs() < METRIC_TOL,
            "{}: DER {}",
            mode.as_str(),
            s.der
        );
        ensure!(
            (s.spke - hand_der).abs() < METRIC_TOL,
            "{}: SPKE {}",
            mode.as_str(),
            s.spke
        );
        ensure!(
            (s.jer - hand_jer).abs() < METRIC_TOL,
            "{}: JER {}",
            mode.as_str(),
            s.jer
        );
    }
    Ok(format!(
        "DER = SPKE = {hand_der}, JER = {hand_jer} in line and timeline mode"
    ))
}

/// Every injective partial map rows -> cols, zero-weight pairs normalized to
/// unmapped.
fn all_maps(m: &[Vec<u64>]) -> Vec<Vec<Option<usize>>> {
    fn rec(
        m: &[Vec<u64>],
        r: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if r == m.len() {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(m, r + 1, used, cur, out);
        cur.pop();
        for c in 0..used.len() {
            if !used[c] && m[r][c] > 0 {
                used[c] = true;
                cur.push(Some(c));
                rec(m, r + 1, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    let cols = m.first().map_or(0, |r| r.len());
    rec(m, 0, &mut vec![false; cols], &mut Vec::new(), &mut out);
    out
}

fn map_total(m: &[Vec<u64>], map: &[Option<usize>]) -> u64 {
    map.iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| m[r][c]))
        .sum()
}

fn hungarian_vs_exhaustive() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        // small integer range so that ties are common
        let m: Vec<Vec<u64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| rng.random_range(0..=6u64) * 500)
                    .collect()
            })
            .collect();
        let maps = all_maps(&m);
        let best = maps.iter().map(|x| map_total(&m, x)).max().unwrap();
        // lexicographic preference: smaller column first, unmapped last
        let key = |x: &Vec<Option<usize>>| {
            x.iter()
                .map(|c| c.unwrap_or(usize::MAX))
                .collect::<Vec<_>>()
        };
        let oracle = maps
            .iter()
            .filter(|x| map_total(&m, x) == best)
            .min_by_key(|x| key(x))
            .unwrap()
            .clone();
        let as_f64: Vec<Vec<f64>> = m
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        let got = optimal_mapping(&as_f64);
        ensure!(
            map_total(&m, &got) == best,
            "case {case}: total {} vs {best} for {m:?}",
            map_total(&m, &got)
        );
        ensure!(
            got == oracle,
            "case {case}: tie-break {got:?} vs {oracle:?} for {m:?}"
        );
    }
    Ok("200/200 matrices: optimal total and lexicographic tie-break match brute force".into())
}

/// Random timeline with per-speaker disjoint segments inside `[0, span)`.
fn random_timeline(rng: &mut ChaCha8Rng, labels: &[&str], span: u64) -> LabeledTimeline {
    let mut segs = Vec::new();
    for l in labels {
        let mut t = rng.random_range(0..span / 4);
        while t < span {
            let len = rng.random_range(100..3000u64);
            let end = (t + len).min(span);
            if end > t && rng.random_bool(0.7) {
                segs.push(seg(t, end, l));
            }
            t = end + rng.random_range(0..2000u64);
        }
    }
    if segs.is_empty() {
        segs.push(seg(0, span, labels[0]));
    }
    LabeledTimeline::new(segs).unwrap()
}

/// Frame-level (1 ms) DER/SPKE with a brute-force optimal mapping.
fn frame_oracle(
    reference: &LabeledTimeline,
    hypothesis: &LabeledTimeline,
    span: u64,
) -> (f64, f64) {
    let ref_labels = reference.labels();
    let hyp_labels = hypothesis.labels();
    let active = |tl: &LabeledTimeline, labels: &[&str], t: u64| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                tl.segments
                    .iter()
                    .any(|s| s.label == **l && s.start_ms <= t && t < s.end_ms)
            })
            .map(|(i, _)| i)
            .collect()
    };
    let frames: Vec<(Vec<usize>, Vec<usize>)> = (0..span)
        .map(|t| {
            (
                active(reference, &ref_labels, t),
                active(hypothesis, &hyp_labels, t),
            )
        })
        .collect();
    let mut overlap = vec![vec![0u64; hyp_labels.len()]; ref_labels.len()];
    for (r, h) in &frames {
        for &i in r {
            for &j in h {
                overlap[i][j] += 1;
            }
        }
    }
    let best = all_maps(&overlap)
        .iter()
        .map(|x| map_total(&overlap, x))
        .max()
        .unwrap();
    let (mut err, mut conf, mut total) = (0u64, 0u64, 0u64);
    let mut matchable = 0u64;
    for (r, h) in &frames {
        total += r.len() as u64;
        err += r.len().max(h.len()) as u64;
        matchable += r.len().min(h.len()) as u64;
    }
    err -= best;
    conf += matchable - best;
    (err as f64 / total as f64, conf as f64 / total as f64)
}

fn relabel(tl: &LabeledTimeline, rng: &mut ChaCha8Rng) -> LabeledTimeline {
    let labels = tl.labels();
    let mut fresh: Vec<String> = (0..labels.len()).map(|i| format!("h{i}")).collect();
    fresh.shuffle(rng);
    let map: BTreeMap<&str, String> = labels.iter().copied().zip(fresh).collect();
    LabeledTimeline::new(
        tl.segments
            .iter()
            .map(|s| seg(s.start_ms, s.end_ms, &map[s.label.as_str()]))
            .collect(),
    )
    .unwrap()
}

fn relabeling_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let span = 12_000;
    let ref_pool = ["A", "B", "C", "D"];
    let hyp_pool = ["p", "q", "r", "s", "t"];
    for case in 0..100 {
        let nr = rng.random_range(1..=4);
        let nh = rng.random_range(1..=5);
        let reference = random_timeline(&mut rng, &ref_pool[..nr], span);
        let hypothesis = random_timeline(&mut rng, &hyp_pool[..nh], span);
        let opts = ScoringOptions {
            mode: ScoringMode::Timeline,
            collar_ms: 0,
        };
        let base = score::<f64>(&reference, &hypothesis, &opts).map_err(|e| e.to_string())?;
        let (oracle_der, oracle_spke) = frame_oracle(&reference, &hypothesis, span);
        ensure!(
            (base.der - oracle_der).abs() < METRIC_TOL,
            "case {case}: DER {} vs frame oracle {oracle_der}",
            base.der
        );
        ensure!(
            (base.spke - oracle_spke).abs() < METRIC_TOL,
            "case {case}: SPKE {} vs frame oracle {oracle_spke}",
            base.spke
        );
        let renamed = relabel(&hypothesis, &mut rng);
        let other = score::<f64>(&reference, &renamed, &opts).map_err(|e| e.to_string())?;
        for (name, x, y) in [
            ("DER", base.der, other.der),
            ("JER", base.jer, other.jer),
            ("SPKE", base.spke, other.spke),
        ] {
            ensure!(
                (x - y).abs() < METRIC_TOL,
                "case {case}: {name} {x} changes to {y} under relabeling"
            );
        }

        // line mode on shared boundaries
        let n_lines = rng.random_range(1..=12);
        let program = Program::from_cues(
            "p",
            (0..n_lines).map(|i| {
                (
                    i * 1000,
                    i * 1000 + rng.random_range(200..1000u64),
                    String::new(),
                )
            }),
        )
        .unwrap();
        let truth: Vec<String> = (0..n_lines)
            .map(|_| format!("S{}", rng.random_range(0..nr)))
            .collect();
        let hyp: Vec<String> = (0..n_lines)
            .map(|_| format!("x{}", rng.random_range(0..nh)))
            .collect();
        let mut perm: Vec<usize> = (0..nh).collect();
        perm.shuffle(&mut rng);
        let hyp2: Vec<String> = hyp
            .iter()
            .map(|h| format!("y{}", perm[h[1..].parse::<usize>().unwrap()]))
            .collect();
        let r = LabeledTimeline::from_lines(&program, &truth).unwrap();
        let a = score::<f64>(
            &r,
            &LabeledTimeline::from_lines(&program, &hyp).unwrap(),
            &ScoringOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let b = score::<f64>(
            &r,
            &LabeledTimeline::from_lines(&program, &hyp2).unwrap(),
            &ScoringOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            (a.der - b.der).abs() < METRIC_TOL
                && (a.jer - b.jer).abs() < METRIC_TOL
                && (a.spke - b.spke).abs() < METRIC_TOL,
            "case {case}: line-mode metrics change under relabeling"
        );
    }
    Ok("100/100 cases: DER/SPKE equal the 1 ms frame oracle; DER/JER/SPKE unchanged by relabeling (timeline and line mode)".into())
}

// ---------------------------------------------------------------------------
// clustering oracles

/// `b` orthonormal bundle centers with 1..=5 noisy members each, shuffled.
/// Resampled until intra-bundle cosine >= 0.95 and inter-bundle <= 0.05.
fn bundles(rng: &mut ChaCha8Rng, b: usize, dim: usize) -> (Vec<Embedding<f64>>, Vec<usize>) {
    let noise = Normal::new(0.0, 0.01).unwrap();
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::new();
        while centers.len() < b {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for c in &centers {
                let d: f64 = v.iter().zip(c).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                centers.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let mut pts = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..rng.random_range(1..=5) {
                let p: Vec<f64> = c.iter().map(|x| x + noise.sample(rng)).collect();
                pts.push((unit(p), k));
            }
        }
        pts.shuffle(rng);
        let ok = pts.iter().enumerate().all(|(i, (p, k))| {
            pts[..i].iter().all(|(q, l)| {
                let c = cosine_similarity(p, q).unwrap();
                if k == l {
                    c >= 0.95
                } else {
                    c <= 0.05
                }
            })
        });
        if ok {
            return pts.into_iter().unzip();
        }
    }
}

fn clustering_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dim = 16;
    for case in 0..100 {
        let b = rng.random_range(1..=8);
        let (embs, truth) = bundles(&mut rng, b, dim);
        let want = canonical_labels(&truth).0;
        let seed = rng.random::<u64>();
        let spectral = |e: &[Embedding<f64>], k: Option<usize>| {
            let mut p = SpectralParams::with_k_max(50, seed);
            p.k = k;
            spectral_cluster(e, &p).unwrap()
        };
        let got_ahc = ahc(&embs, 0.5).unwrap();
        let got_spec = spectral(&embs, None);
        let got_spec_k = spectral(&embs, Some(b));
        ensure!(
            got_ahc == want,
            "case {case}: AHC {got_ahc:?} vs truth {want:?}"
        );
        ensure!(
            got_spec == want,
            "case {case}: spectral (eigengap) {got_spec:?} vs truth {want:?}"
        );
        ensure!(
            got_spec_k == want,
            "case {case}: spectral (k={b}) {got_spec_k:?} vs truth {want:?}"
        );

        // positive rescaling, one random factor per embedding
        let scaled: Vec<Embedding<f64>> = embs
            .iter()
            .map(|e| e.scaled(rng.random_range(0.1..10.0)))
            .collect();
        ensure!(
            ahc(&scaled, 0.5).unwrap() == got_ahc,
            "case {case}: AHC changes under scaling"
        );
        ensure!(
            spectral(&scaled, None) == got_spec,
            "case {case}: spectral changes under scaling"
        );

        // reordering: partitions agree once mapped back to the original order
        let mut perm: Vec<usize> = (0..embs.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<Embedding<f64>> = perm.iter().map(|&i| embs[i].clone()).collect();
        let expected = canonical_labels(&perm.iter().map(|&i| want[i]).collect::<Vec<_>>()).0;
        ensure!(
            ahc(&shuffled, 0.5).unwrap() == expected,
            "case {case}: AHC partition changes under reordering"
        );
        ensure!(
            spectral(&shuffled, None) == expected,
            "case {case}: spectral partition changes under reordering"
        );
    }
    Ok("100/100 instances recovered by AHC, spectral (eigengap) and spectral (given k); scale and order invariant".into())
}

// ---------------------------------------------------------------------------
// determinism

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = synth_program::<f64>(&noisy(99)).map_err(|e| e.to_string())?;
    let paths = s
        .write_files(&dir.path().join("in"), "episode")
        .map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    for run in ["run1", "run2"] {
        let mut cfg = PipelineConfig {
            paths: paths.clone(),
            rng_seed: 5,
            ..Default::default()
        };
        cfg.paths.output_dir = Some(dir.path().join(run));
        run_from_config::<f64>(&cfg).map_err(|e| e.to_string())?;
        outs.push(dir.path().join(run));
    }
    let mut sizes = Vec::new();
    for name in OUTPUT_FILES {
        let a = std::fs::read(outs[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outs[1].join(name)).map_err(|e| e.to_string())?;
        ensure!(!a.is_empty(), "{name} is empty");
        ensure!(a == b, "{name} differs between runs");
        sizes.push(format!("{name} {} B", a.len()));
    }
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

// ---------------------------------------------------------------------------

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion {
            name: "worked-example fidelity",
            budget: Some(Duration::from_secs(1)),
            run: worked_example,
        },
        Criterion {
            name: "noise-free recovery",
            budget: Some(Duration::from_secs(30)),
            run: noise_free_recovery,
        },
        Criterion {
            name: "off-screen supplementation",
            budget: Some(Duration::from_secs(30)),
            run: offscreen_supplementation,
        },
        Criterion {
            name: "modality trend",
            budget: Some(Duration::from_secs(300)),
            run: modality_trend,
        },
        Criterion {
            name: "interior-optimum sweep",
            budget: None,
            run: sweeps,
        },
        Criterion {
            name: "metric oracles: 3-line case",
            budget: None,
            run: three_line_case,
        },
        Criterion {
            name: "metric oracles: mapping vs exhaustive search",
            budget: None,
            run: hungarian_vs_exhaustive,
        },
        Criterion {
            name: "metric oracles: frame oracle and relabeling invariance",
            budget: None,
            run: relabeling_invariance,
        },
        Criterion {
            name: "clustering oracles",
            budget: None,
            run: clustering_oracles,
        },
        Criterion {
            name: "determinism",
            budget: None,
            run: determinism,
        },
    ];

    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match &outcome {
            Ok(detail) => println!("PASS  {} [{elapsed:.2?}] {detail}", c.name),
            Err(why) => {
                println!("FAIL  {} [{elapsed:.2?}] {why}", c.name);
                failed.push(c.name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
