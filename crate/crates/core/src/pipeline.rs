//! End-to-end diarization of one program: ingest, cluster, register,
//! detect turns, supplement, score.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::{ahc, spectral_cluster, ClusterLabels, SpectralParams};
use crate::config::{ClusteringMethod, Modality, PipelineConfig};
use crate::error::{Error, Result};
use crate::features::{load_features, load_turn_scores, FeatureMap, TurnScoreMap};
use crate::metrics::{score, turn_metrics, LabeledTimeline, ScoringOptions};
use crate::model::{
    cosine_similarity, mean_embedding, Assignment, Embedding, Origin, Program, SpeakerId, Stage,
};
use crate::registration::{assign_initial, build_registry, RegisteredSpeaker, SpeakerRegistry};
use crate::scalar::Real;
use crate::subtitle::{read_annotation, read_srt, write_annotation, write_rttm};
use crate::supplement::{supplement, GroupVerdict, SupplementParams};
use crate::synth::GroundTruth;
use crate::turn::{
    detect_turns, segment_groups, NeutralScorer, ReplayScorer, TurnDecision, TurnScorer,
};

/// Everything the pipeline reads for one program.
#[derive(Debug, Clone)]
pub struct PipelineInputs<T> {
    pub program: Program,
    pub features: FeatureMap<T>,
    /// Used by modality AVT; absent pairs (or an absent file) score neutral.
    pub turn_scores: Option<TurnScoreMap>,
    pub truth: Option<GroundTruth>,
}

impl<T: Real> PipelineInputs<T> {
    /// Loads the files named in `cfg.paths`. Subtitles and features are
    /// required; turn scores are required for modality AVT.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("{key} is not set")))
        };
        let program = read_srt(need(&cfg.paths.subtitles, "paths.subtitles")?)?;
        let features = load_features(need(&cfg.paths.features, "paths.features")?, &program)?;
        let turn_scores = match (&cfg.paths.turn_scores, cfg.modality) {
            (Some(p), _) => Some(load_turn_scores(p)?),
            (None, Modality::AVT) => {
                return Err(Error::Config("modality AVT needs paths.turn_scores".into()))
            }
            (None, _) => None,
        };
        let truth = match &cfg.paths.ground_truth {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
                Some(GroundTruth::read_csv(f)?)
            }
            None => None,
        };
        Ok(Self {
            program,
            features,
            turn_scores,
            truth,
        })
    }
}

/// Metric report for one program.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport<T> {
    pub der: T,
    pub jer: T,
    pub spke: T,
    pub scored_ms: u64,
    pub missed_ms: u64,
    pub false_alarm_ms: u64,
    pub confusion_ms: u64,
    /// `None` without turn decisions or when only one class is present.
    pub turn_auc: Option<T>,
    /// `None` without turn decisions.
    pub turn_f1: Option<T>,
    pub reference_speakers: usize,
    pub hypothesis_speakers: usize,
    pub supplemented_speakers: usize,
}

#[derive(Debug, Clone)]
pub struct DiarizationResult<T> {
    pub modality: Modality,
    pub rng_seed: u64,
    /// One assignment per line, in line-id order.
    pub assignments: Vec<Assignment<T>>,
    pub registry: SpeakerRegistry<T>,
    pub verdicts: Vec<GroupVerdict<T>>,
    pub decisions: Vec<TurnDecision<T>>,
    pub report: Option<MetricReport<T>>,
}

impl<T: Real> DiarizationResult<T> {
    pub fn speaker_labels(&self) -> Vec<String> {
        self.assignments.iter().map(|a| a.speaker.label()).collect()
    }
}

fn cluster<T: Real>(
    embs: &[Embedding<T>],
    cfg: &PipelineConfig,
    k_max: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    match cfg.clustering_method {
        ClusteringMethod::Ahc => ahc(embs, T::lit(cfg.ahc_threshold)),
        ClusteringMethod::Spectral => {
            spectral_cluster(embs, &SpectralParams::with_k_max(k_max, seed))
        }
    }
}

/// Timbre clusters become the speakers; confidence is the cosine to the
/// cluster's mean timbre.
fn audio_only<T: Real>(
    features: &FeatureMap<T>,
    audio: &ClusterLabels,
) -> Result<(SpeakerRegistry<T>, Vec<Assignment<T>>)> {
    let mut speakers = Vec::with_capacity(audio.n);
    for c in 1..=audio.n {
        let support: BTreeSet<usize> = audio
            .labels
            .iter()
            .filter(|(_, &l)| l == c)
            .map(|(&id, _)| id)
            .collect();
        let prototype = mean_embedding(support.iter().map(|id| &features[id].timbre))?;
        speakers.push(RegisteredSpeaker {
            id: SpeakerId::new(c as u32, Origin::AudioCluster),
            prototype,
            support,
        });
    }
    let registry = SpeakerRegistry { speakers };
    let assignments = features
        .values()
        .map(|f| {
            let c = audio.labels[&f.line_id];
            let spk = &registry.speakers[c - 1];
            Ok(Assignment {
                line_id: f.line_id,
                speaker: spk.id,
                confidence: cosine_similarity(&f.timbre, &spk.prototype)?,
                stage: Stage::AudioCluster,
            })
        })
        .collect::<Result<_>>()?;
    Ok((registry, assignments))
}

/// Runs the full flow for the configured modality. Output depends only on
/// `inputs` and `cfg` (including its seed).
pub fn run_pipeline<T: Real>(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs<T>,
) -> Result<DiarizationResult<T>> {
    cfg.validate()?;
    let program = &inputs.program;
    let features = &inputs.features;
    if features.len() != program.len() || features.keys().enumerate().any(|(i, &k)| i != k) {
        return Err(Error::Program(format!(
            "{} feature records for {} lines",
            features.len(),
            program.len()
        )));
    }
    if let Some(t) = &inputs.truth {
        check_truth(program, t)?;
    }

    let mut result = DiarizationResult {
        modality: cfg.modality,
        rng_seed: cfg.rng_seed,
        assignments: Vec::new(),
        registry: SpeakerRegistry::default(),
        verdicts: Vec::new(),
        decisions: Vec::new(),
        report: None,
    };
    if program.is_empty() {
        return Ok(result);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let visual_seed = rng.next_u64();
    let audio_seed = rng.next_u64();

    let line_ids: Vec<usize> = features.keys().copied().collect();
    let timbres: Vec<Embedding<T>> = features.values().map(|f| f.timbre.clone()).collect();
    let audio = ClusterLabels::new(
        &line_ids,
        &cluster(&timbres, cfg, cfg.k_max_audio, audio_seed)?,
    );
    log::debug!("{} audio clusters", audio.n);

    if cfg.modality == Modality::A {
        let (registry, assignments) = audio_only(features, &audio)?;
        result.registry = registry;
        result.assignments = assignments;
    } else {
        let (active_ids, faces): (Vec<usize>, Vec<Embedding<T>>) = features
            .values()
            .filter_map(|f| f.face.clone().map(|face| (f.line_id, face)))
            .unzip();
        if faces.is_empty() {
            return Err(Error::Empty("lines with an active on-screen speaker"));
        }
        let visual = ClusterLabels::new(
            &active_ids,
            &cluster(&faces, cfg, cfg.k_max_visual, visual_seed)?,
        );
        log::debug!("{} visual clusters", visual.n);
        let registry = build_registry(features, &visual, &audio)?;
        let initial = assign_initial(features, &visual, &registry)?;

        let replay;
        let (scorer, w): (&dyn TurnScorer, T) = match cfg.modality {
            Modality::AVT => {
                replay = ReplayScorer::new(inputs.turn_scores.clone().unwrap_or_default());
                (&replay, T::lit(cfg.turn_w))
            }
            _ => (&NeutralScorer, T::zero()),
        };
        let decisions = detect_turns(program, features, scorer, cfg.turn_window, w)?;
        let groups = segment_groups(program.len(), &decisions)?;
        let params = SupplementParams {
            eta: T::lit(cfg.eta),
            epsilon: T::lit(cfg.epsilon),
        };
        let outcome = supplement(&groups, &initial, features, &registry, &params)?;
        log::debug!(
            "{} groups, {} supplemented speakers",
            groups.len(),
            outcome.registry.count(Origin::Supplemented)
        );
        result.registry = outcome.registry;
        result.assignments = outcome.assignments;
        result.verdicts = outcome.verdicts;
        result.decisions = decisions;
    }
    result.assignments.sort_by_key(|a| a.line_id);

    if let Some(truth) = &inputs.truth {
        result.report = Some(evaluate(program, &result, truth, &cfg.scoring_options())?);
    }
    Ok(result)
}

fn check_truth(program: &Program, truth: &GroundTruth) -> Result<()> {
    if truth.labels.len() != program.len() {
        return Err(Error::Program(format!(
            "ground truth covers {} lines, program has {}",
            truth.labels.len(),
            program.len()
        )));
    }
    Ok(())
}

/// Scores a result against per-line ground truth.
pub fn evaluate<T: Real>(
    program: &Program,
    result: &DiarizationResult<T>,
    truth: &GroundTruth,
    options: &ScoringOptions,
) -> Result<MetricReport<T>> {
    check_truth(program, truth)?;
    let hyp_labels = result.speaker_labels();
    let reference = LabeledTimeline::from_lines(program, &truth.labels)?;
    let hypothesis = LabeledTimeline::from_lines(program, &hyp_labels)?;
    let s = score::<T>(&reference, &hypothesis, options)?;

    let (turn_auc, turn_f1) = if result.decisions.is_empty() {
        (None, None)
    } else {
        let pairs: Vec<(T, bool)> = result
            .decisions
            .iter()
            .map(|d| (d.p_std, truth.same_speaker(d.left)))
            .collect();
        let m = turn_metrics(&pairs);
        (m.auc, Some(m.f1))
    };
    Ok(MetricReport {
        der: s.der,
        jer: s.jer,
        spke: s.spke,
        scored_ms: s.scored_ms,
        missed_ms: s.missed_ms,
        false_alarm_ms: s.false_alarm_ms,
        confusion_ms: s.confusion_ms,
        turn_auc,
        turn_f1,
        reference_speakers: truth.speaker_count(),
        hypothesis_speakers: hyp_labels.iter().collect::<BTreeSet<_>>().len(),
        supplemented_speakers: result
            .assignments
            .iter()
            .filter(|a| a.speaker.origin == Origin::Supplemented)
            .map(|a| a.speaker.id)
            .collect::<BTreeSet<_>>()
            .len(),
    })
}

/// Rebuilds a result from files written by [`write_outputs`]; the registry
/// and verdicts are left empty.
pub fn result_from_files<T: Real>(
    program: &Program,
    annotation: &Path,
    turns: Option<&Path>,
) -> Result<DiarizationResult<T>> {
    let f = fs::File::open(annotation).map_err(|e| Error::io(annotation, e))?;
    let mut assignments: Vec<Assignment<T>> = read_annotation::<T, _>(f)?
        .into_iter()
        .map(|r| r.assignment)
        .collect();
    ordered_check(program, &assignments)?;
    assignments.sort_by_key(|a| a.line_id);
    let decisions = match turns {
        Some(p) => read_turns_csv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Vec::new(),
    };
    let modality = if assignments
        .iter()
        .all(|a| a.speaker.origin == Origin::AudioCluster)
    {
        Modality::A
    } else if decisions.is_empty() {
        Modality::AV
    } else {
        Modality::AVT
    };
    Ok(DiarizationResult {
        modality,
        rng_seed: 0,
        assignments,
        registry: SpeakerRegistry::default(),
        verdicts: Vec::new(),
        decisions,
        report: None,
    })
}

fn ordered_check<T>(program: &Program, assignments: &[Assignment<T>]) -> Result<()> {
    let mut seen = vec![false; program.len()];
    for a in assignments {
        match seen.get_mut(a.line_id) {
            Some(s) if !*s => *s = true,
            Some(_) => return Err(Error::Program(format!("line {} assigned twice", a.line_id))),
            None => {
                return Err(Error::Program(format!(
                    "assignment for unknown line {}",
                    a.line_id
                )))
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(line_id) => Err(Error::MissingLine {
            line_id,
            what: "assignment",
        }),
        None => Ok(()),
    }
}

/// Parses the `turns.csv` written by [`write_outputs`].
pub fn read_turns_csv<T: Real>(text: &str) -> Result<Vec<TurnDecision<T>>> {
    #[derive(serde::Deserialize)]
    struct Row {
        left_line: usize,
        right_line: usize,
        p_alm: f64,
        s_tim: f64,
        p_std: f64,
        same_speaker: bool,
    }
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
        let r = row?;
        if r.right_line != r.left_line + 1 || r.left_line != out.len() {
            return Err(Error::MissingDecision(out.len(), out.len() + 1));
        }
        out.push(TurnDecision {
            left: r.left_line,
            right: r.right_line,
            p_alm: T::lit(r.p_alm),
            s_tim: T::lit(r.s_tim),
            p_std: T::lit(r.p_std),
            same_speaker: r.same_speaker,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    W,
    Eta,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "w" | "turn.w" => Some(SweepParam::W),
            "eta" | "supplement.eta" => Some(SweepParam::Eta),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::W => "w",
            SweepParam::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow<T> {
    pub value: f64,
    pub der: T,
    pub jer: T,
    pub turn_f1: Option<T>,
    pub supplemented_speakers: usize,
}

/// One pipeline run per grid value, everything else (seed included) fixed.
/// Requires ground truth.
pub fn sweep<T: Real>(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs<T>,
    param: SweepParam,
    grid: &[f64],
) -> Result<Vec<SweepRow<T>>> {
    if inputs.truth.is_none() {
        return Err(Error::Config("sweep needs ground truth".into()));
    }
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    grid.iter()
        .map(|&value| {
            let mut c = cfg.clone();
            match param {
                SweepParam::W => c.turn_w = value,
                SweepParam::Eta => c.eta = value,
            }
            let r = run_pipeline(&c, inputs)?;
            let m = r.report.expect("truth present");
            Ok(SweepRow {
                value,
                der: m.der,
                jer: m.jer,
                turn_f1: m.turn_f1,
                supplemented_speakers: m.supplemented_speakers,
            })
        })
        .collect()
}

fn fmt_opt<T: Real>(v: Option<T>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn sweep_csv<T: Real>(param: SweepParam, rows: &[SweepRow<T>]) -> String {
    let mut out = format!("{},der,jer,turn_f1,supplemented_speakers\n", param.as_str());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            r.value,
            r.der,
            r.jer,
            fmt_opt(r.turn_f1),
            r.supplemented_speakers
        );
    }
    out
}

/// `metric,value` CSV. Absent values are empty fields.
pub fn report_csv<T: Real>(result: &DiarizationResult<T>, program: &Program) -> String {
    let mut rows: Vec<(&str, String)> = vec![
        ("program_id", program.program_id.clone()),
        ("modality", result.modality.to_string()),
        ("rng_seed", result.rng_seed.to_string()),
        ("lines", program.len().to_string()),
        ("speakers", result.registry.len().to_string()),
        (
            "visual_anchor_speakers",
            result.registry.count(Origin::VisualAnchor).to_string(),
        ),
        (
            "supplemented_speakers",
            result.registry.count(Origin::Supplemented).to_string(),
        ),
        ("groups", result.verdicts.len().to_string()),
    ];
    if let Some(m) = &result.report {
        rows.extend(metric_rows(m));
    }
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

fn metric_rows<T: Real>(m: &MetricReport<T>) -> Vec<(&'static str, String)> {
    vec![
        ("der", format!("{:.6}", m.der)),
        ("jer", format!("{:.6}", m.jer)),
        ("spke", format!("{:.6}", m.spke)),
        ("scored_ms", m.scored_ms.to_string()),
        ("missed_ms", m.missed_ms.to_string()),
        ("false_alarm_ms", m.false_alarm_ms.to_string()),
        ("confusion_ms", m.confusion_ms.to_string()),
        ("turn_auc", fmt_opt(m.turn_auc)),
        ("turn_f1", fmt_opt(m.turn_f1)),
        ("reference_speakers", m.reference_speakers.to_string()),
        ("hypothesis_speakers", m.hypothesis_speakers.to_string()),
        ("supplemented_speakers", m.supplemented_speakers.to_string()),
    ]
}

/// `metric,value` CSV of a metric report alone.
pub fn metrics_csv<T: Real>(m: &MetricReport<T>) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in metric_rows(m) {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn summary_text<T: Real>(result: &DiarizationResult<T>, program: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "program {} ({} lines)",
        program.program_id,
        program.len()
    );
    let _ = writeln!(
        out,
        "modality {}, seed {}",
        result.modality, result.rng_seed
    );
    let _ = writeln!(
        out,
        "speakers: {} ({} visual-anchored, {} supplemented, {} audio clusters)",
        result.registry.len(),
        result.registry.count(Origin::VisualAnchor),
        result.registry.count(Origin::Supplemented),
        result.registry.count(Origin::AudioCluster),
    );
    if !result.decisions.is_empty() {
        let turns = result.decisions.iter().filter(|d| !d.same_speaker).count();
        let _ = writeln!(
            out,
            "turns: {turns} of {} adjacent pairs",
            result.decisions.len()
        );
    }
    if let Some(m) = &result.report {
        let _ = writeln!(
            out,
            "DER {:.4}  JER {:.4}  SPKE {:.4}",
            m.der, m.jer, m.spke
        );
        if let Some(f1) = m.turn_f1 {
            let auc = m.turn_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(out, "turn AUC {auc}  F1 {f1:.4}");
        }
        let _ = writeln!(
            out,
            "speaker count: reference {}, hypothesis {}",
            m.reference_speakers, m.hypothesis_speakers
        );
    }
    out
}

pub fn verdicts_csv<T: Real>(verdicts: &[GroupVerdict<T>]) -> String {
    let mut out = String::from("first_line,last_line,main_speaker,sigma_g,action\n");
    for v in verdicts {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{}",
            v.first,
            v.last,
            v.main_speaker.id,
            v.sigma_g,
            v.action.label()
        );
    }
    out
}

pub fn turns_csv<T: Real>(decisions: &[TurnDecision<T>]) -> String {
    let mut out = String::from("left_line,right_line,p_alm,s_tim,p_std,same_speaker\n");
    for d in decisions {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            d.left, d.right, d.p_alm, d.s_tim, d.p_std, d.same_speaker
        );
    }
    out
}

/// Names of the files [`write_outputs`] produces.
pub const OUTPUT_FILES: [&str; 6] = [
    "annotation.csv",
    "output.rttm",
    "report.csv",
    "summary.txt",
    "verdicts.csv",
    "turns.csv",
];

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes every file in [`OUTPUT_FILES`] under `dir` (created if missing).
pub fn write_outputs<T: Real>(
    dir: &Path,
    program: &Program,
    result: &DiarizationResult<T>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut annotation = Vec::new();
    write_annotation(program, &result.assignments, &mut annotation)?;
    let files: [(&str, Vec<u8>); 6] = [
        ("annotation.csv", annotation),
        (
            "output.rttm",
            write_rttm(program, &result.assignments, &program.program_id)?.into_bytes(),
        ),
        ("report.csv", report_csv(result, program).into_bytes()),
        ("summary.txt", summary_text(result, program).into_bytes()),
        ("verdicts.csv", verdicts_csv(&result.verdicts).into_bytes()),
        ("turns.csv", turns_csv(&result.decisions).into_bytes()),
    ];
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(())
}

/// Loads inputs from `cfg.paths`, runs, and writes outputs when
/// `paths.output_dir` is set.
pub fn run_from_config<T: Real>(
    cfg: &PipelineConfig,
) -> Result<(PipelineInputs<T>, DiarizationResult<T>)> {
    cfg.validate()?;
    let inputs = PipelineInputs::<T>::load(cfg)?;
    let result = run_pipeline(cfg, &inputs)?;
    if let Some(dir) = &cfg.paths.output_dir {
        write_outputs(dir, &inputs.program, &result)?;
    }
    Ok((inputs, result))
}
