use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use subdiar::config::PipelineConfig;
use subdiar::metrics::{ScoringMode, ScoringOptions};
use subdiar::pipeline::{
    evaluate, metrics_csv, result_from_files, run_from_config, summary_text, sweep, sweep_csv,
    write_atomic, PipelineInputs, SweepParam,
};
use subdiar::subtitle::read_srt;
use subdiar::synth::{synth_program, GroundTruth, SynthConfig};

#[derive(Parser)]
#[command(
    name = "subdiar",
    version,
    about = "Speaker diarization for subtitled programs"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diarize one program and write annotation, RTTM and report files.
    Run(ConfigArgs),
    /// Re-run one program over a grid of `w` or `eta` values.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Parameter to vary: w or eta.
        #[arg(long)]
        param: String,
        /// Comma-separated grid, e.g. 0,0.25,0.45,0.75,1
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an annotation file against per-line ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic program with features, turn scores and truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with dotted `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    subtitles: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    turn_scores: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// A, AV or AVT.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        let paths = [
            ("paths.subtitles", &self.subtitles),
            ("paths.features", &self.features),
            ("paths.turn_scores", &self.turn_scores),
            ("paths.ground_truth", &self.truth),
            ("paths.output_dir", &self.out_dir),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                cfg.set(key, &p.to_string_lossy())?;
            }
        }
        if let Some(m) = &self.modality {
            cfg.set("modality", m)?;
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    subtitles: PathBuf,
    /// Annotation CSV written by `run`.
    #[arg(long)]
    annotation: PathBuf,
    /// Ground-truth CSV (`line_id,speaker`).
    #[arg(long)]
    truth: PathBuf,
    /// turns.csv written by `run`, for turn AUC/F1.
    #[arg(long)]
    turns: Option<PathBuf>,
    /// line or timeline.
    #[arg(long, default_value = "line")]
    mode: String,
    /// Collar half-width in seconds (timeline mode).
    #[arg(long, default_value_t = 0.0)]
    collar: f64,
    /// Write the report CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// File stem of the subtitle file (also the program id).
    #[arg(long, default_value = "synth")]
    stem: String,
    #[arg(long, default_value_t = 5)]
    n_speakers: usize,
    #[arg(long, default_value_t = 100)]
    n_lines: usize,
    #[arg(long, default_value_t = 32)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    face_noise_std: f64,
    #[arg(long, default_value_t = 0.0)]
    timbre_noise_std: f64,
    #[arg(long, default_value_t = 0.0)]
    offscreen_rate: f64,
    #[arg(long, default_value_t = 0)]
    unregistered_offscreen_speakers: usize,
    #[arg(long, default_value_t = 1.0)]
    turn_score_accuracy: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if cfg.paths.output_dir.is_none() {
        log::warn!("paths.output_dir not set; nothing will be written");
    }
    let (inputs, result) = run_from_config::<f64>(&cfg)?;
    print!("{}", summary_text(&result, &inputs.program));
    Ok(())
}

fn run_sweep(config: &ConfigArgs, param: &str, grid: &[f64], out: Option<&Path>) -> Result<()> {
    let cfg = config.resolve()?;
    let param =
        SweepParam::parse(param).with_context(|| format!("unknown sweep parameter {param:?}"))?;
    if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        bail!("grid value {v} outside [0, 1]");
    }
    let inputs = PipelineInputs::<f64>::load(&cfg)?;
    let rows = sweep(&cfg, &inputs, param, grid)?;
    emit(&sweep_csv(param, &rows), out)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mode =
        ScoringMode::parse(&args.mode).with_context(|| format!("unknown mode {:?}", args.mode))?;
    if !(args.collar >= 0.0 && args.collar.is_finite()) {
        bail!("collar must be finite and non-negative");
    }
    let options = ScoringOptions {
        mode,
        collar_ms: (args.collar * 1000.0).round() as u64,
    };
    let program = read_srt(&args.subtitles)?;
    let result = result_from_files::<f64>(&program, &args.annotation, args.turns.as_deref())?;
    let truth_file =
        fs::File::open(&args.truth).with_context(|| format!("opening {}", args.truth.display()))?;
    let truth = GroundTruth::read_csv(truth_file)?;
    let report = evaluate(&program, &result, &truth, &options)?;
    emit(&metrics_csv(&report), args.out.as_deref())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_speakers: args.n_speakers,
        n_lines: args.n_lines,
        embedding_dim: args.embedding_dim,
        face_noise_std: args.face_noise_std,
        timbre_noise_std: args.timbre_noise_std,
        offscreen_rate: args.offscreen_rate,
        unregistered_offscreen_speakers: args.unregistered_offscreen_speakers,
        turn_score_accuracy: args.turn_score_accuracy,
        rng_seed: args.seed,
    };
    let s = synth_program::<f64>(&cfg)?;
    let paths = s.write_files(&args.out_dir, &args.stem)?;
    // config next to the data, with paths relative to it
    let mut pipeline = PipelineConfig::default();
    let name = |p: &Option<PathBuf>| {
        p.as_ref()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    pipeline.set("paths.subtitles", &name(&paths.subtitles))?;
    pipeline.set("paths.features", &name(&paths.features))?;
    pipeline.set("paths.turn_scores", &name(&paths.turn_scores))?;
    pipeline.set("paths.ground_truth", &name(&paths.ground_truth))?;
    pipeline.set("paths.output_dir", "out")?;
    let conf = args.out_dir.join("pipeline.conf");
    write_atomic(&conf, pipeline.to_text().as_bytes())?;
    println!(
        "wrote {} lines, {} speakers ({} never on screen) to {}",
        s.program.len(),
        s.truth.speaker_count(),
        s.offscreen_speakers.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep {
            config,
            param,
            grid,
            out,
        } => run_sweep(config, param, grid, out.as_deref()),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Synth(args) => run_synth(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
