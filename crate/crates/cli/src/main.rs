mod config;

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alertness::classifier::{self, KnnModel, DEFAULT_K};
use alertness::dataset::{
    self, BuildOptions, Dataset, DatasetManifest, ManifestEntry, SplitMode, SplitSpec,
};
use alertness::features::{compute_features, fit_baseline, BaselineStats, FeatureMask};
use alertness::io::{self as wire, FeatureRecord, FrameReader, TruthRecord};
use alertness::pipeline::{DecisionMode, Monitor};
use alertness::synth;
use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(
    name = "alertness",
    version,
    about = "Alertness classification from facial landmark streams"
)]
struct Cli {
    /// TOML file with [monitor], [split], [synth] and [sampling] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-frame feature dump (JSON Lines, or CSV for a .csv output).
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Normalize against this baseline file.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Fit a baseline from the first 30 valid frames of an alert recording.
    Baseline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "subject")]
        subject: String,
        /// Apply the 1 fps sampling from the 40 s mark before fitting.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value_t = alertness::features::DEFAULT_MIN_BASELINE_FRAMES)]
        min_frames: usize,
    },
    /// Build the dataset, train a model on the training split and report test metrics.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "MAR,MOE")]
        mask: FeatureMask,
        #[arg(long, default_value_t = DEFAULT_K, value_parser = positive)]
        k: usize,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional metrics report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a saved model on the test split of a manifest.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame predictions for a landmark stream.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Baseline to normalize with; defaults to the one stored in the model.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and F1 for every K from 1 to --kmax.
    SweepK {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "EAR,MAR,PUC,MOE")]
        mask: FeatureMask,
        #[arg(long, default_value_t = 45, value_parser = positive)]
        kmax: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics for all 15 feature combinations at a fixed K.
    SweepFeatures {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_K, value_parser = positive)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-state feature means, standard deviations and deltas.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of frames with a detected face and valid features.
    DetectionRate {
        #[arg(
            long = "in",
            conflicts_with = "manifest",
            required_unless_present = "manifest"
        )]
        input: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the streaming monitor over a landmark stream ("-" reads standard input).
    Monitor {
        #[arg(long = "in", default_value = "-")]
        input: String,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Event output ("-" writes standard output).
        #[arg(long, default_value = "-")]
        events: String,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Generate a synthetic corpus: sessions, truth sidecars and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20, value_parser = positive)]
        subjects: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write the train/test assignment of every sample.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Map low-vigilant (label 5) recordings to drowsy instead of dropping them.
    #[arg(long)]
    include_low_vigilant: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Frame,
    Subject,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Knn,
    Deviation,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if let Command::Monitor {
        mode: Some(ModeArg::Knn),
        model: None,
        ..
    } = &cli.command
    {
        Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                "--mode knn requires --model",
            )
            .exit();
    }
    let config = match CliConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn run(command: Command, config: &CliConfig) -> Result<()> {
    match command {
        Command::Features {
            input,
            out,
            baseline,
        } => cmd_features(&input, &out, baseline.as_deref()),
        Command::Baseline {
            input,
            out,
            subject,
            sample,
            min_frames,
        } => cmd_baseline(config, &input, &out, &subject, sample, min_frames),
        Command::Train {
            data,
            mask,
            k,
            out,
            report,
        } => cmd_train(config, &data, mask, k, &out, report.as_deref()),
        Command::Evaluate { data, model, out } => {
            cmd_evaluate(config, &data, &model, out.as_deref())
        }
        Command::Predict {
            model,
            input,
            baseline,
            out,
        } => cmd_predict(&model, &input, baseline.as_deref(), &out),
        Command::SweepK {
            data,
            mask,
            kmax,
            out,
        } => cmd_sweep_k(config, &data, mask, kmax, &out),
        Command::SweepFeatures { data, k, out } => cmd_sweep_features(config, &data, k, &out),
        Command::Stats { data, out } => cmd_stats(config, &data, out.as_deref()),
        Command::DetectionRate { input, manifest } => {
            cmd_detection_rate(input.as_deref(), manifest.as_deref())
        }
        Command::Monitor {
            input,
            model,
            events,
            mode,
        } => cmd_monitor(config, &input, model.as_deref(), &events, mode),
        Command::Synth {
            out,
            subjects,
            seed,
            duration,
        } => cmd_synth(config, &out, subjects, seed, duration),
        Command::Split { data, out } => cmd_split(config, &data, &out),
    }
}

fn split_spec(config: &CliConfig, data: &DataArgs) -> Result<SplitSpec> {
    let mut spec = config.split;
    if let Some(seed) = data.seed {
        spec.seed = seed;
    }
    match data.split {
        Some(SplitArg::Frame) => spec.mode = SplitMode::FrameLevel,
        Some(SplitArg::Subject) => spec.mode = SplitMode::SubjectLevel,
        None => {}
    }
    spec.validate()?;
    Ok(spec)
}

fn load_dataset(config: &CliConfig, data: &DataArgs) -> Result<Dataset> {
    let spec = split_spec(config, data)?;
    let manifest = DatasetManifest::load(&data.manifest)
        .with_context(|| format!("loading manifest {}", data.manifest.display()))?;
    let sessions = manifest.load_sessions()?;
    let options = BuildOptions {
        sampling: config.sampling,
        include_low_vigilant: data.include_low_vigilant,
        ..Default::default()
    };
    let ds = dataset::build_dataset(&sessions, &spec, &options)?;
    info!(
        "dataset: {} sessions, {} train / {} test samples ({:?}, seed {})",
        sessions.len(),
        ds.train.len(),
        ds.test.len(),
        spec.mode,
        spec.seed
    );
    Ok(ds)
}

fn open_frames(path: &Path) -> Result<FrameReader<BufReader<std::fs::File>>> {
    Ok(FrameReader::new(
        wire::open(path)?,
        path.display().to_string(),
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    wire::save_json(path, value)?;
    Ok(())
}

fn cmd_features(input: &Path, out: &Path, baseline: Option<&Path>) -> Result<()> {
    let baseline: Option<BaselineStats> = baseline.map(wire::load_json).transpose()?;
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for frame in open_frames(input)? {
        let frame = frame?;
        let Ok(raw) = compute_features(&frame) else {
            skipped += 1;
            continue;
        };
        let v = match &baseline {
            Some(b) => b.normalize(&raw)?,
            None => raw,
        };
        rows.push(FeatureRecord::new(&frame, &v));
    }
    let w = wire::create(out)?;
    if out.extension().is_some_and(|e| e == "csv") {
        wire::write_feature_csv(w, &rows)?;
    } else {
        wire::write_feature_jsonl(w, &rows)?;
    }
    info!(
        "{} frames written, {skipped} without valid features",
        rows.len()
    );
    Ok(())
}

fn cmd_baseline(
    config: &CliConfig,
    input: &Path,
    out: &Path,
    subject: &str,
    sample: bool,
    min_frames: usize,
) -> Result<()> {
    let mut frames = wire::read_frames(input)?;
    if sample {
        let sampled = dataset::sample_frames(&frames, &config.sampling);
        if let Some(w) = sampled.warning {
            warn!("{w}");
        }
        frames = sampled.frames;
    }
    let valid: Vec<_> = frames
        .iter()
        .filter_map(|f| compute_features(f).ok())
        .collect();
    let baseline = fit_baseline(&valid, subject, min_frames)?;
    write_json(out, &baseline)
}

fn cmd_train(
    config: &CliConfig,
    data: &DataArgs,
    mask: FeatureMask,
    k: usize,
    out: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(config, data)?;
    let model = classifier::train(&ds.train_vectors(), mask, k)?;
    wire::save_model(out, &model)?;
    let metrics = classifier::evaluate(&model, &ds.test_vectors())?;
    writeln!(std::io::stdout(), "mask {mask}, k {k}\n{metrics}")?;
    if let Some(path) = report {
        write_json(path, &metrics)?;
    }
    Ok(())
}

fn cmd_evaluate(
    config: &CliConfig,
    data: &DataArgs,
    model: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let model = wire::load_model(model)?;
    let ds = load_dataset(config, data)?;
    let metrics = classifier::evaluate(&model, &ds.test_vectors())?;
    writeln!(std::io::stdout(), "{metrics}")?;
    if let Some(path) = out {
        write_json(path, &metrics)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord {
    frame: u64,
    t_ms: u64,
    state: &'static str,
    score: f64,
}

fn cmd_predict(model: &Path, input: &Path, baseline: Option<&Path>, out: &Path) -> Result<()> {
    let model: KnnModel = wire::load_model(model)?;
    let baseline: BaselineStats = match baseline {
        Some(p) => wire::load_json(p)?,
        None => match &model.baseline {
            Some(b) => b.clone(),
            None => bail!("the model carries no baseline; pass --baseline"),
        },
    };
    let mut w = wire::create(out)?;
    for frame in open_frames(input)? {
        let frame = frame?;
        let Ok(raw) = compute_features(&frame) else {
            continue;
        };
        let p = model.predict(&baseline.normalize(&raw)?)?;
        serde_json::to_writer(
            &mut w,
            &PredictionRecord {
                frame: frame.frame_index,
                t_ms: frame.t_ms,
                state: p.label.as_str(),
                score: p.drowsy_fraction,
            },
        )?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep_k(
    config: &CliConfig,
    data: &DataArgs,
    mask: FeatureMask,
    kmax: usize,
    out: &Path,
) -> Result<()> {
    if kmax == 0 {
        bail!("--kmax must be at least 1");
    }
    let ds = load_dataset(config, data)?;
    let sweep = classifier::sweep_k(&ds.train_vectors(), &ds.test_vectors(), mask, 1..=kmax)?;
    dataset::write_k_sweep_csv(wire::create(out)?, &sweep.rows)?;
    writeln!(
        std::io::stdout(),
        "mask {} selected k = {} (accuracy {:.4})",
        sweep.mask,
        sweep.best_k,
        sweep.best_accuracy
    )?;
    Ok(())
}

fn cmd_sweep_features(config: &CliConfig, data: &DataArgs, k: usize, out: &Path) -> Result<()> {
    let ds = load_dataset(config, data)?;
    let rows = dataset::sweep_features(&ds.train_vectors(), &ds.test_vectors(), k)?;
    dataset::write_sweep_csv(wire::create(out)?, &rows)?;
    writeln!(
        std::io::stdout(),
        "{:<16} {:>8} {:>9} {:>7} {:>7}",
        "mask",
        "accuracy",
        "precision",
        "recall",
        "f1"
    )?;
    for r in &rows {
        let m = &r.metrics;
        writeln!(
            std::io::stdout(),
            "{:<16} {:>8.4} {:>9.4} {:>7.4} {:>7.4}",
            r.mask.to_string(),
            m.accuracy,
            m.precision,
            m.recall,
            m.f1
        )?;
    }
    Ok(())
}

fn cmd_stats(config: &CliConfig, data: &DataArgs, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(config, data)?;
    let samples: Vec<_> = ds.all_samples().map(|s| (s.raw, s.label)).collect();
    let stats = dataset::state_statistics(&samples)?;
    writeln!(std::io::stdout(), "{stats}")?;
    if let Some(path) = out {
        write_json(path, &stats)?;
    }
    Ok(())
}

fn cmd_detection_rate(input: Option<&Path>, manifest: Option<&Path>) -> Result<()> {
    let targets: Vec<(String, PathBuf)> = match (input, manifest) {
        (Some(p), _) => vec![(p.display().to_string(), p.to_path_buf())],
        (None, Some(m)) => {
            let manifest = DatasetManifest::load(m)?;
            manifest
                .entries
                .iter()
                .map(|e: &ManifestEntry| (e.session.clone(), manifest.session_path(e)))
                .collect()
        }
        (None, None) => bail!("either --in or --manifest is required"),
    };
    for (name, path) in targets {
        let frames = wire::read_frames(&path)?;
        let rate = dataset::detection_rate(&frames)?;
        writeln!(std::io::stdout(), "{name}\t{rate:.4}")?;
    }
    Ok(())
}

fn cmd_monitor(
    config: &CliConfig,
    input: &str,
    model: Option<&Path>,
    events: &str,
    mode: Option<ModeArg>,
) -> Result<()> {
    let mut monitor_config = config.monitor.clone();
    monitor_config.decision_mode = match (mode, model) {
        (Some(ModeArg::Knn), _) => DecisionMode::Knn,
        (Some(ModeArg::Deviation), _) => DecisionMode::BaselineDeviation,
        (None, Some(_)) => DecisionMode::Knn,
        (None, None) => DecisionMode::BaselineDeviation,
    };
    monitor_config.validate()?;
    let model = model.map(wire::load_model).transpose()?;
    let mut monitor = Monitor::new(monitor_config, model.as_ref())?;

    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(wire::open(Path::new(input))?)
    };
    let mut out: Box<dyn Write> = if events == "-" {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(wire::create(Path::new(events))?)
    };
    for frame in FrameReader::new(reader, input) {
        for event in monitor.push(&frame?)? {
            wire::write_event(&mut out, &event)?;
        }
        out.flush()?;
    }
    monitor.finish()?;
    Ok(())
}

fn cmd_synth(
    config: &CliConfig,
    out: &Path,
    subjects: usize,
    seed: Option<u64>,
    duration: Option<f64>,
) -> Result<()> {
    let mut profile = config.synth.clone();
    if let Some(seed) = seed {
        profile.seed = seed;
    }
    if let Some(d) = duration {
        profile.duration_s = d;
    }
    profile.validate()?;
    let corpus = synth::generate_corpus(&profile, subjects)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for c in &corpus {
        let file = format!("{}.jsonl", c.meta.session_id);
        wire::write_frames(wire::create(&out.join(&file))?, &c.session.frames)?;
        write_json(
            &out.join(format!("{}.truth.json", c.meta.session_id)),
            &TruthRecord {
                session: c.meta.session_id.clone(),
                label: c.session.label,
                profile: c.profile.clone(),
            },
        )?;
        entries.push(ManifestEntry {
            subject: c.meta.subject_id.clone(),
            session: c.meta.session_id.clone(),
            label: c.session.label.into(),
            landmarks: file,
            fps: c.meta.fps_nominal,
        });
    }
    write_json(
        &out.join("manifest.json"),
        &DatasetManifest {
            root: PathBuf::from("."),
            entries,
        },
    )?;
    info!("{} sessions written to {}", corpus.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SplitEntry<'a> {
    session: &'a str,
    frame: u64,
    label: alertness::AlertnessLabel,
}

#[derive(Serialize)]
struct SplitListing<'a> {
    train: Vec<SplitEntry<'a>>,
    test: Vec<SplitEntry<'a>>,
}

fn cmd_split(config: &CliConfig, data: &DataArgs, out: &Path) -> Result<()> {
    let ds = load_dataset(config, data)?;
    fn list(samples: &[dataset::Sample]) -> Vec<SplitEntry<'_>> {
        samples
            .iter()
            .map(|s| SplitEntry {
                session: &s.session_id,
                frame: s.frame_index,
                label: s.label,
            })
            .collect()
    }
    write_json(
        out,
        &SplitListing {
            train: list(&ds.train),
            test: list(&ds.test),
        },
    )
}
