//! Command-line front end: `synth`, `train`, `estimate`, `eval`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::decision::MIN_SAMPLES_PER_CELL;
use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, write_reports, EvalOptions, DEFAULT_THETA_MAX, DEFAULT_THETA_STEPS,
};
use crate::features::FeatureSet;
use crate::pipeline::{analyze_file, decide_file, dump_features, train_model, PipelineConfig};
use crate::signal_io::{
    read_f0_csv, read_model, read_wav, write_contour_csv, write_model_with_header,
};
use crate::synth::{generate_corpus, CorpusConfig, CorpusManifest, Preset, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "mvf",
    version,
    about = "Maximum voiced frequency estimation from harmonic phase coherence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a semi-synthetic corpus with known MVF and a manifest.
    Synth(SynthArgs),
    /// Fit the per-feature Gaussians on a manifest's dev split.
    Train(TrainArgs),
    /// Estimate the MVF contour of one file.
    Estimate(EstimateArgs),
    /// Score feature subsets on a manifest's test split.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// speech_like, singing_like or mixed
    #[arg(long, default_value = "mixed")]
    preset: String,
    /// Number of base files (each rendered at 7 MVF values).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the manifest goes to <out>/manifest.csv.
    #[arg(long)]
    out: PathBuf,
    /// Seconds per file.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Features to model, e.g. `as,ihpc`.
    #[arg(long, default_value = "as,ihpc,icpc")]
    features: String,
    #[arg(long)]
    out: PathBuf,
    /// Minimum labeled samples per feature and hypothesis.
    #[arg(long, default_value_t = MIN_SAMPLES_PER_CELL)]
    min_count: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    f0: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    features: Option<String>,
    /// none, median or ma
    #[arg(long)]
    smooth: Option<String>,
    #[arg(long)]
    median_order: Option<usize>,
    #[arg(long)]
    ma_halfwidth_ms: Option<f64>,
    /// Key-value file overriding defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for per-frame feature CSVs.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Feature subset to score; repeat for several, or `all` for the five
    /// standard subsets.
    #[arg(long, default_value = "all")]
    features: Vec<String>,
    /// Directory receiving report.csv and roc_<method>.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA_MAX)]
    theta_max: f64,
    #[arg(long, default_value_t = DEFAULT_THETA_STEPS)]
    theta_steps: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on validation errors, 2 on I/O errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Estimate(a) => estimate(a),
        Command::Eval(a) => eval(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = path {
        cfg.apply_file(p)?;
    }
    Ok(cfg)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = CorpusConfig::new(a.preset.parse::<Preset>()?, a.n, a.seed);
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    let manifest = generate_corpus(&a.out, &cfg)?;
    info!(
        "wrote {} files and {}",
        manifest.entries.len(),
        a.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = base_config(a.config.as_deref())?;
    let features: FeatureSet = a.features.parse()?;
    let manifest = CorpusManifest::read(&a.manifest)?;
    let model = train_model(&manifest, features, cfg.window_periods, a.min_count)?;
    let name = a.manifest.file_name().unwrap_or(a.manifest.as_os_str());
    let header = format!(
        "trained on the dev split of {}, features {}, min count {}",
        Path::new(name).display(),
        features,
        a.min_count
    );
    write_model_with_header(&model, &[&header], &a.out)
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    if let Some(f) = &a.features {
        cfg.set("features", f)?;
    }
    if let Some(s) = &a.smooth {
        cfg.set("smooth", s)?;
    }
    if let Some(o) = a.median_order {
        cfg.smoother.median_order = o;
    }
    if let Some(ms) = a.ma_halfwidth_ms {
        cfg.smoother.ma_halfwidth = ms / 1000.0;
    }
    if let Some(m) = a.model {
        cfg.model_path = Some(m);
    }
    cfg.validate()?;
    let model_path = cfg.model_path.clone().ok_or_else(|| {
        Error::Validation("no model given (--model or `model` config key)".into())
    })?;
    let model = read_model(&model_path)?.restricted(cfg.enabled_features)?;

    let audio = read_wav(&a.wav)?;
    let f0 = read_f0_csv(&a.f0)?;
    let analysis = analyze_file(&audio, &f0, cfg.window_periods, cfg.enabled_features);
    if let Some(dir) = &a.dump_features {
        dump_features(&analysis, dir)?;
    }
    let est = decide_file(&analysis, &model, &cfg.smoother)?;
    let d = &est.diagnostics;
    info!(
        "{} frames, {} voiced, {} undecidable, {} analyses",
        d.frames, d.voiced_frames, d.undecidable_frames, d.frame_analyses
    );
    if d.suspicious_frames > 0 {
        warn!(
            "{} frames have a candidate count inconsistent with their F0 (octave error?)",
            d.suspicious_frames
        );
    }
    write_contour_csv(&est.smoothed, &a.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = base_config(a.config.as_deref())?;
    let mut sets = Vec::new();
    for f in &a.features {
        if f.trim() == "all" {
            sets.extend_from_slice(&FeatureSet::COMPARED);
        } else {
            sets.push(f.parse()?);
        }
    }
    let manifest = CorpusManifest::read(&a.manifest)?;
    let model = read_model(&a.model)?;
    let opts = EvalOptions {
        theta_max: a.theta_max,
        theta_steps: a.theta_steps,
    };
    let reports = compare_methods(&manifest, &sets, &model, &cfg, &opts)?;
    for r in &reports {
        for (class, s) in &r.by_class {
            info!(
                "{} {class}: AUC {:.4} over {} frames",
                r.method.label(),
                s.auc,
                s.n_frames
            );
        }
    }
    write_reports(&reports, &a.out)
}
