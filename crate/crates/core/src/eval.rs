//! Threshold-sweep accuracy curves and normalized AUC.
//!
//! Accuracy at threshold `theta` is the fraction of voiced frames whose MVF
//! error is at most `theta`. The AUC is the trapezoidal area under that
//! curve over `[0, theta_max]` divided by `theta_max`, so a perfect
//! estimator scores exactly 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::decision::GaussianModel;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::pipeline::{analyze_file, decide_file, load_entry, PipelineConfig};
use crate::signal_io::MvfContour;
use crate::synth::{CorpusManifest, Split, VoiceClass};

pub const DEFAULT_THETA_MAX: f64 = 1500.0;
pub const DEFAULT_THETA_STEPS: usize = 151;

/// One scored file: the estimated contour, which frames are voiced, and the
/// constant ground-truth MVF.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEstimate {
    pub name: String,
    pub voice_class: VoiceClass,
    pub contour: MvfContour,
    pub voiced: Vec<bool>,
    pub truth_hz: f64,
}

impl FileEstimate {
    fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.contour
            .values
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(move |(est, _)| (est - self.truth_hz).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub auc: f64,
    /// (theta Hz, accuracy), non-decreasing in accuracy.
    pub roc: Vec<(f64, f64)>,
    pub n_frames: usize,
    /// Mean absolute error per file, Hz.
    pub per_file_mae: Vec<(String, f64)>,
}

pub fn theta_grid(theta_max: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| theta_max * i as f64 / (steps - 1) as f64)
        .collect()
}

/// Scores a set of files pooled at the frame level.
pub fn score(files: &[FileEstimate], theta_max: f64, theta_steps: usize) -> Result<ScoreReport> {
    if theta_steps < 2 || !(theta_max.is_finite() && theta_max > 0.0) {
        return Err(Error::Validation(format!(
            "need theta_max > 0 and at least 2 steps, got {theta_max} / {theta_steps}"
        )));
    }
    let mut errors: Vec<f64> = files.iter().flat_map(FileEstimate::errors).collect();
    if errors.is_empty() {
        return Err(Error::Evaluation("no voiced frames to score".into()));
    }
    errors.sort_by(f64::total_cmp);
    let n = errors.len();

    let grid = theta_grid(theta_max, theta_steps);
    let mut counts = Vec::with_capacity(theta_steps);
    let mut below = 0usize;
    for &theta in &grid {
        while below < n && errors[below] <= theta {
            below += 1;
        }
        counts.push(below);
    }
    let roc: Vec<(f64, f64)> = grid
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| (t, c as f64 / n as f64))
        .collect();
    // uniform grid: area / theta_max = mean of the trapezoid heights
    let doubled: usize = counts.windows(2).map(|w| w[0] + w[1]).sum();
    let auc = doubled as f64 / (2 * n * (theta_steps - 1)) as f64;

    let per_file_mae = files
        .iter()
        .filter_map(|f| {
            let errs: Vec<f64> = f.errors().collect();
            (!errs.is_empty())
                .then(|| (f.name.clone(), errs.iter().sum::<f64>() / errs.len() as f64))
        })
        .collect();
    Ok(ScoreReport {
        auc,
        roc,
        n_frames: n,
        per_file_mae,
    })
}

/// Scores for one method, split by voice class.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: FeatureSet,
    pub by_class: BTreeMap<VoiceClass, ScoreReport>,
}

pub fn score_by_class(
    method: FeatureSet,
    files: &[FileEstimate],
    theta_max: f64,
    theta_steps: usize,
) -> Result<EvalReport> {
    let mut by_class = BTreeMap::new();
    for class in [VoiceClass::LowPitch, VoiceClass::HighPitch] {
        let subset: Vec<FileEstimate> = files
            .iter()
            .filter(|f| f.voice_class == class)
            .cloned()
            .collect();
        if subset.is_empty() {
            continue;
        }
        by_class.insert(class, score(&subset, theta_max, theta_steps)?);
    }
    if by_class.is_empty() {
        return Err(Error::Evaluation("no files to score".into()));
    }
    Ok(EvalReport { method, by_class })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub theta_max: f64,
    pub theta_steps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            theta_max: DEFAULT_THETA_MAX,
            theta_steps: DEFAULT_THETA_STEPS,
        }
    }
}

/// Smoothed estimates of every test file for each feature subset. Features
/// are computed once per file for the union of the subsets and each subset
/// decides from that shared cache.
pub fn estimate_test_split(
    manifest: &CorpusManifest,
    feature_sets: &[FeatureSet],
    model: &GaussianModel,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<FileEstimate>>> {
    manifest.check_disjoint()?;
    cfg.validate()?;
    if feature_sets.is_empty() {
        return Err(Error::Validation("no feature sets to compare".into()));
    }
    let union = feature_sets
        .iter()
        .fold(feature_sets[0], |acc, s| acc.union(*s));
    let models = feature_sets
        .iter()
        .map(|s| model.restricted(*s))
        .collect::<Result<Vec<_>>>()?;
    let test: Vec<_> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Evaluation("manifest has no test entries".into()));
    }
    let per_file = test
        .par_iter()
        .map(|e| -> Result<Vec<FileEstimate>> {
            let (audio, f0) = load_entry(manifest, &e.wav_path, &e.f0_path)?;
            let analysis = analyze_file(&audio, &f0, cfg.window_periods, union);
            let voiced: Vec<bool> = f0.values.iter().map(|&v| v > 0.0).collect();
            models
                .iter()
                .map(|m| {
                    let est = decide_file(&analysis, m, &cfg.smoother)?;
                    Ok(FileEstimate {
                        name: e.wav_path.display().to_string(),
                        voice_class: e.voice_class,
                        contour: est.smoothed,
                        voiced: voiced.clone(),
                        truth_hz: e.mvf_true_hz,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    // transpose file-major into method-major
    Ok((0..feature_sets.len())
        .map(|k| per_file.iter().map(|row| row[k].clone()).collect())
        .collect())
}

/// Runs the pipeline on the test split for every feature subset and scores
/// each by voice class.
pub fn compare_methods(
    manifest: &CorpusManifest,
    feature_sets: &[FeatureSet],
    model: &GaussianModel,
    cfg: &PipelineConfig,
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    let estimates = estimate_test_split(manifest, feature_sets, model, cfg)?;
    feature_sets
        .iter()
        .zip(&estimates)
        .map(|(set, files)| score_by_class(*set, files, opts.theta_max, opts.theta_steps))
        .collect()
}

/// `method,voice_class,auc,n_frames` rows.
pub fn format_report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,voice_class,auc,n_frames\n");
    for r in reports {
        for (class, s) in &r.by_class {
            let _ = writeln!(
                out,
                "{},{class},{:.6},{}",
                r.method.label(),
                s.auc,
                s.n_frames
            );
        }
    }
    out
}

/// `voice_class,theta_hz,accuracy` rows for one method.
pub fn format_roc_csv(report: &EvalReport) -> String {
    let mut out = String::from("voice_class,theta_hz,accuracy\n");
    for (class, s) in &report.by_class {
        for (theta, acc) in &s.roc {
            let _ = writeln!(out, "{class},{theta:.6},{acc:.6}");
        }
    }
    out
}

/// Writes `report.csv` and one `roc_<method>.csv` per method into `dir`.
pub fn write_reports(reports: &[EvalReport], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("report.csv");
    fs::write(&path, format_report_csv(reports)).map_err(|e| Error::io(&path, e))?;
    for r in reports {
        let path = dir.join(format!("roc_{}.csv", r.method.label()));
        fs::write(&path, format_roc_csv(r)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
