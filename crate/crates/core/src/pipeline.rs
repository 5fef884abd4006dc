//! End-to-end estimation: per voiced frame, window -> spectra -> harmonic
//! candidates -> features -> ML boundary; then smoothing over the contour.
//!
//! Analysis and decision are split so several feature subsets can be scored
//! from one feature cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::decision::{decide_mvf, fit_model, FrameDecision, GaussianModel, Hypothesis};
use crate::error::{Error, Result};
use crate::features::{
    compute_features, differential_phase_from, Feature, FeatureSet, FeatureVector,
};
use crate::harmonics::{detect_candidates, HarmonicCandidate};
use crate::signal_io::{read_f0_csv, read_wav, AudioBuffer, F0Track, MvfContour};
use crate::smoothing::{smooth_with_gaps, SmootherConfig};
use crate::spectral::{analyze_frame, extract_normalized_frame, FrameSpec, DEFAULT_WINDOW_PERIODS};
use crate::synth::{CorpusManifest, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub frame_shift: f64,
    pub window_periods: f64,
    pub enabled_features: FeatureSet,
    pub smoother: SmootherConfig,
    pub model_path: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_shift: 0.010,
            window_periods: DEFAULT_WINDOW_PERIODS,
            enabled_features: FeatureSet::AS_IHPC,
            smoother: SmootherConfig::default(),
            model_path: None,
        }
    }
}

impl PipelineConfig {
    /// Applies `key = value` overrides. Known keys: `frame_shift` (s),
    /// `window_periods`, `features`, `smooth`, `median_order`,
    /// `ma_halfwidth_ms`, `model`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("{origin}:{}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Validation(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        self.validate()
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Validation(format!("'{v}' is not a number for {key}")))
        };
        match key {
            "frame_shift" => {
                self.frame_shift = num(value)?;
                self.smoother.frame_shift = self.frame_shift;
            }
            "window_periods" => self.window_periods = num(value)?,
            "features" => self.enabled_features = value.parse()?,
            "smooth" => self.smoother.mode = value.parse()?,
            "median_order" => {
                self.smoother.median_order = value
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad median order '{value}'")))?
            }
            "ma_halfwidth_ms" => self.smoother.ma_halfwidth = num(value)? / 1000.0,
            "model" => self.model_path = Some(PathBuf::from(value)),
            other => return Err(Error::Validation(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_shift.is_finite() && self.frame_shift > 0.0) {
            return Err(Error::Validation(format!(
                "bad frame shift {}",
                self.frame_shift
            )));
        }
        if !(self.window_periods.is_finite() && self.window_periods > 0.0) {
            return Err(Error::Validation(format!(
                "bad window_periods {}",
                self.window_periods
            )));
        }
        self.smoother.validate()
    }
}

/// Cached analysis of one voiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub f0: f64,
    pub candidates: Vec<HarmonicCandidate>,
    pub features: Vec<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameOutcome {
    Unvoiced,
    Undecidable(String),
    Analyzed(FrameFeatures),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub frames: usize,
    pub voiced_frames: usize,
    pub undecidable_frames: usize,
    /// Number of DFT frame analyses performed.
    pub frame_analyses: usize,
    /// Frames whose candidate windows overlapped and were re-sorted.
    pub reordered_frames: usize,
    /// Frames whose candidate count strays from what the input F0 implies,
    /// a hint of octave errors in the pitch track.
    pub suspicious_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileAnalysis {
    pub start_time: f64,
    pub frame_shift: f64,
    pub features: FeatureSet,
    pub frames: Vec<FrameOutcome>,
    pub diagnostics: Diagnostics,
}

fn analyze_one(
    audio: &AudioBuffer,
    center: i64,
    f0: f64,
    window_periods: f64,
    features: FeatureSet,
    analyses: &AtomicUsize,
) -> Result<(FrameFeatures, bool, bool)> {
    let spec = FrameSpec::with_periods(center, f0, window_periods, audio.sample_rate())?;
    let frame = analyze_frame(
        &extract_normalized_frame(audio, &spec),
        audio.sample_rate(),
        f0,
    )?;
    analyses.fetch_add(1, Ordering::Relaxed);
    let set = detect_candidates(&frame, f0)?;
    if set.is_empty() {
        return Err(Error::Input("no harmonic candidate below Nyquist".into()));
    }
    let dphi = if features.contains(Feature::Icpc) {
        analyses.fetch_add(1, Ordering::Relaxed);
        Some(differential_phase_from(&frame, audio, &spec)?)
    } else {
        None
    };
    let vectors = compute_features(&frame, &set.candidates, dphi.as_ref(), features)?;
    let expected = ((frame.nyquist() - crate::harmonics::PEAK_SEARCH_HZ) / f0).floor() as i64;
    // the running F0 drifts through noise bands, so allow 20% slack
    let suspicious = (set.len() as i64 - expected).abs() > (expected / 5).max(1);
    Ok((
        FrameFeatures {
            f0,
            candidates: set.candidates,
            features: vectors,
        },
        set.reordered,
        suspicious,
    ))
}

/// Computes candidates and the `features` subset for every voiced frame.
pub fn analyze_file(
    audio: &AudioBuffer,
    f0: &F0Track,
    window_periods: f64,
    features: FeatureSet,
) -> FileAnalysis {
    let analyses = AtomicUsize::new(0);
    let fs = audio.sample_rate() as f64;
    let results: Vec<(FrameOutcome, bool, bool)> = f0
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &f)| {
            if f <= 0.0 {
                return (FrameOutcome::Unvoiced, false, false);
            }
            let center = (f0.time(i) * fs).round() as i64;
            match analyze_one(audio, center, f, window_periods, features, &analyses) {
                Ok((ff, reordered, suspicious)) => {
                    (FrameOutcome::Analyzed(ff), reordered, suspicious)
                }
                Err(e) => (FrameOutcome::Undecidable(e.to_string()), false, false),
            }
        })
        .collect();

    let mut diagnostics = Diagnostics {
        frames: results.len(),
        frame_analyses: analyses.into_inner(),
        ..Default::default()
    };
    let frames = results
        .into_iter()
        .map(|(outcome, reordered, suspicious)| {
            if !matches!(outcome, FrameOutcome::Unvoiced) {
                diagnostics.voiced_frames += 1;
            }
            if matches!(outcome, FrameOutcome::Undecidable(_)) {
                diagnostics.undecidable_frames += 1;
            }
            diagnostics.reordered_frames += reordered as usize;
            diagnostics.suspicious_frames += suspicious as usize;
            outcome
        })
        .collect();
    FileAnalysis {
        start_time: f0.start_time,
        frame_shift: f0.frame_shift,
        features,
        frames,
        diagnostics,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourEstimate {
    pub raw: MvfContour,
    pub smoothed: MvfContour,
    /// Voiced frames without a decision; 0 in `raw`, filled in `smoothed`.
    pub undecidable: Vec<bool>,
    pub decisions: Vec<Option<FrameDecision>>,
    pub diagnostics: Diagnostics,
}

/// Boundary decisions for a cached analysis. Only the features enabled in
/// `model` contribute.
pub fn decide_file(
    analysis: &FileAnalysis,
    model: &GaussianModel,
    smoother: &SmootherConfig,
) -> Result<ContourEstimate> {
    if !model.enabled().is_subset_of(analysis.features) {
        return Err(Error::Precondition(format!(
            "model uses [{}] but only [{}] were computed",
            model.enabled(),
            analysis.features
        )));
    }
    let mut raw = Vec::with_capacity(analysis.frames.len());
    let mut undecidable = Vec::with_capacity(analysis.frames.len());
    let mut decisions = Vec::with_capacity(analysis.frames.len());
    let mut diagnostics = analysis.diagnostics.clone();
    for outcome in &analysis.frames {
        let decision = match outcome {
            FrameOutcome::Unvoiced => {
                raw.push(0.0);
                undecidable.push(false);
                decisions.push(None);
                continue;
            }
            FrameOutcome::Undecidable(_) => None,
            FrameOutcome::Analyzed(ff) => decide_mvf(&ff.candidates, &ff.features, model).ok(),
        };
        match decision {
            Some(d) if d.mvf_hz > 0.0 => {
                raw.push(d.mvf_hz);
                undecidable.push(false);
                decisions.push(Some(d));
            }
            Some(d) => {
                // m* = 0 on a voiced frame: the whole band is noise.
                raw.push(0.0);
                undecidable.push(false);
                decisions.push(Some(d));
            }
            None => {
                if matches!(outcome, FrameOutcome::Analyzed(_)) {
                    diagnostics.undecidable_frames += 1;
                }
                raw.push(0.0);
                undecidable.push(true);
                decisions.push(None);
            }
        }
    }
    let raw = MvfContour::new(analysis.start_time, analysis.frame_shift, raw)?;
    let smoother = SmootherConfig {
        frame_shift: analysis.frame_shift,
        ..*smoother
    };
    let smoothed = smooth_with_gaps(&raw, &undecidable, &smoother)?;
    Ok(ContourEstimate {
        raw,
        smoothed,
        undecidable,
        decisions,
        diagnostics,
    })
}

/// Full estimation for one signal with the features enabled in `cfg`.
pub fn estimate_contour(
    audio: &AudioBuffer,
    f0: &F0Track,
    cfg: &PipelineConfig,
    model: &GaussianModel,
) -> Result<ContourEstimate> {
    cfg.validate()?;
    let model = model.restricted(cfg.enabled_features)?;
    let analysis = analyze_file(audio, f0, cfg.window_periods, cfg.enabled_features);
    decide_file(&analysis, &model, &cfg.smoother)
}

/// Writes one `p,omega_hz,as_db,ihpc_s,icpc_rad` CSV per analyzed frame into
/// `dir` (`frame_00042.csv`, numbered by frame index).
pub fn dump_features(analysis: &FileAnalysis, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, outcome) in analysis.frames.iter().enumerate() {
        let FrameOutcome::Analyzed(ff) = outcome else {
            continue;
        };
        let mut text = String::from("p,omega_hz,as_db,ihpc_s,icpc_rad\n");
        for (c, x) in ff.candidates.iter().zip(&ff.features) {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                c.index,
                c.omega_hz,
                cell(x.as_db),
                cell(x.ihpc_s),
                cell(x.icpc_rad)
            ));
        }
        let path = dir.join(format!("frame_{i:05}.csv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// H1 below `mvf - f0/2`, H0 above `mvf + f0/2`, nothing in between.
pub fn label_candidate(omega_hz: f64, mvf_true: f64, f0: f64) -> Option<Hypothesis> {
    if omega_hz <= mvf_true - f0 / 2.0 {
        Some(Hypothesis::H1)
    } else if omega_hz > mvf_true + f0 / 2.0 {
        Some(Hypothesis::H0)
    } else {
        None
    }
}

/// Labeled feature vectors from one analyzed file with known MVF.
pub fn labeled_samples(analysis: &FileAnalysis, mvf_true: f64) -> Vec<(FeatureVector, Hypothesis)> {
    analysis
        .frames
        .iter()
        .filter_map(|o| match o {
            FrameOutcome::Analyzed(ff) => Some(ff),
            _ => None,
        })
        .flat_map(|ff| {
            ff.candidates
                .iter()
                .zip(&ff.features)
                .filter_map(move |(c, x)| {
                    label_candidate(c.omega_hz, mvf_true, ff.f0).map(|h| (*x, h))
                })
        })
        .collect()
}

pub fn load_entry(
    manifest: &CorpusManifest,
    wav: &Path,
    f0: &Path,
) -> Result<(AudioBuffer, F0Track)> {
    Ok((
        read_wav(manifest.resolve(wav))?,
        read_f0_csv(manifest.resolve(f0))?,
    ))
}

/// Fits a model for `features` on the dev split of `manifest`.
pub fn train_model(
    manifest: &CorpusManifest,
    features: FeatureSet,
    window_periods: f64,
    min_count: usize,
) -> Result<GaussianModel> {
    manifest.check_disjoint()?;
    let dev: Vec<_> = manifest.split(Split::Dev).collect();
    if dev.is_empty() {
        return Err(Error::Training("manifest has no dev entries".into()));
    }
    let per_file = dev
        .par_iter()
        .map(|e| {
            let (audio, f0) = load_entry(manifest, &e.wav_path, &e.f0_path)?;
            let analysis = analyze_file(&audio, &f0, window_periods, features);
            Ok(labeled_samples(&analysis, e.mvf_true_hz))
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<_> = per_file.into_iter().flatten().collect();
    fit_model(&samples, features, min_count)
}
