//! Semi-synthetic voiced signals with an imposed, known MVF.
//!
//! Harmonics of a slowly varying F0 fill the band up to the MVF. Gaussian
//! noise shaped in the frequency domain sits `hnr_low_db` below the harmonic
//! level inside that band and at the harmonic level (following the same
//! spectral tilt) above it.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal_io::{write_f0_csv, write_wav, AudioBuffer, F0Track};

pub const MVF_GRID_HZ: [f64; 7] = [1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 7000.0];
pub const PEAK_LEVEL: f64 = 0.5;
pub const MIN_SYNTH_F0: f64 = 80.0;
pub const MAX_SYNTH_F0: f64 = 800.0;
/// Width of the noise high-pass transition above the MVF.
pub const NOISE_TRANSITION_HZ: f64 = 200.0;
/// Width of the fade applied to a harmonic drifting above the MVF.
const HARMONIC_FADE_HZ: f64 = 50.0;

pub const LOW_PITCH_RANGE: (f64, f64) = (90.0, 220.0);
pub const HIGH_PITCH_RANGE: (f64, f64) = (250.0, 700.0);
/// Relative depth and rate of the F0 modulation in generated corpora.
pub const F0_MODULATION_DEPTH: f64 = 0.03;
pub const F0_MODULATION_HZ: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub duration: f64,
    pub sample_rate: u32,
    pub f0_contour: F0Track,
    pub mvf_true: f64,
    /// Harmonic-over-noise margin below the MVF; `f64::INFINITY` for none.
    pub hnr_low_db: f64,
    pub spectral_tilt_db_per_oct: f64,
    pub noise_seed: u64,
    pub phase_seed: u64,
}

impl SynthSpec {
    pub fn new(duration: f64, sample_rate: u32, f0_contour: F0Track, mvf_true: f64) -> Self {
        Self {
            duration,
            sample_rate,
            f0_contour,
            mvf_true,
            hnr_low_db: 30.0,
            spectral_tilt_db_per_oct: -6.0,
            noise_seed: 0,
            phase_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate < crate::signal_io::MIN_SAMPLE_RATE {
            return Err(Error::Validation(format!(
                "sample rate {} too low",
                self.sample_rate
            )));
        }
        if self.duration.is_nan() || self.duration < 0.5 {
            return Err(Error::Validation(format!(
                "duration {} s is below 0.5 s",
                self.duration
            )));
        }
        if !(self.mvf_true > 0.0 && self.mvf_true <= nyquist) {
            return Err(Error::Validation(format!(
                "MVF {} Hz outside (0, {nyquist}]",
                self.mvf_true
            )));
        }
        if self.f0_contour.is_empty() {
            return Err(Error::Validation("empty F0 contour".into()));
        }
        if let Some(f) = self
            .f0_contour
            .values
            .iter()
            .find(|f| !(MIN_SYNTH_F0..=MAX_SYNTH_F0).contains(*f))
        {
            return Err(Error::Validation(format!(
                "F0 {f} Hz outside [{MIN_SYNTH_F0}, {MAX_SYNTH_F0}] Hz"
            )));
        }
        let max_f0 = self.f0_contour.values.iter().cloned().fold(0.0, f64::max);
        if self.mvf_true < max_f0 {
            return Err(Error::Precondition(format!(
                "MVF {} Hz below F0 {max_f0} Hz leaves no harmonic band",
                self.mvf_true
            )));
        }
        if self.hnr_low_db.is_nan() {
            return Err(Error::Validation("hnr_low_db is NaN".into()));
        }
        Ok(())
    }
}

/// Generated signal plus its two components, all with the same final gain.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub audio: AudioBuffer,
    pub f0: F0Track,
    pub harmonic: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Amplitude of the tilted envelope at `freq`, 1 at and below `f_ref`.
fn tilt_gain(freq: f64, f_ref: f64, tilt_db_per_oct: f64) -> f64 {
    let octaves = (freq.max(f_ref) / f_ref).log2();
    10f64.powf(tilt_db_per_oct * octaves / 20.0)
}

/// F0 at sample `n`, linearly interpolated between track frames.
fn f0_at(track: &F0Track, t: f64) -> f64 {
    let pos = ((t - track.start_time) / track.frame_shift).max(0.0);
    let i = pos.floor() as usize;
    let values = &track.values;
    if i + 1 >= values.len() {
        return *values.last().unwrap();
    }
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

fn harmonic_gate(freq: f64, mvf: f64, nyquist: f64) -> f64 {
    if freq >= nyquist {
        0.0
    } else if freq <= mvf {
        1.0
    } else if freq >= mvf + HARMONIC_FADE_HZ {
        0.0
    } else {
        0.5 + 0.5 * (PI * (freq - mvf) / HARMONIC_FADE_HZ).cos()
    }
}

fn harmonic_part(spec: &SynthSpec, len: usize) -> Vec<f64> {
    let fs = spec.sample_rate as f64;
    let nyquist = fs / 2.0;
    let min_f0 = spec
        .f0_contour
        .values
        .iter()
        .cloned()
        .fold(f64::MAX, f64::min);
    let f_ref = spec.f0_contour.values.iter().sum::<f64>() / spec.f0_contour.len() as f64;
    let n_harm = ((spec.mvf_true + HARMONIC_FADE_HZ).min(nyquist) / min_f0).floor() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.phase_seed);
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(-PI..PI)).collect();
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| tilt_gain(h as f64 * f_ref, f_ref, spec.spectral_tilt_db_per_oct))
        .collect();

    let mut out = vec![0.0; len];
    let mut base_phase = 0.0_f64;
    for (n, y) in out.iter_mut().enumerate() {
        let f0 = f0_at(&spec.f0_contour, n as f64 / fs);
        let mut acc = 0.0;
        for h in 0..n_harm {
            let freq = (h + 1) as f64 * f0;
            let gate = harmonic_gate(freq, spec.mvf_true, nyquist);
            if gate > 0.0 {
                acc += gate * amps[h] * ((h + 1) as f64 * base_phase + phases[h]).cos();
            }
        }
        *y = acc;
        base_phase = (base_phase + 2.0 * PI * f0 / fs).rem_euclid(2.0 * PI);
    }
    out
}

/// Noise amplitude mask relative to the harmonic envelope.
fn noise_mask(freq: f64, mvf: f64, in_band: f64) -> f64 {
    if freq <= mvf {
        in_band
    } else if freq >= mvf + NOISE_TRANSITION_HZ {
        1.0
    } else {
        let x = (freq - mvf) / NOISE_TRANSITION_HZ;
        in_band + (1.0 - in_band) * 0.5 * (1.0 - (PI * x).cos())
    }
}

fn noise_part(spec: &SynthSpec, len: usize) -> Vec<f64> {
    let fs = spec.sample_rate as f64;
    let f_ref = spec.f0_contour.values.iter().sum::<f64>() / spec.f0_contour.len() as f64;
    let in_band = if spec.hnr_low_db.is_infinite() {
        0.0
    } else {
        10f64.powf(-spec.hnr_low_db / 20.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let n_fft = len.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..n_fft)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n_fft).process(&mut buf);
    // unit-variance white noise has a one-sided density of 2/fs per Hz;
    // the target density is a(f)^2 / (2 f0): one harmonic's power per F0 band.
    let level = (fs / (4.0 * f_ref)).sqrt();
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = if k <= n_fft / 2 { k } else { n_fft - k };
        let freq = bin as f64 * fs / n_fft as f64;
        let g = level
            * tilt_gain(freq, f_ref, spec.spectral_tilt_db_per_oct)
            * noise_mask(freq, spec.mvf_true, in_band);
        *c *= g;
    }
    planner.plan_fft_inverse(n_fft).process(&mut buf);
    buf.truncate(len);
    buf.into_iter().map(|c| c.re / n_fft as f64).collect()
}

/// Renders the harmonic-plus-noise signal described by `spec`, peak
/// normalized to 0.5.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let len = (spec.duration * spec.sample_rate as f64).round() as usize;
    let mut harmonic = harmonic_part(spec, len);
    let mut noise = noise_part(spec, len);
    let peak = harmonic
        .iter()
        .zip(&noise)
        .fold(0.0_f64, |m, (h, n)| m.max((h + n).abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        harmonic.iter_mut().for_each(|x| *x *= g);
        noise.iter_mut().for_each(|x| *x *= g);
    }
    let samples: Vec<f64> = harmonic.iter().zip(&noise).map(|(h, n)| h + n).collect();
    Ok(SynthOutput {
        audio: AudioBuffer::new(samples, spec.sample_rate)?,
        f0: spec.f0_contour.clone(),
        harmonic,
        noise,
    })
}

/// F0 track with a slow sinusoidal modulation around `base`.
pub fn modulated_f0_track(
    base: f64,
    duration: f64,
    frame_shift: f64,
    phase: f64,
) -> Result<F0Track> {
    let n = (duration / frame_shift).floor() as usize + 1;
    let values = (0..n)
        .map(|i| {
            let t = i as f64 * frame_shift;
            base * (1.0 + F0_MODULATION_DEPTH * (2.0 * PI * F0_MODULATION_HZ * t + phase).sin())
        })
        .collect();
    F0Track::new(frame_shift, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoiceClass {
    LowPitch,
    HighPitch,
}

impl VoiceClass {
    pub fn f0_range(self) -> (f64, f64) {
        match self {
            VoiceClass::LowPitch => LOW_PITCH_RANGE,
            VoiceClass::HighPitch => HIGH_PITCH_RANGE,
        }
    }
}

impl fmt::Display for VoiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoiceClass::LowPitch => "low_pitch",
            VoiceClass::HighPitch => "high_pitch",
        })
    }
}

impl FromStr for VoiceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "low_pitch" => Ok(VoiceClass::LowPitch),
            "high_pitch" => Ok(VoiceClass::HighPitch),
            other => Err(Error::Format(format!("unknown voice class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    SpeechLike,
    SingingLike,
    Mixed,
}

impl Preset {
    fn class_of(self, index: usize, n_files: usize) -> VoiceClass {
        match self {
            Preset::SpeechLike => VoiceClass::LowPitch,
            Preset::SingingLike => VoiceClass::HighPitch,
            Preset::Mixed if index < n_files.div_ceil(2) => VoiceClass::LowPitch,
            Preset::Mixed => VoiceClass::HighPitch,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "speech_like" | "speech" => Ok(Preset::SpeechLike),
            "singing_like" | "singing" => Ok(Preset::SingingLike),
            "mixed" => Ok(Preset::Mixed),
            other => Err(Error::Validation(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative paths are resolved against the manifest's directory.
    pub wav_path: PathBuf,
    pub f0_path: PathBuf,
    pub mvf_true_hz: f64,
    pub split: Split,
    pub voice_class: VoiceClass,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

pub const MANIFEST_HEADER: &str = "wav_path,f0_path,mvf_true_hz,split,voice_class";

impl CorpusManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Fails when any audio or F0 file is listed in both splits.
    pub fn check_disjoint(&self) -> Result<()> {
        use std::collections::HashSet;
        let dev: HashSet<PathBuf> = self
            .split(Split::Dev)
            .flat_map(|e| [self.resolve(&e.wav_path), self.resolve(&e.f0_path)])
            .collect();
        for e in self.split(Split::Test) {
            for p in [&e.wav_path, &e.f0_path] {
                if dev.contains(&self.resolve(p)) {
                    return Err(Error::Validation(format!(
                        "{} appears in both dev and test splits",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.wav_path.display(),
                e.f0_path.display(),
                e.mvf_true_hz,
                e.split,
                e.voice_class
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (lineno == 0 && line == MANIFEST_HEADER)
            {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 5 columns, found {}",
                    lineno + 1,
                    f.len()
                )));
            }
            let mvf: f64 = f[2].parse().map_err(|_| {
                Error::Format(format!("manifest line {}: bad MVF '{}'", lineno + 1, f[2]))
            })?;
            if !(mvf.is_finite() && mvf > 0.0) {
                return Err(Error::Format(format!(
                    "manifest line {}: bad MVF {mvf}",
                    lineno + 1
                )));
            }
            entries.push(ManifestEntry {
                wav_path: PathBuf::from(f[0]),
                f0_path: PathBuf::from(f[1]),
                mvf_true_hz: mvf,
                split: f[3].parse()?,
                voice_class: f[4].parse()?,
            });
        }
        Ok(Self {
            entries,
            root: root.into(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub preset: Preset,
    pub n_files: usize,
    pub seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
    pub frame_shift: f64,
    pub hnr_low_db: f64,
    pub spectral_tilt_db_per_oct: f64,
}

impl CorpusConfig {
    pub fn new(preset: Preset, n_files: usize, seed: u64) -> Self {
        Self {
            preset,
            n_files,
            seed,
            duration: 1.0,
            sample_rate: 16000,
            frame_shift: 0.010,
            hnr_low_db: 30.0,
            spectral_tilt_db_per_oct: -6.0,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Base files are stratified into dev/test by alternating within the file
/// order, which groups voice classes together.
fn split_of(index: usize) -> Split {
    if index.is_multiple_of(2) {
        Split::Dev
    } else {
        Split::Test
    }
}

/// Writes `n_files x 7` WAV + F0 pairs and `manifest.csv` into `out_dir`.
pub fn generate_corpus(out_dir: impl AsRef<Path>, cfg: &CorpusConfig) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(usize, usize)> = (0..cfg.n_files)
        .flat_map(|i| (0..MVF_GRID_HZ.len()).map(move |j| (i, j)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<ManifestEntry> {
            let class = cfg.preset.class_of(i, cfg.n_files);
            let (lo, hi) = class.f0_range();
            // keep the modulated F0 inside the class range
            let mut base_rng = sub_rng(cfg.seed, 1 + i as u64);
            let base_f0 = base_rng
                .gen_range(lo / (1.0 - F0_MODULATION_DEPTH)..hi / (1.0 + F0_MODULATION_DEPTH));
            let mod_phase = base_rng.gen_range(0.0..2.0 * PI);
            let phase_seed = base_rng.gen::<u64>();
            let noise_seed = sub_rng(cfg.seed, 1 + (cfg.n_files * (1 + j) + i) as u64).gen::<u64>();

            let mvf = MVF_GRID_HZ[j];
            let track = modulated_f0_track(base_f0, cfg.duration, cfg.frame_shift, mod_phase)?;
            let spec = SynthSpec {
                duration: cfg.duration,
                sample_rate: cfg.sample_rate,
                f0_contour: track,
                mvf_true: mvf,
                hnr_low_db: cfg.hnr_low_db,
                spectral_tilt_db_per_oct: cfg.spectral_tilt_db_per_oct,
                noise_seed,
                phase_seed,
            };
            let out = synthesize(&spec)?;
            let stem = format!("{class}_{i:03}_mvf{}", mvf as u32);
            let wav = PathBuf::from(format!("{stem}.wav"));
            let f0 = PathBuf::from(format!("{stem}.f0.csv"));
            write_wav(&out.audio, out_dir.join(&wav))?;
            write_f0_csv(&out.f0, out_dir.join(&f0))?;
            Ok(ManifestEntry {
                wav_path: wav,
                f0_path: f0,
                mvf_true_hz: mvf,
                split: split_of(i),
                voice_class: class,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
