//! Audio, pitch-track, contour and model files.
//!
//! CSV files are two numeric columns with an optional header line, UTF-8,
//! LF line endings. Model files are `feature.hypothesis.param = value` lines
//! with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::decision::{FeatureModel, Gaussian, GaussianModel};
use crate::error::{Error, Result};
use crate::features::Feature;

pub const MIN_SAMPLE_RATE: u32 = 8000;
pub const MIN_VOICED_F0: f64 = 40.0;
pub const MAX_VOICED_F0: f64 = 1500.0;

/// Tolerance on timestamp spacing in pitch-track files, seconds.
pub const GRID_TOLERANCE_S: f64 = 1e-6;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("audio buffer is empty".into()));
        }
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::Input(format!(
                "sample rate {sample_rate} Hz is below {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    /// Rounds every sample to the 16-bit PCM grid, as a WAV round trip would.
    pub fn quantized_pcm16(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&s| pcm16(s) as f64 / 32768.0)
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// F0 per frame on a uniform grid; 0 marks unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub start_time: f64,
    pub frame_shift: f64,
    pub values: Vec<f64>,
}

impl F0Track {
    pub fn new(frame_shift: f64, values: Vec<f64>) -> Result<Self> {
        Self::with_start(0.0, frame_shift, values)
    }

    pub fn with_start(start_time: f64, frame_shift: f64, values: Vec<f64>) -> Result<Self> {
        if !(frame_shift.is_finite() && frame_shift > 0.0) {
            return Err(Error::Input(format!(
                "frame shift must be positive, got {frame_shift}"
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Input(format!("non-finite F0 at frame {i}")));
            }
            if v < 0.0 {
                return Err(Error::Input(format!("negative F0 {v} at frame {i}")));
            }
            if v != 0.0 && !(MIN_VOICED_F0..=MAX_VOICED_F0).contains(&v) {
                return Err(Error::Input(format!(
                    "F0 {v} Hz at frame {i} outside [{MIN_VOICED_F0}, {MAX_VOICED_F0}] Hz"
                )));
            }
        }
        Ok(Self {
            start_time,
            frame_shift,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, frame: usize) -> f64 {
        self.start_time + frame as f64 * self.frame_shift
    }
}

/// MVF per frame, Hz; 0 on unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MvfContour {
    pub start_time: f64,
    pub frame_shift: f64,
    pub values: Vec<f64>,
}

impl MvfContour {
    pub fn new(start_time: f64, frame_shift: f64, values: Vec<f64>) -> Result<Self> {
        if !(frame_shift.is_finite() && frame_shift > 0.0) {
            return Err(Error::Validation(format!(
                "frame shift must be positive, got {frame_shift}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!("invalid MVF value {v}")));
        }
        Ok(Self {
            start_time,
            frame_shift,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, frame: usize) -> f64 {
        self.start_time + frame as f64 * self.frame_shift
    }

    pub fn voiced_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a PCM16 or float32 WAV file; only the first channel is kept.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    if channels > 1 {
        warn!(
            "{}: {} channels, keeping only the first",
            path.display(),
            channels
        );
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let samples: Vec<f64> = interleaved.into_iter().step_by(channels).collect();
    if samples.is_empty() {
        return Err(Error::Input(format!("{}: no samples", path.display())));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Format(format!(
            "{}: non-finite sample",
            path.display()
        )));
    }
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are rounded and clipped to the PCM range.
pub fn write_wav(audio: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in audio.samples() {
        writer
            .write_sample(pcm16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Parses two numeric columns, skipping an optional non-numeric header.
fn parse_two_columns(text: &str, origin: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Format(format!(
                "{origin}:{}: expected 2 columns, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
            (Ok(t), Ok(v)) => {
                if !t.is_finite() || !v.is_finite() {
                    return Err(Error::Format(format!(
                        "{origin}:{}: non-finite value",
                        lineno + 1
                    )));
                }
                rows.push((t, v));
            }
            _ if rows.is_empty() && lineno == 0 => {}
            _ => {
                return Err(Error::Format(format!(
                    "{origin}:{}: cannot parse '{line}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Checks the timestamps form a uniform grid and returns (start, shift).
fn uniform_grid(times: &[f64], origin: &str) -> Result<(f64, f64)> {
    if times.len() < 2 {
        return Err(Error::Input(format!(
            "{origin}: at least two rows are needed to infer the frame shift"
        )));
    }
    let shift = times[1] - times[0];
    if shift <= 0.0 {
        return Err(Error::Format(format!("{origin}: timestamps must increase")));
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - shift).abs() > GRID_TOLERANCE_S {
            return Err(Error::Format(format!(
                "{origin}: non-uniform spacing between rows {} and {}",
                i + 1,
                i + 2
            )));
        }
    }
    Ok((times[0], shift))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_f0_csv(text: &str, origin: &str) -> Result<F0Track> {
    let rows = parse_two_columns(text, origin)?;
    if rows.is_empty() {
        return Err(Error::Input(format!("{origin}: no F0 rows")));
    }
    let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (start, shift) = uniform_grid(&times, origin)?;
    F0Track::with_start(start, shift, rows.into_iter().map(|r| r.1).collect())
}

/// Reads a `time_s,f0_hz` pitch track.
pub fn read_f0_csv(path: impl AsRef<Path>) -> Result<F0Track> {
    let path = path.as_ref();
    parse_f0_csv(&read_text(path)?, &path.display().to_string())
}

fn format_rows(header: &str, start: f64, shift: f64, values: &[f64]) -> String {
    let mut out = String::with_capacity(32 * (values.len() + 1));
    out.push_str(header);
    out.push('\n');
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{:.6},{:.6}", start + i as f64 * shift, v);
    }
    out
}

pub fn write_f0_csv(track: &F0Track, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_rows(
        "time_s,f0_hz",
        track.start_time,
        track.frame_shift,
        &track.values,
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_contour_csv(contour: &MvfContour) -> String {
    format_rows(
        "time_s,mvf_hz",
        contour.start_time,
        contour.frame_shift,
        &contour.values,
    )
}

/// Writes `time_s,mvf_hz` rows with six decimals.
pub fn write_contour_csv(contour: &MvfContour, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_contour_csv(contour)).map_err(|e| Error::io(path, e))
}

/// Reads a contour file. A header-only file yields an empty contour with a
/// 10 ms shift, the pipeline default.
pub fn read_contour_csv(path: impl AsRef<Path>) -> Result<MvfContour> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let rows = parse_two_columns(&read_text(path)?, &origin)?;
    match rows.len() {
        0 => MvfContour::new(0.0, 0.010, Vec::new()),
        1 => MvfContour::new(rows[0].0, 0.010, vec![rows[0].1]),
        _ => {
            let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let (start, shift) = uniform_grid(&times, &origin)?;
            MvfContour::new(start, shift, rows.into_iter().map(|r| r.1).collect())
        }
    }
}

/// Serializes a model; `header` lines are emitted as `#` comments first.
pub fn format_model(model: &GaussianModel, header: &[&str]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    for (feature, fm) in model.iter() {
        let key = feature.key();
        for (hyp, g) in [("h1", fm.h1), ("h0", fm.h0)] {
            let _ = writeln!(out, "{key}.{hyp}.mean = {}", g.mean);
            let _ = writeln!(out, "{key}.{hyp}.var = {}", g.var);
        }
    }
    out
}

pub fn write_model(model: &GaussianModel, path: impl AsRef<Path>) -> Result<()> {
    write_model_with_header(model, &[], path)
}

pub fn write_model_with_header(
    model: &GaussianModel,
    header: &[&str],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_model(model, header)).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct PartialModel {
    // [h1.mean, h1.var, h0.mean, h0.var]
    params: [Option<f64>; 4],
}

pub fn parse_model(text: &str, origin: &str) -> Result<GaussianModel> {
    let mut partial: std::collections::BTreeMap<Feature, PartialModel> = Default::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("{origin}:{}", lineno + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("{}: expected 'key = value'", at())))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad number '{}'", at(), value.trim())))?;
        if !value.is_finite() {
            return Err(Error::Format(format!("{}: non-finite value", at())));
        }
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "{}: key '{}' is not feature.hypothesis.param",
                at(),
                key.trim()
            )));
        }
        let feature = Feature::from_key(parts[0])
            .ok_or_else(|| Error::Format(format!("{}: unknown feature '{}'", at(), parts[0])))?;
        let slot = match (parts[1], parts[2]) {
            ("h1", "mean") => 0,
            ("h1", "var") => 1,
            ("h0", "mean") => 2,
            ("h0", "var") => 3,
            _ => {
                return Err(Error::Format(format!(
                    "{}: unknown key '{}'",
                    at(),
                    key.trim()
                )))
            }
        };
        let entry = partial.entry(feature).or_default();
        if entry.params[slot].replace(value).is_some() {
            return Err(Error::Format(format!(
                "{}: duplicate key '{}'",
                at(),
                key.trim()
            )));
        }
    }
    if partial.is_empty() {
        return Err(Error::Format(format!(
            "{origin}: model defines no features"
        )));
    }
    let mut features = Vec::new();
    for (feature, p) in partial {
        let key = feature.key();
        let get = |slot: usize, name: &str| {
            p.params[slot].ok_or_else(|| Error::Format(format!("{origin}: missing {key}.{name}")))
        };
        let fm = FeatureModel {
            h1: Gaussian::new(get(0, "h1.mean")?, get(1, "h1.var")?)?,
            h0: Gaussian::new(get(2, "h0.mean")?, get(3, "h0.var")?)?,
        };
        features.push((feature, fm));
    }
    GaussianModel::new(features)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<GaussianModel> {
    let path = path.as_ref();
    parse_model(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn silence_reads_back_as_zeros() {
        let dir = tmp();
        let p = dir.path().join("s.wav");
        write_wav(&AudioBuffer::new(vec![0.0; 16000], 16000).unwrap(), &p).unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.len(), 16000);
        assert_eq!(a.sample_rate(), 16000);
        assert!(a.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_full_scale_normalization() {
        let dir = tmp();
        let p = dir.path().join("fs.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.samples(), &[32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn stereo_keeps_first_channel_and_float_is_supported() {
        let dir = tmp();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for i in 0..10 {
            w.write_sample(i as f32 * 0.05).unwrap();
            w.write_sample(-0.5f32).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.samples()[3], (3.0f32 * 0.05) as f64);
    }

    #[test]
    fn empty_and_malformed_wav_are_rejected() {
        let dir = tmp();
        let p = dir.path().join("e.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        hound::WavWriter::create(&p, spec)
            .unwrap()
            .finalize()
            .unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Input(_))));
        let bad = dir.path().join("bad.wav");
        fs::write(&bad, b"RIFF garbage that is not a wave file").unwrap();
        assert!(matches!(read_wav(&bad), Err(Error::Format(_))));
        assert!(matches!(
            read_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn f0_csv_parses_with_header() {
        let t = parse_f0_csv("time_s,f0_hz\n0.00,0\n0.01,120\n0.02,121\n", "t").unwrap();
        assert!((t.frame_shift - 0.01).abs() < 1e-12);
        assert_eq!(t.values, vec![0.0, 120.0, 121.0]);
        let t = parse_f0_csv("0.00,0\n0.01,120\n", "t").unwrap();
        assert_eq!(t.values.len(), 2);
    }

    #[test]
    fn f0_csv_errors() {
        assert!(matches!(
            parse_f0_csv("0.000,100\n0.010,100\n0.021,100\n", "t"),
            Err(Error::Format(_))
        ));
        assert!(matches!(parse_f0_csv("", "t"), Err(Error::Input(_))));
        assert!(matches!(
            parse_f0_csv("0.00,100\n0.01,-3\n", "t"),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            parse_f0_csv("0.00,100\n0.01,nan\n", "t"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn contour_csv_format() {
        let c = MvfContour::new(0.0, 0.01, vec![0.0, 3000.0]).unwrap();
        assert_eq!(
            format_contour_csv(&c),
            "time_s,mvf_hz\n0.000000,0.000000\n0.010000,3000.000000\n"
        );
        let empty = MvfContour::new(0.0, 0.01, vec![]).unwrap();
        assert_eq!(format_contour_csv(&empty), "time_s,mvf_hz\n");
        let dir = tmp();
        let p = dir.path().join("e.csv");
        write_contour_csv(&empty, &p).unwrap();
        assert!(read_contour_csv(&p).unwrap().is_empty());
        assert!(write_contour_csv(&c, dir.path().join("no/such/dir/x.csv")).is_err());
    }

    #[test]
    fn model_round_trip_and_validation() {
        let model = GaussianModel::new(vec![(
            Feature::As,
            FeatureModel {
                h1: Gaussian::new(20.0, 25.0).unwrap(),
                h0: Gaussian::new(2.0, 9.0).unwrap(),
            },
        )])
        .unwrap();
        let text = format_model(&model, &[]);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(parse_model(&text, "m").unwrap(), model);

        let no_h0 = "as.h1.mean = 20\nas.h1.var = 25\n";
        assert!(matches!(parse_model(no_h0, "m"), Err(Error::Format(_))));
        let zero_var = "as.h1.mean = 20\nas.h1.var = 0\nas.h0.mean = 2\nas.h0.var = 9\n";
        assert!(matches!(
            parse_model(zero_var, "m"),
            Err(Error::Validation(_))
        ));
        let commented = "# trained\nihpc.h1.mean = 0.0132 # inline\nihpc.h1.var = 1e-6\nihpc.h0.mean = 0\nihpc.h0.var = 0.5\n";
        assert!(parse_model(commented, "m").is_ok());
    }

    proptest! {
        #[test]
        fn wav_round_trip_is_sample_identical(codes in proptest::collection::vec(any::<i16>(), 1..400)) {
            let dir = tmp();
            let p = dir.path().join("r.wav");
            let a = AudioBuffer::new(codes.iter().map(|&c| c as f64 / 32768.0).collect(), 16000).unwrap();
            write_wav(&a, &p).unwrap();
            let b = read_wav(&p).unwrap();
            write_wav(&b, dir.path().join("r2.wav")).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(fs::read(&p).unwrap(), fs::read(dir.path().join("r2.wav")).unwrap());
        }

        #[test]
        fn contour_round_trip_within_a_micro_hertz(values in proptest::collection::vec(0.0f64..8000.0, 2..200)) {
            let dir = tmp();
            let p = dir.path().join("c.csv");
            let c = MvfContour::new(0.0, 0.01, values).unwrap();
            write_contour_csv(&c, &p).unwrap();
            let back = read_contour_csv(&p).unwrap();
            prop_assert_eq!(back.len(), c.len());
            prop_assert!((back.frame_shift - c.frame_shift).abs() < 1e-6);
            for (a, b) in c.values.iter().zip(&back.values) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn model_round_trip_is_exact(
            m1 in -1e3f64..1e3, v1 in 1e-9f64..1e4, m0 in -1e3f64..1e3, v0 in 1e-9f64..1e4,
        ) {
            let g = FeatureModel { h1: Gaussian::new(m1, v1).unwrap(), h0: Gaussian::new(m0, v0).unwrap() };
            let model = GaussianModel::new(vec![(Feature::Ihpc, g), (Feature::Icpc, g)]).unwrap();
            prop_assert_eq!(parse_model(&format_model(&model, &["x"]), "m").unwrap(), model);
        }
    }
}
