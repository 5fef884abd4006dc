//! Pitch-synchronous windowing and the spectral primitives every feature
//! is built on: symmetric Hanning window, zero-padded DFT, bin-to-bin phase
//! unwrapping and finite-difference group delay.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal_io::AudioBuffer;

/// Default window length in pitch periods.
pub const DEFAULT_WINDOW_PERIODS: f64 = 4.0;

/// Amplitude floor of the dB spectrum.
pub const AMPLITUDE_FLOOR_DB: f64 = -300.0;

/// Upper bound on the DFT bin spacing.
pub const MAX_BIN_HZ: f64 = 2.5;

const MIN_WINDOW_LEN: usize = 16;

/// Step of the grid normalized frames are snapped to. Coarse enough that
/// rounding noise from an arbitrary input gain cannot move a sample across
/// a grid midpoint, fine enough (about -180 dB) to be spectrally invisible.
const NORMALIZED_GRID: f64 = 1.0 / (1u64 << 30) as f64;

/// Placement and length of one analysis window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub center_sample: i64,
    pub f0: f64,
    pub window_periods: f64,
    pub sample_rate: u32,
}

impl FrameSpec {
    pub fn new(center_sample: i64, f0: f64, sample_rate: u32) -> Result<Self> {
        Self::with_periods(center_sample, f0, DEFAULT_WINDOW_PERIODS, sample_rate)
    }

    pub fn with_periods(
        center_sample: i64,
        f0: f64,
        window_periods: f64,
        sample_rate: u32,
    ) -> Result<Self> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(Error::Precondition(format!(
                "f0 must be positive, got {f0}"
            )));
        }
        if !(window_periods.is_finite() && window_periods > 0.0) {
            return Err(Error::Precondition(format!(
                "window_periods must be positive, got {window_periods}"
            )));
        }
        Ok(Self {
            center_sample,
            f0,
            window_periods,
            sample_rate,
        })
    }

    /// Window length in samples: proportional to the pitch period, at least
    /// 16, forced odd so the window center falls on a sample.
    pub fn window_len(&self) -> usize {
        let n = (self.window_periods * self.sample_rate as f64 / self.f0).round() as usize;
        let n = n.max(MIN_WINDOW_LEN);
        if n.is_multiple_of(2) {
            n + 1
        } else {
            n
        }
    }

    /// Spec of the frame one (integer-rounded) pitch period later, with the
    /// fractional remainder of the period in samples.
    pub fn delayed_by_period(&self) -> (FrameSpec, f64) {
        let period = self.sample_rate as f64 / self.f0;
        let shift = period.round();
        let next = FrameSpec {
            center_sample: self.center_sample + shift as i64,
            ..*self
        };
        (next, period - shift)
    }
}

/// Symmetric Hanning window of length `len` (endpoints at zero).
pub fn hann_window(len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let denom = (len - 1) as f64;
            (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos())
                .collect()
        }
    }
}

/// `len` raw samples centered on `center`, zero outside the buffer.
pub fn extract_segment(samples: &[f64], center: i64, len: usize) -> Vec<f64> {
    let start = center - (len as i64 - 1) / 2;
    (0..len as i64)
        .map(|i| {
            let idx = start + i;
            if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn apply_window(mut segment: Vec<f64>) -> Vec<f64> {
    let window = hann_window(segment.len());
    for (s, w) in segment.iter_mut().zip(&window) {
        *s *= w;
    }
    segment
}

/// Windowed frame of explicit length centered on `center`.
pub fn extract_frame_with_len(audio: &AudioBuffer, center: i64, len: usize) -> Vec<f64> {
    apply_window(extract_segment(audio.samples(), center, len))
}

/// Hanning-windowed frame described by `spec`; out-of-range samples are 0.
pub fn extract_frame(audio: &AudioBuffer, spec: &FrameSpec) -> Vec<f64> {
    extract_frame_with_len(audio, spec.center_sample, spec.window_len())
}

/// Like [`extract_frame`], but the raw segment is first scaled to unit peak
/// and snapped to a fixed grid. Any positive gain applied to the input then
/// yields the same frame bit for bit (exactly so for PCM-quantized input).
pub fn extract_normalized_frame(audio: &AudioBuffer, spec: &FrameSpec) -> Vec<f64> {
    let mut segment = extract_segment(audio.samples(), spec.center_sample, spec.window_len());
    let peak = segment.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        for s in segment.iter_mut() {
            *s = (*s / peak / NORMALIZED_GRID).round() * NORMALIZED_GRID;
        }
    }
    apply_window(segment)
}

/// Spectra of one windowed frame on a zero-padded DFT grid.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub amplitude_db: Vec<f64>,
    pub unwrapped_phase: Vec<f64>,
    /// Seconds, relative to the first sample of the frame.
    pub group_delay: Vec<f64>,
    pub bin_hz: f64,
    /// F0 after snapping to the strongest bin within 10 Hz of the input F0.
    pub f0_refined: f64,
    pub dft_size: usize,
    pub window_len: usize,
    pub sample_rate: u32,
    /// Set when the frame was all zeros.
    pub degenerate: bool,
}

impl FrameAnalysis {
    pub fn num_bins(&self) -> usize {
        self.amplitude_db.len()
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }

    /// Unwrapped phase at `bin` re-referenced from the first sample of the
    /// frame to the window center.
    pub fn center_referenced_phase(&self, bin: usize) -> f64 {
        let center_delay = (self.window_len as f64 - 1.0) / 2.0;
        self.unwrapped_phase[bin] + 2.0 * PI * bin as f64 * center_delay / self.dft_size as f64
    }

    /// Inclusive bin range covering `[lo_hz, hi_hz]`, clamped to the grid.
    pub fn bins_in(&self, lo_hz: f64, hi_hz: f64) -> Option<(usize, usize)> {
        let last = self.num_bins() as i64 - 1;
        let lo = ((lo_hz / self.bin_hz).ceil() as i64).max(0);
        let hi = ((hi_hz / self.bin_hz).floor() as i64).min(last);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// Lowest bin holding the maximum amplitude within `[lo, hi]`.
    pub fn argmax_bin(&self, lo: usize, hi: usize) -> usize {
        let mut best = lo;
        for k in lo + 1..=hi {
            if self.amplitude_db[k] > self.amplitude_db[best] {
                best = k;
            }
        }
        best
    }
}

/// Smallest power-of-two DFT size with at least 8x oversampling of the
/// window and a bin spacing of at most 2.5 Hz.
pub fn dft_size_for(window_len: usize, sample_rate: u32) -> usize {
    let min_for_resolution = (sample_rate as f64 / MAX_BIN_HZ).ceil() as usize;
    (8 * window_len).max(min_for_resolution).next_power_of_two()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    PI - (PI - x).rem_euclid(2.0 * PI)
}

/// Amplitude (dB), unwrapped phase and group delay of a windowed frame.
pub fn analyze_frame(windowed: &[f64], sample_rate: u32, f0: f64) -> Result<FrameAnalysis> {
    if windowed.is_empty() {
        return Err(Error::Precondition("cannot analyze an empty frame".into()));
    }
    let dft_size = dft_size_for(windowed.len(), sample_rate);
    let num_bins = dft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / dft_size as f64;

    if windowed.iter().all(|&s| s == 0.0) {
        return Ok(FrameAnalysis {
            amplitude_db: vec![AMPLITUDE_FLOOR_DB; num_bins],
            unwrapped_phase: vec![0.0; num_bins],
            group_delay: vec![0.0; num_bins],
            bin_hz,
            f0_refined: f0,
            dft_size,
            window_len: windowed.len(),
            sample_rate,
            degenerate: true,
        });
    }

    let mut buffer: Vec<Complex<f64>> = windowed
        .iter()
        .map(|&s| Complex::new(s, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(dft_size)
        .collect();
    forward_fft(dft_size).process(&mut buffer);

    let amplitude_db: Vec<f64> = buffer[..num_bins]
        .iter()
        .map(|c| {
            let mag = c.norm();
            if mag > 0.0 {
                (20.0 * mag.log10()).max(AMPLITUDE_FLOOR_DB)
            } else {
                AMPLITUDE_FLOOR_DB
            }
        })
        .collect();

    let mut unwrapped_phase = Vec::with_capacity(num_bins);
    let mut prev_raw = 0.0;
    let mut acc = 0.0;
    for (k, c) in buffer[..num_bins].iter().enumerate() {
        let raw = c.im.atan2(c.re);
        if k == 0 {
            acc = raw;
        } else {
            acc += wrap_phase(raw - prev_raw);
        }
        prev_raw = raw;
        unwrapped_phase.push(acc);
    }

    let d_omega = 2.0 * PI * bin_hz;
    let mut group_delay: Vec<f64> = unwrapped_phase
        .windows(2)
        .map(|w| -(w[1] - w[0]) / d_omega)
        .collect();
    let last = *group_delay.last().unwrap_or(&0.0);
    group_delay.push(last);

    let mut analysis = FrameAnalysis {
        amplitude_db,
        unwrapped_phase,
        group_delay,
        bin_hz,
        f0_refined: f0,
        dft_size,
        window_len: windowed.len(),
        sample_rate,
        degenerate: false,
    };
    if let Some((lo, hi)) = analysis.bins_in(f0 - 10.0, f0 + 10.0) {
        analysis.f0_refined = analysis.bin_frequency(analysis.argmax_bin(lo, hi));
    }
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn audio(samples: Vec<f64>, rate: u32) -> AudioBuffer {
        AudioBuffer::new(samples, rate).unwrap()
    }

    #[test]
    fn window_len_is_odd_and_bounded() {
        let spec = FrameSpec::new(0, 100.0, 16000).unwrap();
        assert_eq!(spec.window_len(), 641);
        let spec = FrameSpec::new(0, 1500.0, 8000).unwrap();
        assert_eq!(spec.window_len(), 21);
        let spec = FrameSpec::new(0, 1500.0, 1000).unwrap();
        assert_eq!(spec.window_len(), 17);
    }

    #[test]
    fn nonpositive_f0_is_rejected() {
        assert!(matches!(
            FrameSpec::new(0, 0.0, 16000),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            FrameSpec::new(0, -5.0, 16000),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn constant_signal_yields_window_weights() {
        let a = audio(vec![1.0; 32], 16000);
        let frame = extract_frame_with_len(&a, 10, 5);
        assert_eq!(frame, hann_window(5));
        for (got, want) in frame.iter().zip([0.0, 0.5, 1.0, 0.5, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_at_origin_is_zero_padded_on_the_left() {
        let a = audio(vec![1.0; 64], 16000);
        let frame = extract_frame_with_len(&a, 0, 9);
        assert!(frame[..4].iter().all(|&s| s == 0.0));
        assert!(frame[5..8].iter().all(|&s| s > 0.0));
    }

    #[test]
    fn windowing_never_adds_energy() {
        let samples: Vec<f64> = (0..400)
            .map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0)
            .collect();
        let a = audio(samples.clone(), 16000);
        let spec = FrameSpec::new(200, 180.0, 16000).unwrap();
        let raw = extract_segment(&samples, 200, spec.window_len());
        let win = extract_frame(&a, &spec);
        let e_raw: f64 = raw.iter().map(|s| s * s).sum();
        let e_win: f64 = win.iter().map(|s| s * s).sum();
        assert!(e_win <= e_raw);
    }

    #[test]
    fn dft_size_rule() {
        assert_eq!(dft_size_for(641, 16000), 8192);
        assert_eq!(dft_size_for(21, 8000), 4096);
        assert_eq!(dft_size_for(1601, 44100), 32768);
        for rate in [8000, 11025, 16000, 22050, 44100, 48000, 96000] {
            for len in [17, 101, 999, 4001] {
                let n = dft_size_for(len, rate);
                assert!(rate as f64 / n as f64 <= MAX_BIN_HZ);
                assert!(n >= 8 * len && n.is_power_of_two());
            }
        }
    }

    #[test]
    fn wrap_phase_range() {
        assert!((wrap_phase(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn all_zero_frame_is_degenerate() {
        let a = analyze_frame(&vec![0.0; 101], 16000, 200.0).unwrap();
        assert!(a.degenerate);
        assert!(a.amplitude_db.iter().all(|&v| v == AMPLITUDE_FLOOR_DB));
        assert!(a.unwrapped_phase.iter().all(|&v| v == 0.0));
        assert!(a.group_delay.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_frame_is_an_error() {
        assert!(analyze_frame(&[], 16000, 200.0).is_err());
    }

    #[test]
    fn cosine_on_bin_center_has_window_center_group_delay() {
        let fs = 16000;
        let f0 = 200.0;
        let spec = FrameSpec::new(4000, f0, fs).unwrap();
        let n_w = spec.window_len();
        let dft = dft_size_for(n_w, fs);
        let bin = 1000usize;
        let freq = bin as f64 * fs as f64 / dft as f64;
        let samples: Vec<f64> = (0..8000)
            .map(|n| (2.0 * PI * freq * n as f64 / fs as f64 + 0.3).cos())
            .collect();
        let frame = extract_frame(&audio(samples, fs), &spec);
        let a = analyze_frame(&frame, fs, f0).unwrap();
        assert_eq!(a.dft_size, dft);
        let (lo, hi) = a.bins_in(freq - 50.0, freq + 50.0).unwrap();
        assert_eq!(a.argmax_bin(lo, hi), bin);
        let expected = (n_w as f64 - 1.0) / (2.0 * fs as f64);
        assert!((a.group_delay[bin] - expected).abs() < 1e-4);
    }

    #[test]
    fn unwrapped_phase_steps_stay_within_pi() {
        let samples: Vec<f64> = (0..3000)
            .map(|n| ((n * 7919 % 613) as f64 / 306.0) - 1.0)
            .collect();
        let spec = FrameSpec::new(1500, 150.0, 16000).unwrap();
        let a = analyze_frame(&extract_frame(&audio(samples, 16000), &spec), 16000, 150.0).unwrap();
        for w in a.unwrapped_phase.windows(2) {
            let d = w[1] - w[0];
            assert!(d > -PI - 1e-12 && d <= PI + 1e-12, "step {d}");
        }
        assert!(a.group_delay.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn parseval_holds_on_the_half_spectrum() {
        let samples: Vec<f64> = (0..3000)
            .map(|n| ((n * 104729 % 997) as f64 / 498.5) - 1.0)
            .collect();
        let spec = FrameSpec::new(1200, 220.0, 16000).unwrap();
        let frame = extract_frame(&audio(samples, 16000), &spec);
        let a = analyze_frame(&frame, 16000, 220.0).unwrap();
        let time_energy: f64 = frame.iter().map(|s| s * s).sum();
        let last = a.num_bins() - 1;
        let spec_energy: f64 = a
            .amplitude_db
            .iter()
            .enumerate()
            .map(|(k, db)| {
                let w = if k == 0 || k == last { 1.0 } else { 2.0 };
                w * 10f64.powf(db / 10.0)
            })
            .sum::<f64>()
            / a.dft_size as f64;
        assert!(((spec_energy - time_energy) / time_energy).abs() < 1e-6);
    }

    #[test]
    fn normalized_frame_is_gain_invariant_for_pcm_input() {
        let samples: Vec<f64> = (0..2000)
            .map(|n| ((n * 7717 % 65536) as f64 - 32768.0) / 32768.0)
            .collect();
        let spec = FrameSpec::new(900, 130.0, 16000).unwrap();
        let base = extract_normalized_frame(&audio(samples.clone(), 16000), &spec);
        for c in [1e-3, 10.0, 1e3] {
            let scaled: Vec<f64> = samples.iter().map(|s| s * c).collect();
            let other = extract_normalized_frame(&audio(scaled, 16000), &spec);
            assert_eq!(base, other, "gain {c}");
        }
    }
}
