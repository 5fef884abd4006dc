//! Harmonic-candidate peak picking with progressive F0 refinement.

use crate::error::{Error, Result};
use crate::spectral::FrameAnalysis;

/// Half-width of the peak search neighborhood around each expected harmonic.
pub const PEAK_SEARCH_HZ: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicCandidate {
    /// Harmonic number, starting at 1.
    pub index: usize,
    pub omega_hz: f64,
    pub bin: usize,
    pub amplitude_db: f64,
}

impl HarmonicCandidate {
    /// Running F0 estimate implied by this candidate.
    pub fn implied_f0(&self) -> f64 {
        self.omega_hz / self.index as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<HarmonicCandidate>,
    /// Final running F0 estimate after the last detection.
    pub f0_refined: f64,
    /// Search windows overlapped and candidates had to be re-sorted.
    pub reordered: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Walks the harmonic series up to Nyquist. Candidate `p` is the strongest
/// bin within 10 Hz of `p * f0`, where `f0` is re-estimated after every
/// detection as `omega_p / p`.
pub fn detect_candidates(frame: &FrameAnalysis, f0_initial: f64) -> Result<CandidateSet> {
    if !(f0_initial.is_finite() && f0_initial > 0.0) {
        return Err(Error::Precondition(format!(
            "initial F0 must be positive, got {f0_initial}"
        )));
    }
    if frame.degenerate {
        return Err(Error::Precondition(
            "frame is degenerate (all zeros)".into(),
        ));
    }
    let nyquist = frame.nyquist();
    let max_count = (nyquist / f0_initial).floor() as usize + 2;
    let mut candidates: Vec<HarmonicCandidate> = Vec::new();
    let mut omega0 = f0_initial;
    let mut reordered = false;

    for p in 1..=max_count {
        let expected = p as f64 * omega0;
        if expected + PEAK_SEARCH_HZ > nyquist || omega0 <= 0.0 {
            break;
        }
        let Some((lo, hi)) = frame.bins_in(expected - PEAK_SEARCH_HZ, expected + PEAK_SEARCH_HZ)
        else {
            break;
        };
        let bin = frame.argmax_bin(lo, hi);
        let cand = HarmonicCandidate {
            index: p,
            omega_hz: frame.bin_frequency(bin),
            bin,
            amplitude_db: frame.amplitude_db[bin],
        };
        if let Some(prev) = candidates.last() {
            if cand.omega_hz <= prev.omega_hz {
                reordered = true;
            }
        }
        omega0 = cand.implied_f0();
        candidates.push(cand);
    }

    if reordered {
        // Consecutive windows overlapped; keep indices attached to their
        // peaks and restore frequency order.
        candidates.sort_by(|a, b| {
            a.omega_hz
                .total_cmp(&b.omega_hz)
                .then(a.index.cmp(&b.index))
        });
    }
    Ok(CandidateSet {
        candidates,
        f0_refined: omega0,
        reordered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::AudioBuffer;
    use crate::spectral::{analyze_frame, extract_frame, FrameSpec};
    use std::f64::consts::PI;

    fn harmonic_signal(f0: f64, fs: u32, len: usize, max_hz: f64) -> Vec<f64> {
        let n_harm = (max_hz / f0).floor() as usize;
        (0..len)
            .map(|n| {
                let t = n as f64 / fs as f64;
                (1..=n_harm)
                    .map(|h| (2.0 * PI * h as f64 * f0 * t + 0.7 * h as f64).cos() / h as f64)
                    .sum()
            })
            .collect()
    }

    fn analyze(samples: Vec<f64>, fs: u32, f0: f64, center: i64) -> FrameAnalysis {
        let audio = AudioBuffer::new(samples, fs).unwrap();
        let spec = FrameSpec::new(center, f0, fs).unwrap();
        analyze_frame(&extract_frame(&audio, &spec), fs, f0).unwrap()
    }

    #[test]
    fn refinement_tracks_a_mistuned_initial_f0() {
        let fs = 16000;
        let true_f0 = 201.0;
        let frame = analyze(harmonic_signal(true_f0, fs, 8000, 7900.0), fs, 200.0, 4000);
        let set = detect_candidates(&frame, 200.0).unwrap();
        let c10 = set.candidates.iter().find(|c| c.index == 10).unwrap();
        assert!((c10.omega_hz - 2010.0).abs() <= 2.5, "{}", c10.omega_hz);
        assert!((set.f0_refined - true_f0).abs() < 0.1);
        assert!(!set.reordered);
    }

    #[test]
    fn f0_above_nyquist_yields_nothing() {
        let fs = 8000;
        let frame = analyze(harmonic_signal(300.0, fs, 4000, 3900.0), fs, 300.0, 2000);
        let set = detect_candidates(&frame, 6000.0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn single_tone_has_one_strong_candidate() {
        let fs = 16000;
        let samples: Vec<f64> = (0..8000)
            .map(|n| (2.0 * PI * 300.0 * n as f64 / fs as f64).sin())
            .collect();
        let frame = analyze(samples, fs, 300.0, 4000);
        let set = detect_candidates(&frame, 300.0).unwrap();
        let first = set.candidates[0];
        assert_eq!(first.index, 1);
        assert!((first.omega_hz - 300.0).abs() <= frame.bin_hz);
        for c in &set.candidates[1..] {
            assert!(c.amplitude_db < first.amplitude_db - 40.0, "{c:?}");
        }
    }

    #[test]
    fn count_is_bounded_and_frequencies_increase() {
        let fs = 16000;
        for f0 in [90.0, 157.3, 333.0, 700.0] {
            let frame = analyze(harmonic_signal(f0, fs, 8000, 7000.0), fs, f0, 4000);
            let set = detect_candidates(&frame, f0).unwrap();
            assert!(set.len() <= (8000.0 / f0).floor() as usize + 2);
            assert!(set
                .candidates
                .windows(2)
                .all(|w| w[1].omega_hz > w[0].omega_hz));
            assert_eq!(set, detect_candidates(&frame, f0).unwrap());
        }
    }

    #[test]
    fn invalid_inputs() {
        let fs = 16000;
        let frame = analyze(harmonic_signal(200.0, fs, 4000, 4000.0), fs, 200.0, 2000);
        assert!(detect_candidates(&frame, 0.0).is_err());
        let zero = analyze_frame(&vec![0.0; 321], fs, 200.0).unwrap();
        assert!(detect_candidates(&zero, 200.0).is_err());
    }
}
