//! Harmonicity measurements for each harmonic candidate.
//!
//! * AS: local harmonic-to-noise ratio, main-lobe mean level minus the mean
//!   level of the rest of a one-F0-wide span, in dB.
//! * IHPC: group-delay difference between consecutive candidates, seconds.
//! * ICPC: wrapped difference between consecutive candidates of the
//!   differential phase between this frame and the frame one period later.
//!
//! Pair features for (p, p+1) are stored on candidate p; the last candidate
//! only carries AS.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harmonics::HarmonicCandidate;
use crate::signal_io::AudioBuffer;
use crate::spectral::{
    analyze_frame, extract_normalized_frame, wrap_phase, FrameAnalysis, FrameSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    As,
    Ihpc,
    Icpc,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::As, Feature::Ihpc, Feature::Icpc];

    pub fn key(self) -> &'static str {
        match self {
            Feature::As => "as",
            Feature::Ihpc => "ihpc",
            Feature::Icpc => "icpc",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key.trim().to_ascii_lowercase().as_str() {
            "as" => Some(Feature::As),
            "ihpc" => Some(Feature::Ihpc),
            "icpc" => Some(Feature::Icpc),
            _ => None,
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Non-empty subset of the three features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSet(u8);

impl FeatureSet {
    pub const AS: FeatureSet = FeatureSet(1);
    pub const IHPC: FeatureSet = FeatureSet(2);
    pub const ICPC: FeatureSet = FeatureSet(4);
    pub const AS_IHPC: FeatureSet = FeatureSet(3);
    pub const ALL: FeatureSet = FeatureSet(7);

    /// The five variants compared in the objective evaluation.
    pub const COMPARED: [FeatureSet; 5] = [
        FeatureSet::AS,
        FeatureSet::IHPC,
        FeatureSet::ICPC,
        FeatureSet::AS_IHPC,
        FeatureSet::ALL,
    ];

    pub fn from_features(features: &[Feature]) -> Result<Self> {
        let bits = features.iter().fold(0u8, |acc, f| acc | f.bit());
        if bits == 0 {
            return Err(Error::Validation("feature set must not be empty".into()));
        }
        Ok(FeatureSet(bits))
    }

    pub fn contains(self, f: Feature) -> bool {
        self.0 & f.bit() != 0
    }

    pub fn union(self, other: FeatureSet) -> FeatureSet {
        FeatureSet(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: FeatureSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Feature> {
        Feature::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    /// Name used in reports and file names, e.g. `as-ihpc`.
    pub fn label(self) -> String {
        self.iter().map(Feature::key).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let keys: Vec<&str> = self.iter().map(Feature::key).collect();
        write!(f, "{}", keys.join(","))
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    /// Accepts `as,ihpc` or `as-ihpc`.
    fn from_str(s: &str) -> Result<Self> {
        let features = s
            .split([',', '-', '+'])
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                Feature::from_key(t)
                    .ok_or_else(|| Error::Validation(format!("unknown feature '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::from_features(&features)
    }
}

/// Measurements for one candidate; absent features are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FeatureVector {
    pub as_db: Option<f64>,
    pub ihpc_s: Option<f64>,
    pub icpc_rad: Option<f64>,
}

impl FeatureVector {
    pub fn get(&self, f: Feature) -> Option<f64> {
        match f {
            Feature::As => self.as_db,
            Feature::Ihpc => self.ihpc_s,
            Feature::Icpc => self.icpc_rad,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.as_db.is_none() && self.ihpc_s.is_none() && self.icpc_rad.is_none()
    }

    /// Copy with every feature outside `set` removed.
    pub fn restricted(&self, set: FeatureSet) -> FeatureVector {
        FeatureVector {
            as_db: self.as_db.filter(|_| set.contains(Feature::As)),
            ihpc_s: self.ihpc_s.filter(|_| set.contains(Feature::Ihpc)),
            icpc_rad: self.icpc_rad.filter(|_| set.contains(Feature::Icpc)),
        }
    }
}

/// Phase difference between a frame and the frame one period later, per bin,
/// wrapped to (-pi, pi].
#[derive(Debug, Clone)]
pub struct DifferentialPhase {
    pub delta_phi: Vec<f64>,
    pub bin_hz: f64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Local harmonic-to-noise ratio around `cand`, in dB.
pub fn feature_as(frame: &FrameAnalysis, cand: &HarmonicCandidate, omega0: f64) -> Option<f64> {
    let w = cand.omega_hz;
    let (span_lo, span_hi) = frame.bins_in(w - omega0 / 2.0, w + omega0 / 2.0)?;
    let (main_lo, main_hi) = frame.bins_in(w - omega0 / 5.0, w + omega0 / 5.0)?;
    let db = &frame.amplitude_db;
    let main = mean(&db[main_lo..=main_hi])?;
    let rest: Vec<f64> = (span_lo..=span_hi)
        .filter(|k| *k < main_lo || *k > main_hi)
        .map(|k| db[k])
        .collect();
    Some(main - mean(&rest)?)
}

/// Group-delay difference between a candidate and its successor, seconds.
pub fn feature_ihpc(
    frame: &FrameAnalysis,
    cand: &HarmonicCandidate,
    next: &HarmonicCandidate,
) -> Option<f64> {
    (next.index == cand.index + 1)
        .then(|| frame.group_delay[next.bin] - frame.group_delay[cand.bin])
}

/// Differential phase against an already analyzed first frame; only the
/// frame one period later is analyzed here.
pub fn differential_phase_from(
    first: &FrameAnalysis,
    audio: &AudioBuffer,
    spec: &FrameSpec,
) -> Result<DifferentialPhase> {
    let (delayed_spec, fraction) = spec.delayed_by_period();
    let delayed = analyze_frame(
        &extract_normalized_frame(audio, &delayed_spec),
        spec.sample_rate,
        spec.f0,
    )?;
    if delayed.dft_size != first.dft_size {
        return Err(Error::Precondition(
            "first frame was analyzed with a different DFT size".into(),
        ));
    }
    let fs = spec.sample_rate as f64;
    let delta_phi = (0..first.num_bins())
        .map(|k| {
            let omega = 2.0 * std::f64::consts::PI * first.bin_frequency(k);
            let compensated = delayed.center_referenced_phase(k) + omega * fraction / fs;
            wrap_phase(first.center_referenced_phase(k) - compensated)
        })
        .collect();
    Ok(DifferentialPhase {
        delta_phi,
        bin_hz: first.bin_hz,
    })
}

/// Differential phase between the frame at `spec` and the frame delayed by
/// one pitch period, each referenced to its own window center, with the
/// sub-sample remainder of the period compensated.
pub fn differential_phase(audio: &AudioBuffer, spec: &FrameSpec) -> Result<DifferentialPhase> {
    let first = analyze_frame(
        &extract_normalized_frame(audio, spec),
        spec.sample_rate,
        spec.f0,
    )?;
    differential_phase_from(&first, audio, spec)
}

pub fn feature_icpc(
    dphi: &DifferentialPhase,
    cand: &HarmonicCandidate,
    next: &HarmonicCandidate,
) -> Option<f64> {
    (next.index == cand.index + 1)
        .then(|| wrap_phase(dphi.delta_phi[next.bin] - dphi.delta_phi[cand.bin]))
}

/// Feature vectors for every candidate, computing only the enabled features.
/// `dphi` is required when ICPC is enabled.
pub fn compute_features(
    frame: &FrameAnalysis,
    candidates: &[HarmonicCandidate],
    dphi: Option<&DifferentialPhase>,
    enabled: FeatureSet,
) -> Result<Vec<FeatureVector>> {
    if enabled.contains(Feature::Icpc) && dphi.is_none() {
        return Err(Error::Precondition(
            "ICPC enabled but no differential phase supplied".into(),
        ));
    }
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, cand)| {
            let next = candidates.get(i + 1);
            FeatureVector {
                as_db: if enabled.contains(Feature::As) {
                    feature_as(frame, cand, cand.implied_f0())
                } else {
                    None
                },
                ihpc_s: match next {
                    Some(n) if enabled.contains(Feature::Ihpc) => feature_ihpc(frame, cand, n),
                    _ => None,
                },
                icpc_rad: match (next, dphi) {
                    (Some(n), Some(d)) if enabled.contains(Feature::Icpc) => {
                        feature_icpc(d, cand, n)
                    }
                    _ => None,
                },
            }
        })
        .collect())
}
