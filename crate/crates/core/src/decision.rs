//! Per-hypothesis Gaussian feature models and the maximum-likelihood choice
//! of the harmonic/noise boundary.
//!
//! H1 means "this candidate is a harmonic", H0 rejects it. For a frame with
//! N candidates the boundary index m in 0..=N maximizes
//!
//! ```text
//! sum_{k<=m} log p(x_k | H1) + sum_{k>m} log p(x_k | H0)
//! ```
//!
//! and the MVF is the frequency of candidate m (0 when m = 0).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureSet, FeatureVector};
use crate::harmonics::HarmonicCandidate;

/// Minimum training samples per feature and hypothesis.
pub const MIN_SAMPLES_PER_CELL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    /// Not a harmonic.
    H0,
    /// Harmonic.
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite Gaussian parameters ({mean}, {var})"
            )));
        }
        if var <= 0.0 {
            return Err(Error::Validation(format!(
                "variance must be positive, got {var}"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * PI * self.var).ln() - d * d / (2.0 * self.var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureModel {
    pub h1: Gaussian,
    pub h0: Gaussian,
}

impl FeatureModel {
    pub fn get(&self, hypothesis: Hypothesis) -> &Gaussian {
        match hypothesis {
            Hypothesis::H0 => &self.h0,
            Hypothesis::H1 => &self.h1,
        }
    }
}

/// Independent univariate Gaussians per enabled feature and hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    features: BTreeMap<Feature, FeatureModel>,
}

impl GaussianModel {
    pub fn new(features: impl IntoIterator<Item = (Feature, FeatureModel)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (f, m) in features {
            if map.insert(f, m).is_some() {
                return Err(Error::Validation(format!(
                    "feature {} given twice",
                    f.key()
                )));
            }
        }
        if map.is_empty() {
            return Err(Error::Validation(
                "model must enable at least one feature".into(),
            ));
        }
        Ok(Self { features: map })
    }

    pub fn enabled(&self) -> FeatureSet {
        let keys: Vec<Feature> = self.features.keys().copied().collect();
        FeatureSet::from_features(&keys).expect("model is never empty")
    }

    pub fn get(&self, f: Feature) -> Option<&FeatureModel> {
        self.features.get(&f)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Feature, &FeatureModel)> {
        self.features.iter().map(|(f, m)| (*f, m))
    }

    /// Sub-model limited to `set`; every feature of `set` must be present.
    pub fn restricted(&self, set: FeatureSet) -> Result<Self> {
        if !set.is_subset_of(self.enabled()) {
            return Err(Error::Validation(format!(
                "model enables [{}] but [{}] was requested",
                self.enabled(),
                set
            )));
        }
        Self::new(set.iter().map(|f| (f, self.features[&f])))
    }
}

/// Sum of Gaussian log-densities over the features present in `x` and
/// enabled in `model`; other features contribute nothing.
pub fn log_likelihood(x: &FeatureVector, model: &GaussianModel, hypothesis: Hypothesis) -> f64 {
    model
        .iter()
        .filter_map(|(f, fm)| x.get(f).map(|v| fm.get(hypothesis).log_density(v)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub probability: f64,
    /// Both likelihoods underflowed; `probability` is 0.5 by convention.
    pub degenerate: bool,
}

/// Posterior of `hypothesis` with equal priors.
pub fn posterior(x: &FeatureVector, model: &GaussianModel, hypothesis: Hypothesis) -> Posterior {
    let l1 = log_likelihood(x, model, Hypothesis::H1).exp();
    let l0 = log_likelihood(x, model, Hypothesis::H0).exp();
    if l0 + l1 == 0.0 || !(l0 + l1).is_finite() {
        return Posterior {
            probability: 0.5,
            degenerate: true,
        };
    }
    let num = match hypothesis {
        Hypothesis::H1 => l1,
        Hypothesis::H0 => l0,
    };
    Posterior {
        probability: num / (l0 + l1),
        degenerate: false,
    }
}

/// Result of the boundary search over per-candidate log-likelihoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    /// Number of candidates assigned to H1.
    pub m_star: usize,
    pub objective: f64,
}

/// Linear-time argmax of the boundary objective. Ties go to the larger m.
pub fn best_boundary(ll_h1: &[f64], ll_h0: &[f64]) -> Boundary {
    assert_eq!(
        ll_h1.len(),
        ll_h0.len(),
        "likelihood vectors differ in length"
    );
    let mut objective: f64 = ll_h0.iter().sum();
    let mut best = Boundary {
        m_star: 0,
        objective,
    };
    for (k, (l1, l0)) in ll_h1.iter().zip(ll_h0).enumerate() {
        objective += l1 - l0;
        if objective >= best.objective {
            best = Boundary {
                m_star: k + 1,
                objective,
            };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecision {
    pub m_star: usize,
    pub mvf_hz: f64,
    pub total_log_likelihood: f64,
    /// log p(x|H1) - log p(x|H0) per candidate.
    pub per_candidate_llr: Vec<f64>,
}

/// Picks the MVF of one frame. `features[i]` belongs to `candidates[i]`.
pub fn decide_mvf(
    candidates: &[HarmonicCandidate],
    features: &[FeatureVector],
    model: &GaussianModel,
) -> Result<FrameDecision> {
    if features.is_empty() {
        return Err(Error::Input(
            "no harmonic candidates: frame is undecidable".into(),
        ));
    }
    if candidates.len() != features.len() {
        return Err(Error::Precondition(format!(
            "{} candidates but {} feature vectors",
            candidates.len(),
            features.len()
        )));
    }
    let ll_h1: Vec<f64> = features
        .iter()
        .map(|x| log_likelihood(x, model, Hypothesis::H1))
        .collect();
    let ll_h0: Vec<f64> = features
        .iter()
        .map(|x| log_likelihood(x, model, Hypothesis::H0))
        .collect();
    let boundary = best_boundary(&ll_h1, &ll_h0);
    let mvf_hz = match boundary.m_star {
        0 => 0.0,
        m => candidates[m - 1].omega_hz,
    };
    Ok(FrameDecision {
        m_star: boundary.m_star,
        mvf_hz,
        total_log_likelihood: boundary.objective,
        per_candidate_llr: ll_h1.iter().zip(&ll_h0).map(|(a, b)| a - b).collect(),
    })
}

fn sample_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Fits sample mean and unbiased variance per enabled feature and hypothesis.
/// Each cell needs at least `min_count` samples (and never fewer than two).
pub fn fit_model(
    labeled: &[(FeatureVector, Hypothesis)],
    enabled: FeatureSet,
    min_count: usize,
) -> Result<GaussianModel> {
    let min_count = min_count.max(2);
    let mut fitted = Vec::new();
    for feature in enabled.iter() {
        let cell = |hyp: Hypothesis, name: &str| -> Result<Gaussian> {
            let values: Vec<f64> = labeled
                .iter()
                .filter(|(_, h)| *h == hyp)
                .filter_map(|(x, _)| x.get(feature))
                .collect();
            if values.len() < min_count {
                return Err(Error::Training(format!(
                    "{}.{name}: {} samples, need at least {min_count}",
                    feature.key(),
                    values.len()
                )));
            }
            let (mean, var) = sample_moments(&values);
            Gaussian::new(mean, var)
                .map_err(|e| Error::Validation(format!("{}.{name}: {e}", feature.key())))
        };
        let h1 = cell(Hypothesis::H1, "h1")?;
        let h0 = cell(Hypothesis::H0, "h0")?;
        fitted.push((feature, FeatureModel { h1, h0 }));
    }
    GaussianModel::new(fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn as_only(v: f64) -> FeatureVector {
        FeatureVector {
            as_db: Some(v),
            ..Default::default()
        }
    }

    fn model_as(h1: (f64, f64), h0: (f64, f64)) -> GaussianModel {
        GaussianModel::new(vec![(
            Feature::As,
            FeatureModel {
                h1: Gaussian::new(h1.0, h1.1).unwrap(),
                h0: Gaussian::new(h0.0, h0.1).unwrap(),
            },
        )])
        .unwrap()
    }

    fn brute_force(ll_h1: &[f64], ll_h0: &[f64]) -> usize {
        let n = ll_h1.len();
        let objective =
            |m: usize| -> f64 { ll_h1[..m].iter().sum::<f64>() + ll_h0[m..].iter().sum::<f64>() };
        let mut best = 0;
        for m in 1..=n {
            if objective(m) >= objective(best) {
                best = m;
            }
        }
        best
    }

    fn candidates(n: usize) -> Vec<HarmonicCandidate> {
        (1..=n)
            .map(|p| HarmonicCandidate {
                index: p,
                omega_hz: 100.0 * p as f64,
                bin: p * 40,
                amplitude_db: 0.0,
            })
            .collect()
    }

    #[test]
    fn llr_profile_examples() {
        let llr = [2.0, 2.0, 2.0, -2.0, -2.0];
        let zeros = [0.0; 5];
        assert_eq!(best_boundary(&llr, &zeros).m_star, 3);
        assert_eq!(brute_force(&llr, &zeros), 3);
        assert_eq!(best_boundary(&[1.0; 7], &[0.0; 7]).m_star, 7);
        assert_eq!(best_boundary(&[-1.0; 7], &[0.0; 7]).m_star, 0);
        // all-equal objective: ties go to the largest m
        assert_eq!(best_boundary(&[0.0; 4], &[0.0; 4]).m_star, 4);
    }

    #[test]
    fn decide_reports_candidate_frequency() {
        let model = model_as((20.0, 25.0), (2.0, 9.0));
        let fv: Vec<FeatureVector> = [25.0, 22.0, 18.0, 1.0, 3.0].map(as_only).to_vec();
        let d = decide_mvf(&candidates(5), &fv, &model).unwrap();
        assert_eq!(d.m_star, 3);
        assert_eq!(d.mvf_hz, 300.0);
        assert_eq!(d.per_candidate_llr.len(), 5);
        let all_noise: Vec<FeatureVector> = [0.0; 5].map(as_only).to_vec();
        let d = decide_mvf(&candidates(5), &all_noise, &model).unwrap();
        assert_eq!((d.m_star, d.mvf_hz), (0, 0.0));
        assert!(decide_mvf(&[], &[], &model).is_err());
    }

    #[test]
    fn likelihood_at_the_mean() {
        let model = GaussianModel::new(vec![
            (
                Feature::As,
                FeatureModel {
                    h1: Gaussian::new(20.0, 25.0).unwrap(),
                    h0: Gaussian::new(2.0, 9.0).unwrap(),
                },
            ),
            (
                Feature::Ihpc,
                FeatureModel {
                    h1: Gaussian::new(0.0, 1e-8).unwrap(),
                    h0: Gaussian::new(0.0, 1e-5).unwrap(),
                },
            ),
        ])
        .unwrap();
        let x = FeatureVector {
            as_db: Some(20.0),
            ihpc_s: Some(0.0),
            icpc_rad: Some(3.0),
        };
        let expected = -0.5 * (2.0 * PI * 25.0).ln() - 0.5 * (2.0 * PI * 1e-8).ln();
        assert!((log_likelihood(&x, &model, Hypothesis::H1) - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_hypotheses_are_indistinguishable() {
        let model = model_as((5.0, 4.0), (5.0, 4.0));
        for v in [-10.0, 0.0, 5.0, 33.0] {
            let x = as_only(v);
            assert_eq!(
                log_likelihood(&x, &model, Hypothesis::H1),
                log_likelihood(&x, &model, Hypothesis::H0)
            );
            assert_eq!(posterior(&x, &model, Hypothesis::H1).probability, 0.5);
        }
    }

    #[test]
    fn posterior_behaviour() {
        let model = model_as((20.0, 25.0), (2.0, 9.0));
        let p = posterior(&as_only(20.0), &model, Hypothesis::H1);
        assert!(p.probability > 0.99 && !p.degenerate);
        let far = posterior(&as_only(1e6), &model, Hypothesis::H1);
        assert!(far.degenerate);
        assert_eq!(far.probability, 0.5);
    }

    #[test]
    fn fitting_moments_and_errors() {
        let mut labeled: Vec<(FeatureVector, Hypothesis)> = [10.0, 20.0, 30.0]
            .iter()
            .map(|&v| (as_only(v), Hypothesis::H1))
            .collect();
        labeled.extend(
            [1.0, 2.0, 4.0]
                .iter()
                .map(|&v| (as_only(v), Hypothesis::H0)),
        );
        let m = fit_model(&labeled, FeatureSet::AS, 0).unwrap();
        let fm = m.get(Feature::As).unwrap();
        assert_eq!(fm.h1.mean, 20.0);
        assert_eq!(fm.h1.var, 100.0);

        match fit_model(&labeled, FeatureSet::AS, MIN_SAMPLES_PER_CELL) {
            Err(Error::Training(msg)) => assert!(msg.contains("as.h1")),
            other => panic!("{other:?}"),
        }
        match fit_model(&labeled, FeatureSet::AS_IHPC, 0) {
            Err(Error::Training(msg)) => assert!(msg.contains("ihpc.h1")),
            other => panic!("{other:?}"),
        }
        let flat: Vec<_> = [10.0, 20.0, 30.0]
            .iter()
            .map(|&v| (as_only(v), Hypothesis::H1))
            .chain((0..3).map(|_| (as_only(7.0), Hypothesis::H0)))
            .collect();
        assert!(matches!(
            fit_model(&flat, FeatureSet::AS, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn restriction() {
        let model = model_as((1.0, 1.0), (0.0, 1.0));
        assert!(model.restricted(FeatureSet::AS_IHPC).is_err());
        assert_eq!(model.restricted(FeatureSet::AS).unwrap(), model);
        assert!(Gaussian::new(0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(
            pairs in proptest::collection::vec((-5i32..=5, -5i32..=5), 0..50),
        ) {
            let h1: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let h0: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            prop_assert_eq!(best_boundary(&h1, &h0).m_star, brute_force(&h1, &h0));
        }

        #[test]
        fn common_offset_leaves_boundary_unchanged(
            pairs in proptest::collection::vec((-5i32..=5, -5i32..=5), 1..50),
            offsets in proptest::collection::vec(-8i32..=8, 50),
        ) {
            let h1: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let h0: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let s1: Vec<f64> = h1.iter().zip(&offsets).map(|(v, c)| v + *c as f64).collect();
            let s0: Vec<f64> = h0.iter().zip(&offsets).map(|(v, c)| v + *c as f64).collect();
            prop_assert_eq!(best_boundary(&h1, &h0).m_star, best_boundary(&s1, &s0).m_star);
        }

        #[test]
        fn raising_one_llr_never_pulls_the_boundary_below_it(
            llr in proptest::collection::vec(-4i32..=4, 1..40),
            pick in 0usize..40,
            bump in 1i32..6,
        ) {
            let k = pick % llr.len();
            let zeros = vec![0.0; llr.len()];
            let before: Vec<f64> = llr.iter().map(|&v| v as f64).collect();
            let mut after = before.clone();
            after[k] += bump as f64;
            let m0 = best_boundary(&before, &zeros).m_star;
            let m1 = best_boundary(&after, &zeros).m_star;
            prop_assert_eq!(m1, brute_force(&after, &zeros));
            if m0 > k {
                prop_assert!(m1 > k);
            }
        }

        #[test]
        fn posteriors_sum_to_one(v in -50.0f64..80.0) {
            let model = model_as((20.0, 25.0), (2.0, 9.0));
            let x = as_only(v);
            let s = posterior(&x, &model, Hypothesis::H1).probability
                + posterior(&x, &model, Hypothesis::H0).probability;
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
