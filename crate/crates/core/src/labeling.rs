//! Pseudo-label construction for unlabeled instances.
//!
//! Four strategies share the same input, the prediction on a weakly
//! perturbed view:
//!
//! * CSSL builds a credal target around the (optionally aligned) argmax,
//!   with a precisiation degree equal to the mass the prediction puts
//!   elsewhere. It never discards an instance.
//! * LSMatch turns the same `(y, alpha)` into a label-smoothed target.
//! * FixMatch keeps a hard argmax label only above a confidence threshold.
//! * UPSMatch additionally requires a low predictive uncertainty.

use serde::{Deserialize, Serialize};

use crate::credal::{argmax, CredalTarget, ProbDist, EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PseudoLabel {
    Hard(usize),
    Soft(ProbDist),
    Credal(CredalTarget),
    Skip,
}

impl PseudoLabel {
    pub fn is_skip(&self) -> bool {
        matches!(self, PseudoLabel::Skip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Cssl,
    LsMatch,
    FixMatch,
    UpsMatch,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Cssl => "cssl",
            StrategyKind::LsMatch => "lsmatch",
            StrategyKind::FixMatch => "fixmatch",
            StrategyKind::UpsMatch => "upsmatch",
        }
    }

    /// Whether the strategy can discard instances through a threshold.
    pub fn is_thresholded(self) -> bool {
        matches!(self, StrategyKind::FixMatch | StrategyKind::UpsMatch)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `tau` and `kappa` only matter for the thresholded strategies,
/// `min_alpha` only for CSSL and LSMatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub min_alpha: f64,
    #[serde(default)]
    pub use_alignment: Option<bool>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_tau() -> f64 {
    0.95
}

fn default_kappa() -> f64 {
    0.1
}

fn default_mc_samples() -> usize {
    8
}

fn default_dropout() -> f64 {
    0.3
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            tau: default_tau(),
            kappa: default_kappa(),
            min_alpha: 0.0,
            use_alignment: None,
            mc_samples: default_mc_samples(),
            dropout_rate: default_dropout(),
        }
    }

    pub fn cssl() -> Self {
        Self::new(StrategyKind::Cssl)
    }

    pub fn lsmatch() -> Self {
        Self::new(StrategyKind::LsMatch)
    }

    pub fn fixmatch(tau: f64) -> Self {
        Self { tau, ..Self::new(StrategyKind::FixMatch) }
    }

    pub fn upsmatch(tau: f64, kappa: f64) -> Self {
        Self { tau, kappa, ..Self::new(StrategyKind::UpsMatch) }
    }

    pub fn with_alignment(mut self, on: bool) -> Self {
        self.use_alignment = Some(on);
        self
    }

    /// Alignment defaults to on for CSSL/LSMatch and off for the hard-label baselines.
    pub fn alignment_enabled(&self) -> bool {
        self.use_alignment
            .unwrap_or(matches!(self.kind, StrategyKind::Cssl | StrategyKind::LsMatch))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau = {} outside [0, 1]", self.tau)));
        }
        if self.kappa.is_nan() || self.kappa < 0.0 {
            return Err(Error::Config(format!("kappa = {} must be >= 0", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.min_alpha) {
            return Err(Error::Config(format!("min_alpha = {} outside [0, 1]", self.min_alpha)));
        }
        if self.mc_samples < 1 {
            return Err(Error::Config("mc_samples must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate = {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Class prior and running mean of past predictions used to reweight scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState {
    pub class_prior: ProbDist,
    pub running_mean: ProbDist,
    pub decay: f64,
}

impl AlignmentState {
    /// Starts the running mean at the uniform distribution.
    pub fn new(class_prior: ProbDist, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("alignment decay = {decay} outside [0, 1)")));
        }
        let running_mean = ProbDist::uniform(class_prior.num_classes())?;
        Ok(Self { class_prior, running_mean, decay })
    }

    /// Prior estimated from the empirical class frequencies of labeled data.
    pub fn from_labels(labels: &[usize], classes: usize, decay: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("labels"));
        }
        let mut counts = vec![0.0; classes];
        for &y in labels {
            if y >= classes {
                return Err(Error::ClassOutOfRange { class: y, classes });
            }
            counts[y] += 1.0;
        }
        Self::new(ProbDist::from_scores(&counts)?, decay)
    }

    pub fn num_classes(&self) -> usize {
        self.class_prior.num_classes()
    }
}

/// `q(y) = p_hat(y) * prior(y) / running_mean(y)`, left unnormalized.
pub fn align_scores(p_hat: &ProbDist, state: &AlignmentState) -> Result<Vec<f64>> {
    let k = state.num_classes();
    if p_hat.num_classes() != k {
        return Err(Error::DimensionMismatch { expected: k, found: p_hat.num_classes() });
    }
    Ok(p_hat
        .probs()
        .iter()
        .zip(state.class_prior.probs())
        .zip(state.running_mean.probs())
        .map(|((p, prior), mean)| p * prior / mean.max(EPS))
        .collect())
}

/// Reference class and precisiation degree from (possibly unnormalized)
/// scores: `alpha = max(min_alpha, 1 - q(y) / sum q)`.
pub fn adaptive_alpha(q: &[f64], min_alpha: f64) -> Result<(usize, f64)> {
    let total: f64 = q.iter().sum();
    if q.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::ZeroScores);
    }
    let y = argmax(q);
    let alpha = (1.0 - q[y] / total).max(min_alpha).clamp(0.0, 1.0);
    Ok((y, alpha))
}

/// Reference class and `alpha`; without alignment the prediction is
/// already normalized, so `alpha = max(min_alpha, 1 - max p_hat)` exactly.
fn reference_and_alpha(p_hat: &ProbDist, state: &AlignmentState, cfg: &StrategyConfig) -> Result<(usize, f64)> {
    if cfg.alignment_enabled() {
        adaptive_alpha(&align_scores(p_hat, state)?, cfg.min_alpha)
    } else {
        Ok((p_hat.argmax(), (1.0 - p_hat.max_prob()).max(cfg.min_alpha).clamp(0.0, 1.0)))
    }
}

pub fn make_cssl_label(p_hat: &ProbDist, state: &AlignmentState, cfg: &StrategyConfig) -> Result<PseudoLabel> {
    let (y, alpha) = reference_and_alpha(p_hat, state, cfg)?;
    Ok(PseudoLabel::Credal(CredalTarget::new(y, alpha)?))
}

/// Smoothed target with `1 - (K-1) alpha / K` on the reference class and
/// `alpha / K` on every other class.
pub fn smoothed_target(classes: usize, ref_class: usize, alpha: f64) -> Result<ProbDist> {
    if ref_class >= classes {
        return Err(Error::ClassOutOfRange { class: ref_class, classes });
    }
    let k = classes as f64;
    let mut probs = vec![alpha / k; classes];
    probs[ref_class] = 1.0 - (k - 1.0) * alpha / k;
    ProbDist::new(probs)
}

pub fn make_lsmatch_label(p_hat: &ProbDist, state: &AlignmentState, cfg: &StrategyConfig) -> Result<PseudoLabel> {
    let (y, alpha) = reference_and_alpha(p_hat, state, cfg)?;
    Ok(PseudoLabel::Soft(smoothed_target(p_hat.num_classes(), y, alpha)?))
}

/// Hard argmax label when the confidence reaches `tau`.
///
/// With alignment enabled (the "DA" variant) the gate and the argmax use
/// the renormalized aligned scores.
pub fn make_fixmatch_label(p_hat: &ProbDist, state: &AlignmentState, cfg: &StrategyConfig) -> Result<PseudoLabel> {
    let scores = if cfg.alignment_enabled() {
        ProbDist::from_scores(&align_scores(p_hat, state)?)?
    } else {
        p_hat.clone()
    };
    if scores.max_prob() >= cfg.tau {
        Ok(PseudoLabel::Hard(scores.argmax()))
    } else {
        Ok(PseudoLabel::Skip)
    }
}

/// FixMatch gate plus an uncertainty gate `uncertainty <= kappa`.
pub fn make_upsmatch_label(
    p_hat: &ProbDist,
    uncertainty: f64,
    state: &AlignmentState,
    cfg: &StrategyConfig,
) -> Result<PseudoLabel> {
    if uncertainty.is_nan() || uncertainty < 0.0 {
        return Err(Error::Config(format!("uncertainty {uncertainty} must be >= 0")));
    }
    match make_fixmatch_label(p_hat, state, cfg)? {
        PseudoLabel::Hard(y) if uncertainty <= cfg.kappa => Ok(PseudoLabel::Hard(y)),
        _ => Ok(PseudoLabel::Skip),
    }
}

/// Dispatches on `cfg.kind`. `uncertainty` is required for UPSMatch only.
pub fn make_label(
    p_hat: &ProbDist,
    uncertainty: Option<f64>,
    state: &AlignmentState,
    cfg: &StrategyConfig,
) -> Result<PseudoLabel> {
    match cfg.kind {
        StrategyKind::Cssl => make_cssl_label(p_hat, state, cfg),
        StrategyKind::LsMatch => make_lsmatch_label(p_hat, state, cfg),
        StrategyKind::FixMatch => make_fixmatch_label(p_hat, state, cfg),
        StrategyKind::UpsMatch => {
            let u = uncertainty.ok_or_else(|| Error::Config("UPSMatch needs an uncertainty estimate".into()))?;
            make_upsmatch_label(p_hat, u, state, cfg)
        }
    }
}

/// Population standard deviation, across stochastic passes, of the
/// probability assigned to the argmax class of the mean prediction.
pub fn predictive_uncertainty(samples: &[ProbDist]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: samples.len() });
    }
    let k = samples[0].num_classes();
    let mut mean = vec![0.0; k];
    for s in samples {
        if s.num_classes() != k {
            return Err(Error::DimensionMismatch { expected: k, found: s.num_classes() });
        }
        for (m, p) in mean.iter_mut().zip(s.probs()) {
            *m += p;
        }
    }
    let n = samples.len() as f64;
    let y = argmax(&mean);
    // shifted by the first sample so that identical samples give exactly 0
    let shift = samples[0].probs()[y];
    let (sum, sum_sq) = samples.iter().fold((0.0, 0.0), |(s, sq), p| {
        let d = p.probs()[y] - shift;
        (s + d, sq + d * d)
    });
    let var = (sum_sq / n - (sum / n).powi(2)).max(0.0);
    Ok(var.sqrt())
}

/// EMA step of the running mean, re-clamped to [`EPS`] and renormalized.
pub fn update_alignment(state: &AlignmentState, batch_mean: &ProbDist) -> Result<AlignmentState> {
    let k = state.num_classes();
    if batch_mean.num_classes() != k {
        return Err(Error::DimensionMismatch { expected: k, found: batch_mean.num_classes() });
    }
    let d = state.decay;
    let mixed: Vec<f64> = state
        .running_mean
        .probs()
        .iter()
        .zip(batch_mean.probs())
        .map(|(r, m)| (d * r + (1.0 - d) * m).max(EPS))
        .collect();
    Ok(AlignmentState {
        class_prior: state.class_prior.clone(),
        running_mean: ProbDist::from_scores(&mixed)?,
        decay: d,
    })
}
