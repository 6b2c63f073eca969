//! Probability simplices, possibility distributions and credal targets.
//!
//! A credal target `Q(y, alpha)` is the set of distributions that put at
//! least `1 - alpha` of their mass on the reference class `y`. Learning from
//! such a target uses the optimistic superset loss: the smallest KL
//! divergence between any member of the set and the prediction. For this
//! family of sets the minimizer is available in closed form (see
//! [`project_to_boundary`]), so the loss and its gradient are cheap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every value before it enters a logarithm.
pub const EPS: f64 = 1e-12;

/// Allowed deviation of a distribution's total mass from 1.
pub const SUM_TOL: f64 = 1e-9;

/// Rounding slack for the event-mass sums of [`possibility_contains`].
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Largest class count accepted by the subset-enumeration membership test.
pub const MAX_ENUM_CLASSES: usize = 16;

/// Index of the largest entry, ties resolved to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// A categorical distribution over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {v} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative scores with a positive sum.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution("scores must be finite and non-negative".into()));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroScores);
        }
        Self::new(scores.iter().map(|v| v / total).collect())
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![1.0 / classes as f64; classes])
    }

    /// Degenerate distribution on `class`.
    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::ClassOutOfRange { class, classes });
        }
        let mut probs = vec![0.0; classes];
        probs[class] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.0[self.argmax()]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(p: ProbDist) -> Self {
        p.0
    }
}

/// Normalized possibility distribution: plausibility degrees in `[0, 1]`
/// with at least one fully plausible class.
#[derive(Debug, Clone, PartialEq)]
pub struct PossibilityDist(Vec<f64>);

impl PossibilityDist {
    pub fn new(plaus: Vec<f64>) -> Result<Self> {
        if plaus.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidPossibility("degrees must lie in [0, 1]".into()));
        }
        if !plaus.contains(&1.0) {
            return Err(Error::InvalidPossibility("maximum degree must be exactly 1".into()));
        }
        Ok(Self(plaus))
    }

    /// `pi(y) = 1`, `pi(y') = alpha` elsewhere: the possibility form of a credal target.
    pub fn from_target(target: CredalTarget, classes: usize) -> Result<Self> {
        target.check(classes)?;
        let mut plaus = vec![target.alpha; classes];
        plaus[target.ref_class] = 1.0;
        Self::new(plaus)
    }

    pub fn plaus(&self) -> &[f64] {
        &self.0
    }
}

/// `Q(y, alpha) = { p : p(y) >= 1 - alpha }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredalTarget {
    pub ref_class: usize,
    pub alpha: f64,
}

impl CredalTarget {
    pub fn new(ref_class: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self { ref_class, alpha })
    }

    fn check(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.ref_class >= classes {
            return Err(Error::ClassOutOfRange { class: self.ref_class, classes });
        }
        Ok(())
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn ln_clamped(v: f64) -> f64 {
    v.max(EPS).ln()
}

fn contains_raw(target: CredalTarget, p: &[f64]) -> bool {
    p[target.ref_class] >= 1.0 - target.alpha
}

/// Membership in `Q(y, alpha)`; the boundary counts as inside.
pub fn credal_contains(target: CredalTarget, p: &ProbDist) -> Result<bool> {
    target.check(p.num_classes())?;
    Ok(contains_raw(target, p.probs()))
}

/// Membership in the credal set induced by `pi`, checked against every
/// event: `P(Y) <= max_{y in Y} pi(y)` for all non-empty `Y`.
pub fn possibility_contains(pi: &PossibilityDist, p: &ProbDist) -> Result<bool> {
    let k = pi.plaus().len();
    check_dims(k, p.num_classes())?;
    if k > MAX_ENUM_CLASSES {
        return Err(Error::TooManyClasses(k));
    }
    let probs = p.probs();
    let plaus = pi.plaus();
    for subset in 1u32..(1u32 << k) {
        let mut mass = 0.0;
        let mut upper = 0.0f64;
        for i in 0..k {
            if subset & (1 << i) != 0 {
                mass += probs[i];
                upper = upper.max(plaus[i]);
            }
        }
        if mass > upper + BOUNDARY_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

fn project_raw(target: CredalTarget, p_hat: &[f64]) -> Result<Vec<f64>> {
    let y = target.ref_class;
    let rest: f64 = p_hat.iter().enumerate().filter(|(i, _)| *i != y).map(|(_, v)| v).sum();
    if rest <= 0.0 {
        return Err(Error::DegenerateProjection);
    }
    Ok(p_hat
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == y { 1.0 - target.alpha } else { target.alpha * v / rest })
        .collect())
}

/// KL-projection of `p_hat` onto the boundary of `Q(y, alpha)`: the
/// reference class gets exactly `1 - alpha` and the remaining `alpha` is
/// split in proportion to the predicted off-reference mass.
///
/// Callers are expected to have checked that `p_hat` lies outside the set;
/// the formula is still evaluated for members.
pub fn project_to_boundary(target: CredalTarget, p_hat: &ProbDist) -> Result<ProbDist> {
    target.check(p_hat.num_classes())?;
    ProbDist::new(project_raw(target, p_hat.probs())?)
}

/// `sum p(y) ln(p(y) / q(y))`, with `q` clamped to [`EPS`] inside the log
/// and `0 ln 0 = 0`.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_dims(p.num_classes(), q.num_classes())?;
    Ok(kl_raw(p.probs(), q.probs()))
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (ln_clamped(pi) - ln_clamped(qi)) } else { 0.0 })
        .sum()
}

/// `-sum p(y) ln q(y)` with `q` clamped to [`EPS`].
pub fn cross_entropy(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_dims(p.num_classes(), q.num_classes())?;
    Ok(cross_entropy_raw(p.probs(), q.probs()))
}

pub(crate) fn cross_entropy_raw(p: &[f64], q: &[f64]) -> f64 {
    -p.iter().zip(q).map(|(&pi, &qi)| if pi > 0.0 { pi * ln_clamped(qi) } else { 0.0 }).sum::<f64>()
}

/// Gradient of [`cross_entropy`] with respect to the entries of `q`.
pub fn cross_entropy_grad(p: &ProbDist, q: &ProbDist) -> Result<Vec<f64>> {
    check_dims(p.num_classes(), q.num_classes())?;
    Ok(cross_entropy_grad_raw(p.probs(), q.probs()))
}

pub(crate) fn cross_entropy_grad_raw(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(&pi, &qi)| if pi > 0.0 { -pi / qi.max(EPS) } else { 0.0 }).collect()
}

/// Optimistic superset loss with KL as base loss: zero inside the credal
/// set, otherwise the KL divergence from the boundary projection.
pub fn osl_kl_loss(target: CredalTarget, p_hat: &ProbDist) -> Result<f64> {
    target.check(p_hat.num_classes())?;
    osl_kl_loss_raw(target, p_hat.probs())
}

/// [`osl_kl_loss`] on raw entries that need not sum to one.
///
/// Used where the loss is probed off the simplex, e.g. by finite differences.
pub fn osl_kl_loss_raw(target: CredalTarget, p_hat: &[f64]) -> Result<f64> {
    target.check(p_hat.len())?;
    if contains_raw(target, p_hat) {
        return Ok(0.0);
    }
    let projected = project_raw(target, p_hat)?;
    Ok(kl_raw(&projected, p_hat).max(0.0))
}

/// Gradient of [`osl_kl_loss`] with respect to the entries of `p_hat`,
/// differentiating through the projection.
///
/// Outside the set the loss equals
/// `(1-a) ln((1-a)/p(y)) + a ln(a/S)` with `S = sum_{y' != y} p(y')`, so the
/// gradient is `-(1-a)/p(y)` at the reference class and `-a/S` elsewhere.
/// Members (boundary included) get the zero vector.
pub fn osl_kl_grad(target: CredalTarget, p_hat: &ProbDist) -> Result<Vec<f64>> {
    target.check(p_hat.num_classes())?;
    osl_kl_grad_raw(target, p_hat.probs())
}

pub fn osl_kl_grad_raw(target: CredalTarget, p_hat: &[f64]) -> Result<Vec<f64>> {
    target.check(p_hat.len())?;
    let y = target.ref_class;
    if contains_raw(target, p_hat) {
        return Ok(vec![0.0; p_hat.len()]);
    }
    let rest: f64 = p_hat.iter().enumerate().filter(|(i, _)| *i != y).map(|(_, v)| v).sum();
    if rest <= 0.0 {
        return Err(Error::DegenerateProjection);
    }
    let alpha = target.alpha;
    Ok((0..p_hat.len())
        .map(|i| if i == y { -(1.0 - alpha) / p_hat[y].max(EPS) } else { -alpha / rest.max(EPS) })
        .collect())
}

/// Gradient with the projection held fixed: `-p_r / p_hat`, i.e. the
/// cross-entropy gradient towards a constant target `p_r`.
///
/// Coincides analytically with [`osl_kl_grad`]: the projected mass off the
/// reference class is always `alpha`, so the terms from differentiating
/// the projection cancel.
pub fn osl_kl_grad_detached(target: CredalTarget, p_hat: &ProbDist) -> Result<Vec<f64>> {
    target.check(p_hat.num_classes())?;
    osl_kl_grad_detached_raw(target, p_hat.probs())
}

pub fn osl_kl_grad_detached_raw(target: CredalTarget, p_hat: &[f64]) -> Result<Vec<f64>> {
    target.check(p_hat.len())?;
    if contains_raw(target, p_hat) {
        return Ok(vec![0.0; p_hat.len()]);
    }
    let projected = project_raw(target, p_hat)?;
    Ok(cross_entropy_grad_raw(&projected, p_hat))
}
