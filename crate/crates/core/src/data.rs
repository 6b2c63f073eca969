//! Seeded synthetic semi-supervised tasks and vector perturbations.
//!
//! Two tasks are available: a 1-D binary problem whose positive-class
//! probability is a sigmoid of the feature, and isotropic Gaussian blobs
//! with class means on a circle. Both return the ground-truth posterior so
//! learned models can be compared against it.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::credal::ProbDist;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledExample {
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sigmoid1d,
    GaussBlobs,
}

/// Ground-truth conditional class distribution `p*(. | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// `p*(1 | x) = 1 / (1 + exp(-steepness (x - midpoint)))`.
    Sigmoid { steepness: f64, midpoint: f64 },
    /// Equal-weight mixture of unit-variance spherical Gaussians.
    Blobs { means: Vec<Vec<f64>> },
}

impl Truth {
    pub fn num_classes(&self) -> usize {
        match self {
            Truth::Sigmoid { .. } => 2,
            Truth::Blobs { means } => means.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Truth::Sigmoid { .. } => 1,
            Truth::Blobs { means } => means[0].len(),
        }
    }

    pub fn positive_prob(steepness: f64, midpoint: f64, x: f64) -> f64 {
        1.0 / (1.0 + (-steepness * (x - midpoint)).exp())
    }

    pub fn posterior(&self, x: &[f64]) -> Result<ProbDist> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        match self {
            Truth::Sigmoid { steepness, midpoint } => {
                let p = Self::positive_prob(*steepness, *midpoint, x[0]);
                ProbDist::new(vec![1.0 - p, p])
            }
            Truth::Blobs { means } => {
                // log-sum-exp over -|x - mu|^2 / 2
                let logits: Vec<f64> = means
                    .iter()
                    .map(|mu| -0.5 * mu.iter().zip(x).map(|(m, v)| (v - m).powi(2)).sum::<f64>())
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                ProbDist::from_scores(&w)
            }
        }
    }

    /// Draws a label from `p*(. | x)`.
    pub fn sample_label(&self, x: &[f64], rng: &mut Rng) -> Result<usize> {
        let p = self.posterior(x)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.probs().iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(p.num_classes() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub truth: Truth,
    pub seed: u64,
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl SyntheticTask {
    pub fn num_classes(&self) -> usize {
        self.truth.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.truth.dim()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.labeled.iter().map(|e| e.y).collect()
    }
}

/// 1-D task on the unit interval. Labeled, unlabeled and test features are
/// independent uniform draws; labels are drawn from the sigmoid truth.
pub fn gen_sigmoid_task(
    n_labeled: usize,
    n_unlabeled: usize,
    n_test: usize,
    steepness: f64,
    midpoint: f64,
    seed: u64,
) -> Result<SyntheticTask> {
    let truth = Truth::Sigmoid { steepness, midpoint };
    let mut rng = stream(seed, Stream::Data);
    let labeled_draw = |rng: &mut Rng| -> Result<LabeledExample> {
        let x = vec![rng.random::<f64>()];
        let y = truth.sample_label(&x, rng)?;
        Ok(LabeledExample { x, y })
    };
    let labeled = (0..n_labeled).map(|_| labeled_draw(&mut rng)).collect::<Result<Vec<_>>>()?;
    let unlabeled = (0..n_unlabeled).map(|_| UnlabeledExample { x: vec![rng.random::<f64>()] }).collect();
    let test = (0..n_test).map(|_| labeled_draw(&mut rng)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticTask { kind: TaskKind::Sigmoid1d, truth, seed, labeled, unlabeled, test })
}

/// Class means on a circle of radius `separation` in the first two
/// coordinates (a line for `dim == 1`).
pub fn blob_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let mut mu = vec![0.0; dim];
            if dim == 1 {
                mu[0] = separation * (k as f64 - (classes as f64 - 1.0) / 2.0);
            } else {
                let angle = 2.0 * PI * k as f64 / classes as f64;
                mu[0] = separation * angle.cos();
                mu[1] = separation * angle.sin();
            }
            mu
        })
        .collect()
}

/// Gaussian-blobs task with `labeled_per_class` labeled points per class.
///
/// Features are drawn from the mixture (component first, then the
/// Gaussian) and labels from the mixture posterior at that feature. The
/// labeled split is stratified: draws are rejected until every class holds
/// exactly `labeled_per_class` points, so the labeled class frequencies are
/// uniform.
pub fn gen_blobs_task(
    classes: usize,
    dim: usize,
    separation: f64,
    labeled_per_class: usize,
    n_unlabeled: usize,
    n_test: usize,
    seed: u64,
) -> Result<SyntheticTask> {
    if classes < 2 {
        return Err(Error::Config(format!("blobs task needs at least 2 classes, got {classes}")));
    }
    if dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    let truth = Truth::Blobs { means: blob_means(classes, dim, separation) };
    let mut rng = stream(seed, Stream::Data);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let Truth::Blobs { means } = &truth else { unreachable!() };
    let draw = |rng: &mut Rng| -> Result<LabeledExample> {
        let component = rng.random_range(0..classes);
        let x: Vec<f64> = means[component].iter().map(|m| m + normal.sample(rng)).collect();
        let y = truth.sample_label(&x, rng)?;
        Ok(LabeledExample { x, y })
    };

    let mut labeled = Vec::with_capacity(classes * labeled_per_class);
    let mut counts = vec![0usize; classes];
    while labeled.len() < classes * labeled_per_class {
        let e = draw(&mut rng)?;
        if counts[e.y] < labeled_per_class {
            counts[e.y] += 1;
            labeled.push(e);
        }
    }
    let unlabeled = (0..n_unlabeled).map(|_| draw(&mut rng).map(|e| UnlabeledExample { x: e.x })).collect::<Result<_>>()?;
    let test = (0..n_test).map(|_| draw(&mut rng)).collect::<Result<_>>()?;
    Ok(SyntheticTask { kind: TaskKind::GaussBlobs, truth, seed, labeled, unlabeled, test })
}

/// Monte-Carlo estimate of the Bayes risk `E[1 - max_y p*(y | x)]`.
pub fn bayes_risk_mc(truth: &Truth, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Stream::Data);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut total = 0.0;
    for _ in 0..draws {
        let x: Vec<f64> = match truth {
            Truth::Sigmoid { .. } => vec![rng.random::<f64>()],
            Truth::Blobs { means } => {
                let c = rng.random_range(0..means.len());
                means[c].iter().map(|m| m + normal.sample(&mut rng)).collect()
            }
        };
        total += 1.0 - truth.posterior(&x)?.max_prob();
    }
    Ok(total / draws as f64)
}

/// Weak view: `x` plus `N(0, sigma_w^2)` noise per coordinate.
pub fn weak_augment(x: &[f64], sigma_w: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma_w == 0.0 {
        return x.to_vec();
    }
    let noise = Normal::new(0.0, sigma_w).expect("sigma_w must be finite and >= 0");
    x.iter().map(|v| v + noise.sample(rng)).collect()
}

/// Strong view: `N(0, sigma_s^2)` noise, then each coordinate zeroed with
/// probability `mask_prob`.
pub fn strong_augment(x: &[f64], sigma_s: f64, mask_prob: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = weak_augment(x, sigma_s, rng);
    if mask_prob > 0.0 {
        for v in &mut out {
            if rng.random::<f64>() < mask_prob {
                *v = 0.0;
            }
        }
    }
    out
}

/// Writes examples as CSV with columns `x0, .., x{d-1}` and, when labels
/// are given, a trailing `label` column.
pub fn write_csv<W: Write>(writer: W, features: &[&[f64]], labels: Option<&[usize]>) -> Result<()> {
    let dim = features.first().map_or(0, |x| x.len());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, x) in features.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
        }
        let mut row: Vec<String> = x.iter().map(|v| format_float(*v)).collect();
        if let Some(ls) = labels {
            row.push(ls[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]. Returns features and, when a
/// `label` column is present, labels.
#[allow(clippy::type_complexity)]
pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<Vec<f64>>, Option<Vec<usize>>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let has_label = header.iter().next_back() == Some("label");
    let dim = header.len() - usize::from(has_label);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|e| Error::Format(format!("row {}: column {i}: {e}", line + 2)))
        };
        features.push((0..dim).map(parse).collect::<Result<Vec<_>>>()?);
        if has_label {
            labels.push(
                record[dim]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Format(format!("row {}: label: {e}", line + 2)))?,
            );
        }
    }
    Ok((features, has_label.then_some(labels)))
}

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}
