//! The semi-supervised training loop.
//!
//! Each step draws `B` labeled and `mu * B` unlabeled instances, builds
//! pseudo-labels from deterministic predictions on weak views, and
//! minimizes
//!
//! ```text
//! L = mean_labeled CE(y, p(A_w(x))) + lambda_u * (1 / (mu B)) sum_unlabeled loss(label, p(A_s(x)))
//! ```
//!
//! where skipped instances contribute zero but stay in the `mu B`
//! denominator. Parameters are updated with Nesterov SGD on the cosine
//! schedule, an EMA shadow tracks them, and evaluation runs on the shadow.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credal::{cross_entropy_grad_raw, cross_entropy_raw, osl_kl_grad_detached_raw, osl_kl_grad_raw, osl_kl_loss_raw, ProbDist};
use crate::data::{format_float, strong_augment, weak_augment, LabeledExample, SyntheticTask, UnlabeledExample};
use crate::error::{Error, Result};
use crate::labeling::{make_label, predictive_uncertainty, update_alignment, AlignmentState, PseudoLabel, StrategyConfig, StrategyKind};
use crate::metrics::{ece, EvalReport, ECE_BINS};
use crate::neural::{cosine_lr, hard_label_loss, sgd_step, Activation, EmaShadow, Mlp, OptimizerState};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled multiplicity `mu`.
    pub mu: usize,
    pub lambda_u: f64,
    pub eta: f64,
    pub momentum: f64,
    #[serde(default = "yes")]
    pub nesterov: bool,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub strategy: StrategyConfig,
    pub ema_decay: f64,
    #[serde(default = "default_alignment_decay")]
    pub alignment_decay: f64,
    pub sigma_w: f64,
    pub sigma_s: f64,
    pub mask_prob: f64,
    pub eval_every: usize,
    #[serde(default)]
    pub detach_projection: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Dropout applied to hidden units during training.
    #[serde(default)]
    pub dropout_rate: f64,
}

fn yes() -> bool {
    true
}

fn default_alignment_decay() -> f64 {
    0.999
}

impl TrainConfig {
    /// Table-4 style defaults scaled down for a small MLP.
    pub fn new(strategy: StrategyConfig) -> Self {
        Self {
            batch_size: 64,
            mu: 7,
            lambda_u: 1.0,
            eta: 0.03,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 5e-4,
            total_steps: 1000,
            seed: 0,
            strategy,
            ema_decay: 0.999,
            alignment_decay: default_alignment_decay(),
            sigma_w: 0.1,
            sigma_s: 0.5,
            mask_prob: 0.2,
            eval_every: 50,
            detach_projection: false,
            hidden: vec![32],
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if self.mu < 1 {
            return fail("mu must be >= 1".into());
        }
        if !(self.lambda_u >= 0.0) {
            return fail(format!("lambda_u = {} must be >= 0", self.lambda_u));
        }
        if self.total_steps < 1 {
            return fail("total_steps must be >= 1".into());
        }
        if self.eval_every < 1 {
            return fail("eval_every must be >= 1".into());
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return fail(format!("eta = {} must be positive", self.eta));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum = {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail(format!("ema_decay = {} outside [0, 1)", self.ema_decay));
        }
        if !(0.0..1.0).contains(&self.alignment_decay) {
            return fail(format!("alignment_decay = {} outside [0, 1)", self.alignment_decay));
        }
        if !(self.sigma_w >= 0.0) || !(self.sigma_s >= self.sigma_w) {
            return fail(format!("need 0 <= sigma_w <= sigma_s, got {} and {}", self.sigma_w, self.sigma_s));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return fail(format!("mask_prob = {} outside [0, 1)", self.mask_prob));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate = {} outside [0, 1)", self.dropout_rate));
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        self.strategy.validate()?;
        if self.strategy.kind == StrategyKind::UpsMatch && self.strategy.mc_samples < 2 {
            return fail("upsmatch needs mc_samples >= 2".into());
        }
        Ok(())
    }
}

/// Cyclic shuffled passes over `0..len`.
#[derive(Debug, Clone)]
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(len: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Draws labeled and unlabeled index batches from reshuffled passes over
/// each pool.
#[derive(Debug, Clone)]
pub struct BatchComposer {
    labeled: Cycler,
    unlabeled: Cycler,
    rng: Rng,
}

impl BatchComposer {
    pub fn new(n_labeled: usize, n_unlabeled: usize, seed: u64) -> Result<Self> {
        if n_labeled == 0 {
            return Err(Error::EmptyInput("labeled pool"));
        }
        if n_unlabeled == 0 {
            return Err(Error::EmptyInput("unlabeled pool"));
        }
        let mut rng = stream(seed, Stream::Batches);
        let labeled = Cycler::new(n_labeled, &mut rng);
        let unlabeled = Cycler::new(n_unlabeled, &mut rng);
        Ok(Self { labeled, unlabeled, rng })
    }

    /// `(B labeled indices, mu * B unlabeled indices)`.
    pub fn next(&mut self, batch_size: usize, mu: usize) -> (Vec<usize>, Vec<usize>) {
        let l = self.labeled.take(batch_size, &mut self.rng);
        let u = self.unlabeled.take(mu * batch_size, &mut self.rng);
        (l, u)
    }
}

/// Convenience wrapper returning the instances of one batch.
pub fn compose_batches<'a>(
    composer: &mut BatchComposer,
    labeled: &'a [LabeledExample],
    unlabeled: &'a [UnlabeledExample],
    batch_size: usize,
    mu: usize,
) -> (Vec<&'a LabeledExample>, Vec<&'a UnlabeledExample>) {
    let (l, u) = composer.next(batch_size, mu);
    (l.into_iter().map(|i| &labeled[i]).collect(), u.into_iter().map(|i| &unlabeled[i]).collect())
}

/// Loss of a prediction against a pseudo-label and its gradient with
/// respect to the predicted probabilities. `Skip` yields `(0, 0)`.
pub fn label_loss(label: &PseudoLabel, p: &ProbDist, detach_projection: bool) -> Result<(f64, Vec<f64>)> {
    let probs = p.probs();
    match label {
        PseudoLabel::Skip => Ok((0.0, vec![0.0; probs.len()])),
        PseudoLabel::Hard(y) => {
            if *y >= probs.len() {
                return Err(Error::ClassOutOfRange { class: *y, classes: probs.len() });
            }
            Ok(hard_label_loss(p, *y))
        }
        PseudoLabel::Soft(q) => {
            if q.num_classes() != probs.len() {
                return Err(Error::DimensionMismatch { expected: probs.len(), found: q.num_classes() });
            }
            Ok((cross_entropy_raw(q.probs(), probs), cross_entropy_grad_raw(q.probs(), probs)))
        }
        PseudoLabel::Credal(t) => {
            let loss = osl_kl_loss_raw(*t, probs)?;
            let grad = if detach_projection { osl_kl_grad_detached_raw(*t, probs)? } else { osl_kl_grad_raw(*t, probs)? };
            Ok((loss, grad))
        }
    }
}

/// Precisiation degree a label stands for: the credal/smoothing `alpha`,
/// zero for hard labels, `None` for skipped instances.
fn label_alpha(label: &PseudoLabel) -> Option<f64> {
    match label {
        PseudoLabel::Credal(t) => Some(t.alpha),
        PseudoLabel::Soft(q) => {
            // invert q'(y) = 1 - (K - 1) alpha / K
            let k = q.num_classes() as f64;
            Some(((1.0 - q.max_prob()) * k / (k - 1.0)).clamp(0.0, 1.0))
        }
        PseudoLabel::Hard(_) => Some(0.0),
        PseudoLabel::Skip => None,
    }
}

/// Pseudo-labels for a batch of weak views, plus the mean weak prediction.
///
/// No gradient flows through this pass; UPSMatch draws its Monte-Carlo
/// dropout samples from `mc_rng`.
pub fn build_pseudo_labels(
    model: &Mlp,
    weak_views: &[Vec<f64>],
    alignment: &AlignmentState,
    strategy: &StrategyConfig,
    mc_rng: &mut Rng,
) -> Result<(Vec<PseudoLabel>, ProbDist)> {
    if weak_views.is_empty() {
        return Err(Error::EmptyInput("unlabeled batch"));
    }
    let k = model.num_classes();
    let mut mean = vec![0.0; k];
    let mut labels = Vec::with_capacity(weak_views.len());
    for x in weak_views {
        let p = model.predict(x)?;
        for (m, v) in mean.iter_mut().zip(p.probs()) {
            *m += v;
        }
        let uncertainty = if strategy.kind == StrategyKind::UpsMatch {
            let samples = (0..strategy.mc_samples)
                .map(|_| model.forward_with_rate(x, strategy.dropout_rate, Some(mc_rng)).map(|f| f.probs))
                .collect::<Result<Vec<_>>>()?;
            Some(predictive_uncertainty(&samples)?)
        } else {
            None
        };
        labels.push(make_label(&p, uncertainty, alignment, strategy)?);
    }
    let mean = ProbDist::from_scores(&mean)?;
    Ok((labels, mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledDiagnostics {
    /// Fraction of skipped instances.
    pub mask_rate: f64,
    /// Mean precisiation degree over non-skipped instances (0 when all are skipped).
    pub mean_alpha: f64,
}

/// Unlabeled loss of strong views against their pseudo-labels, averaged
/// over the full batch size. When `grads` is given, the gradient of
/// `scale * loss` is added to it.
pub fn unlabeled_loss(
    model: &Mlp,
    strong_views: &[Vec<f64>],
    labels: &[PseudoLabel],
    detach_projection: bool,
    mut dropout_rng: Option<&mut Rng>,
    mut grads: Option<(&mut [f64], f64)>,
) -> Result<(f64, UnlabeledDiagnostics)> {
    if strong_views.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), found: strong_views.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("unlabeled batch"));
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let mut skipped = 0usize;
    let mut alpha_sum = 0.0;
    for (x, label) in strong_views.iter().zip(labels) {
        let Some(alpha) = label_alpha(label) else {
            skipped += 1;
            continue;
        };
        alpha_sum += alpha;
        let trace = model.forward(x, dropout_rng.as_deref_mut())?;
        let (loss, grad_p) = label_loss(label, &trace.probs, detach_projection)?;
        total += loss;
        if let Some((g, scale)) = grads.as_mut() {
            if grad_p.iter().any(|v| *v != 0.0) {
                let scaled: Vec<f64> = grad_p.iter().map(|v| v * *scale / n).collect();
                model.backward(&trace, &scaled, g)?;
            }
        }
    }
    let used = labels.len() - skipped;
    let diagnostics = UnlabeledDiagnostics {
        mask_rate: skipped as f64 / n,
        mean_alpha: if used == 0 { 0.0 } else { alpha_sum / used as f64 },
    };
    Ok((total / n, diagnostics))
}

/// Mean cross-entropy of the (weak-view) predictions against hard labels.
/// When `grads` is given, the gradient of `scale * loss` is added to it.
pub fn labeled_loss(
    model: &Mlp,
    views: &[Vec<f64>],
    labels: &[usize],
    mut dropout_rng: Option<&mut Rng>,
    mut grads: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    if views.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), found: views.len() });
    }
    if views.is_empty() {
        return Err(Error::EmptyInput("labeled batch"));
    }
    let n = views.len() as f64;
    let mut total = 0.0;
    for (x, &y) in views.iter().zip(labels) {
        if y >= model.num_classes() {
            return Err(Error::ClassOutOfRange { class: y, classes: model.num_classes() });
        }
        let trace = model.forward(x, dropout_rng.as_deref_mut())?;
        let (loss, grad_p) = hard_label_loss(&trace.probs, y);
        total += loss;
        if let Some((g, scale)) = grads.as_mut() {
            let scaled: Vec<f64> = grad_p.iter().map(|v| v * *scale / n).collect();
            model.backward(&trace, &scaled, g)?;
        }
    }
    Ok(total / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub total_loss: f64,
    pub mask_rate: f64,
    pub mean_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Metrics of the EMA model.
    pub test_error: f64,
    pub test_ece: f64,
    /// Metrics of the raw (non-averaged) model.
    pub raw_test_error: f64,
    pub raw_test_ece: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalPoint>,
}

pub const RUN_CSV_HEADER: [&str; 11] = [
    "step",
    "lr",
    "labeled_loss",
    "unlabeled_loss",
    "total_loss",
    "mask_rate",
    "mean_alpha",
    "test_error",
    "test_ece",
    "raw_test_error",
    "raw_test_ece",
];

impl RunRecord {
    /// Mean EMA test error over the last 5% of evaluation points (at least one).
    pub fn final_error(&self) -> Option<f64> {
        self.tail_mean(|e| e.test_error)
    }

    pub fn final_ece(&self) -> Option<f64> {
        self.tail_mean(|e| e.test_ece)
    }

    fn tail_mean(&self, f: impl Fn(&EvalPoint) -> f64) -> Option<f64> {
        if self.evals.is_empty() {
            return None;
        }
        let n = (self.evals.len() as f64 * 0.05).ceil().max(1.0) as usize;
        let tail = &self.evals[self.evals.len() - n..];
        Some(tail.iter().map(f).sum::<f64>() / n as f64)
    }

    /// Mean mask rate over all steps.
    pub fn mean_mask_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.mask_rate).sum::<f64>() / self.steps.len() as f64
    }

    /// One row per evaluation point, joined with that step's training log.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(RUN_CSV_HEADER)?;
        for e in &self.evals {
            let s = self
                .steps
                .iter()
                .find(|s| s.step == e.step)
                .ok_or_else(|| Error::Format(format!("no training log for step {}", e.step)))?;
            let mut row = vec![s.step.to_string()];
            row.extend(
                [s.lr, s.labeled_loss, s.unlabeled_loss, s.total_loss, s.mask_rate, s.mean_alpha]
                    .into_iter()
                    .chain([e.test_error, e.test_ece, e.raw_test_error, e.raw_test_ece])
                    .map(format_float),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct TrainOutput {
    pub model: Mlp,
    pub ema_model: Mlp,
    pub record: RunRecord,
}

/// Training abort, carrying everything logged before the failure.
#[derive(Debug, Error)]
#[error("training aborted at step {step}: {source}")]
pub struct TrainFailure {
    pub step: usize,
    pub source: Error,
    pub record: RunRecord,
}

/// EMA and raw-model evaluation on a labeled set.
pub fn evaluate(model: &Mlp, examples: &[LabeledExample]) -> Result<EvalReport> {
    let preds = examples.iter().map(|e| model.predict(&e.x)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = examples.iter().map(|e| e.y).collect();
    ece(&preds, &labels, ECE_BINS)
}

pub fn init_model(cfg: &TrainConfig, input_dim: usize, classes: usize) -> Result<Mlp> {
    let mut sizes = vec![input_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(classes);
    Mlp::new(&sizes, cfg.activation, cfg.dropout_rate, &mut stream(cfg.seed, Stream::Init))
}

/// Runs `cfg.total_steps` optimizer steps on `task`.
pub fn train(cfg: &TrainConfig, task: &SyntheticTask) -> std::result::Result<TrainOutput, TrainFailure> {
    let mut record = RunRecord::default();
    match train_inner(cfg, task, &mut record) {
        Ok((model, ema_model)) => Ok(TrainOutput { model, ema_model, record }),
        Err((step, source)) => Err(TrainFailure { step, source, record }),
    }
}

fn train_inner(cfg: &TrainConfig, task: &SyntheticTask, record: &mut RunRecord) -> std::result::Result<(Mlp, Mlp), (usize, Error)> {
    let at = |step: usize| move |e: Error| (step, e);
    cfg.validate().map_err(at(0))?;
    let classes = task.num_classes();
    let mut model = init_model(cfg, task.dim(), classes).map_err(at(0))?;
    let mut opt = OptimizerState::new(model.num_params(), cfg.eta, cfg.momentum, cfg.nesterov, cfg.weight_decay);
    let mut ema = EmaShadow::new(&model, cfg.ema_decay);
    let mut alignment = AlignmentState::from_labels(&task.labels(), classes, cfg.alignment_decay).map_err(at(0))?;
    let mut composer = BatchComposer::new(task.labeled.len(), task.unlabeled.len(), cfg.seed).map_err(at(0))?;
    let mut aug_rng = stream(cfg.seed, Stream::Augment);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut mc_rng = stream(cfg.seed, Stream::Uncertainty);

    for step in 0..cfg.total_steps {
        let err = at(step);
        let lr = cosine_lr(cfg.eta, step, cfg.total_steps).map_err(err)?;
        let (lb, ub) = compose_batches(&mut composer, &task.labeled, &task.unlabeled, cfg.batch_size, cfg.mu);

        let labeled_views: Vec<Vec<f64>> = lb.iter().map(|e| weak_augment(&e.x, cfg.sigma_w, &mut aug_rng)).collect();
        let labels: Vec<usize> = lb.iter().map(|e| e.y).collect();
        let mut weak = Vec::with_capacity(ub.len());
        let mut strong = Vec::with_capacity(ub.len());
        for e in &ub {
            weak.push(weak_augment(&e.x, cfg.sigma_w, &mut aug_rng));
            strong.push(strong_augment(&e.x, cfg.sigma_s, cfg.mask_prob, &mut aug_rng));
        }

        let mut grads = vec![0.0; model.num_params()];
        let l_loss = labeled_loss(&model, &labeled_views, &labels, Some(&mut dropout_rng), Some((&mut grads, 1.0))).map_err(err)?;
        let (pseudo, batch_mean) = build_pseudo_labels(&model, &weak, &alignment, &cfg.strategy, &mut mc_rng).map_err(err)?;
        let (u_loss, diag) = if cfg.lambda_u > 0.0 {
            unlabeled_loss(&model, &strong, &pseudo, cfg.detach_projection, Some(&mut dropout_rng), Some((&mut grads, cfg.lambda_u)))
                .map_err(err)?
        } else {
            unlabeled_loss(&model, &strong, &pseudo, cfg.detach_projection, Some(&mut dropout_rng), None).map_err(err)?
        };
        let total = l_loss + cfg.lambda_u * u_loss;
        record.steps.push(StepLog {
            step,
            lr,
            labeled_loss: l_loss,
            unlabeled_loss: u_loss,
            total_loss: total,
            mask_rate: diag.mask_rate,
            mean_alpha: diag.mean_alpha,
        });
        if !total.is_finite() {
            return Err((step, Error::NonFinite("loss")));
        }

        sgd_step(&mut model, &grads, &mut opt, lr).map_err(err)?;
        ema.update(&model).map_err(err)?;
        alignment = update_alignment(&alignment, &batch_mean).map_err(err)?;

        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps {
            let ema_model = ema.to_model(&model).map_err(err)?;
            let ema_report = evaluate(&ema_model, &task.test).map_err(err)?;
            let raw_report = evaluate(&model, &task.test).map_err(err)?;
            record.evals.push(EvalPoint {
                step,
                test_error: ema_report.error_rate,
                test_ece: ema_report.ece,
                raw_test_error: raw_report.error_rate,
                raw_test_ece: raw_report.ece,
            });
        }
    }
    let ema_model = ema.to_model(&model).map_err(at(cfg.total_steps))?;
    Ok((model, ema_model))
}

/// Labeling rule of the plain self-training study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfTrainMethod {
    /// One-hot argmax labels.
    Hard,
    /// The prediction itself as target.
    Soft,
    /// `Q(argmax, 1 - max p)` with the optimistic superset loss.
    Credal,
}

impl SelfTrainMethod {
    pub const ALL: [SelfTrainMethod; 3] = [SelfTrainMethod::Hard, SelfTrainMethod::Soft, SelfTrainMethod::Credal];

    pub fn name(self) -> &'static str {
        match self {
            SelfTrainMethod::Hard => "hard",
            SelfTrainMethod::Soft => "soft",
            SelfTrainMethod::Credal => "credal",
        }
    }
}

/// Plain self-training without augmentation, thresholding or alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Relabeling rounds.
    pub iterations: usize,
    /// Passes over the pooled data per round.
    pub epochs_per_iteration: usize,
    /// Mini-batch size over the pooled data; `None` means full batch.
    pub batch_size: Option<usize>,
    /// Per-instance weight of pseudo-labeled instances (labeled ones weigh 1).
    pub unlabeled_weight: f64,
    pub seed: u64,
    /// Forces every credal label to this precisiation degree.
    pub alpha_override: Option<f64>,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 0.5,
            iterations: 100,
            epochs_per_iteration: 5,
            batch_size: None,
            unlabeled_weight: 1.0,
            seed: 0,
            alpha_override: None,
        }
    }
}

/// Pseudo-label of one unlabeled instance under a self-training rule.
pub fn self_train_label(method: SelfTrainMethod, p: &ProbDist, alpha_override: Option<f64>) -> Result<PseudoLabel> {
    Ok(match method {
        SelfTrainMethod::Hard => PseudoLabel::Hard(p.argmax()),
        SelfTrainMethod::Soft => PseudoLabel::Soft(p.clone()),
        SelfTrainMethod::Credal => {
            let alpha = alpha_override.unwrap_or(1.0 - p.max_prob()).clamp(0.0, 1.0);
            PseudoLabel::Credal(crate::credal::CredalTarget::new(p.argmax(), alpha)?)
        }
    })
}

/// Weighted mean loss of `model` over `(x, label, weight)` items; adds the
/// gradient of `scale * loss` to `grads` when given.
fn pooled_loss(model: &Mlp, items: &[(&[f64], &PseudoLabel, f64)], mut grads: Option<(&mut [f64], f64)>) -> Result<f64> {
    let total_weight: f64 = items.iter().map(|(_, _, w)| w).sum();
    if total_weight <= 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(x, label, w) in items {
        if label.is_skip() || w == 0.0 {
            continue;
        }
        let trace = model.forward(x, None)?;
        let (loss, grad_p) = label_loss(label, &trace.probs, false)?;
        total += w * loss;
        if let Some((g, scale)) = grads.as_mut() {
            if grad_p.iter().any(|v| *v != 0.0) {
                let scaled: Vec<f64> = grad_p.iter().map(|v| v * w * *scale / total_weight).collect();
                model.backward(&trace, &scaled, g)?;
            }
        }
    }
    Ok(total / total_weight)
}

/// Self-trains one model from scratch. Every round relabels the whole
/// unlabeled pool with the current model, then runs SGD epochs over the
/// labeled and pseudo-labeled instances pooled into one training set.
pub fn self_train_method(cfg: &SelfTrainConfig, task: &SyntheticTask, method: SelfTrainMethod) -> Result<Mlp> {
    if task.labeled.is_empty() || task.unlabeled.is_empty() {
        return Err(Error::EmptyInput("self-training pools"));
    }
    if cfg.batch_size == Some(0) {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let sizes = [task.dim(), cfg.hidden, task.num_classes()];
    let mut model = Mlp::new(&sizes, Activation::Sigmoid, 0.0, &mut stream(cfg.seed, Stream::Init))?;
    let mut opt = OptimizerState::plain(model.num_params(), cfg.learning_rate);
    let mut shuffle_rng = stream(cfg.seed, Stream::Batches);
    let given: Vec<PseudoLabel> = task.labeled.iter().map(|e| PseudoLabel::Hard(e.y)).collect();
    let n_pool = task.labeled.len() + task.unlabeled.len();
    let batch = cfg.batch_size.unwrap_or(n_pool).min(n_pool);
    let mut order: Vec<usize> = (0..n_pool).collect();
    for _ in 0..cfg.iterations {
        let pseudo = task
            .unlabeled
            .iter()
            .map(|e| self_train_label(method, &model.predict(&e.x)?, cfg.alpha_override))
            .collect::<Result<Vec<_>>>()?;
        let item = |i: usize| -> (&[f64], &PseudoLabel, f64) {
            if i < task.labeled.len() {
                (&task.labeled[i].x, &given[i], 1.0)
            } else {
                let j = i - task.labeled.len();
                (&task.unlabeled[j].x, &pseudo[j], cfg.unlabeled_weight)
            }
        };
        for _ in 0..cfg.epochs_per_iteration {
            if cfg.batch_size.is_some() {
                order.shuffle(&mut shuffle_rng);
            }
            for chunk in order.chunks(batch) {
                let items: Vec<_> = chunk.iter().map(|&i| item(i)).collect();
                let mut grads = vec![0.0; model.num_params()];
                pooled_loss(&model, &items, Some((&mut grads, 1.0)))?;
                sgd_step(&mut model, &grads, &mut opt, cfg.learning_rate)?;
            }
        }
    }
    Ok(model)
}

/// [`self_train_method`] for hard, soft and credal labels under the same seed.
pub fn self_train_simple(cfg: &SelfTrainConfig, task: &SyntheticTask) -> Result<Vec<(SelfTrainMethod, Mlp)>> {
    SelfTrainMethod::ALL.iter().map(|&m| Ok((m, self_train_method(cfg, task, m)?))).collect()
}
