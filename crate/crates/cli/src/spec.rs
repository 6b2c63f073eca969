//! Experiment specification files (TOML).
//!
//! ```toml
//! spec_version = 1
//! seeds = [0, 1, 2, 3, 4]
//! output_dir = "out/blobs"          # optional
//!
//! [task]
//! kind = "gauss_blobs"
//! classes = 3
//! dim = 2
//! separation = 2.0
//! labeled_per_class = 4
//! n_unlabeled = 2000
//! n_test = 2000
//! # data_seed = 7                   # optional; defaults to the run seed
//!
//! [train]
//! batch_size = 16
//! # ... every TrainConfig field except `strategy` and `seed`
//!
//! [[comparison]]
//! name = "cssl"
//! strategy = { kind = "cssl" }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use cssl_core::data::{gen_blobs_task, gen_sigmoid_task, SyntheticTask};
use cssl_core::{Activation, StrategyConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub spec_version: u32,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub task: TaskSpec,
    pub train: TrainSpec,
    #[serde(default)]
    pub comparison: Vec<NamedStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    GaussBlobs {
        classes: usize,
        dim: usize,
        separation: f64,
        labeled_per_class: usize,
        n_unlabeled: usize,
        n_test: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
    },
    Sigmoid1d {
        n_labeled: usize,
        n_unlabeled: usize,
        n_test: usize,
        #[serde(default = "default_steepness")]
        steepness: f64,
        #[serde(default = "default_midpoint")]
        midpoint: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
    },
}

fn default_steepness() -> f64 {
    10.0
}

fn default_midpoint() -> f64 {
    0.5
}

impl TaskSpec {
    /// Seed of the generated data for a run seeded with `run_seed`.
    pub fn data_seed(&self, run_seed: u64) -> u64 {
        match self {
            TaskSpec::GaussBlobs { data_seed, .. } | TaskSpec::Sigmoid1d { data_seed, .. } => data_seed.unwrap_or(run_seed),
        }
    }

    pub fn build(&self, run_seed: u64) -> CliResult<SyntheticTask> {
        let seed = self.data_seed(run_seed);
        let task = match *self {
            TaskSpec::GaussBlobs { classes, dim, separation, labeled_per_class, n_unlabeled, n_test, .. } => {
                gen_blobs_task(classes, dim, separation, labeled_per_class, n_unlabeled, n_test, seed)?
            }
            TaskSpec::Sigmoid1d { n_labeled, n_unlabeled, n_test, steepness, midpoint, .. } => {
                gen_sigmoid_task(n_labeled, n_unlabeled, n_test, steepness, midpoint, seed)?
            }
        };
        Ok(task)
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: &str| Err(CliError::Config(format!("task: {msg}")));
        match *self {
            TaskSpec::GaussBlobs { classes, dim, separation, labeled_per_class, n_unlabeled, n_test, .. } => {
                if classes < 2 {
                    return fail("classes must be >= 2");
                }
                if dim == 0 {
                    return fail("dim must be >= 1");
                }
                if !separation.is_finite() || separation < 0.0 {
                    return fail("separation must be finite and >= 0");
                }
                if labeled_per_class == 0 || n_unlabeled == 0 || n_test == 0 {
                    return fail("labeled_per_class, n_unlabeled and n_test must be >= 1");
                }
            }
            TaskSpec::Sigmoid1d { n_labeled, n_unlabeled, n_test, steepness, midpoint, .. } => {
                if n_labeled == 0 || n_unlabeled == 0 || n_test == 0 {
                    return fail("n_labeled, n_unlabeled and n_test must be >= 1");
                }
                if !steepness.is_finite() || !midpoint.is_finite() {
                    return fail("steepness and midpoint must be finite");
                }
            }
        }
        Ok(())
    }
}

/// Every [`TrainConfig`] field except the per-cell `strategy` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub mu: usize,
    pub lambda_u: f64,
    pub eta: f64,
    pub momentum: f64,
    #[serde(default = "yes")]
    pub nesterov: bool,
    pub weight_decay: f64,
    pub total_steps: usize,
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
    #[serde(default)]
    pub dropout_rate: f64,
}

fn yes() -> bool {
    true
}

fn default_alignment_decay() -> f64 {
    0.999
}

impl TrainSpec {
    pub fn to_config(&self, strategy: StrategyConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            mu: self.mu,
            lambda_u: self.lambda_u,
            eta: self.eta,
            momentum: self.momentum,
            nesterov: self.nesterov,
            weight_decay: self.weight_decay,
            total_steps: self.total_steps,
            seed,
            strategy,
            ema_decay: self.ema_decay,
            alignment_decay: self.alignment_decay,
            sigma_w: self.sigma_w,
            sigma_s: self.sigma_s,
            mask_prob: self.mask_prob,
            eval_every: self.eval_every,
            detach_projection: self.detach_projection,
            hidden: self.hidden.clone(),
            activation: self.activation,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedStrategy {
    pub name: String,
    pub strategy: StrategyConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks everything that can be checked without training.
    pub fn validate(&self) -> CliResult<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(CliError::Config(format!(
                "spec_version = {} is not supported (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds: at least one seed is required".into()));
        }
        self.task.validate()?;
        let mut names = HashSet::new();
        for named in &self.comparison {
            check_name(&named.name)?;
            if !names.insert(named.name.as_str()) {
                return Err(CliError::Config(format!("comparison: duplicate strategy name {:?}", named.name)));
            }
            self.train
                .to_config(named.strategy.clone(), 0)
                .validate()
                .map_err(|e| CliError::Config(format!("comparison {:?}: {e}", named.name)))?;
        }
        self.train
            .to_config(StrategyConfig::cssl(), 0)
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(())
    }
}

/// Names end up in file names, so they are restricted to `[A-Za-z0-9._-]`.
pub fn check_name(name: &str) -> CliResult<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("strategy name {name:?} must be non-empty and use only [A-Za-z0-9._-]")))
    }
}

/// Parses `0,1,2` and ranges such as `0..5` (exclusive) or `0..=4`.
pub fn parse_seed_list(text: &str) -> CliResult<Vec<u64>> {
    let bad = |part: &str| CliError::Config(format!("invalid seed list entry {part:?}"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..=") {
            let (lo, hi): (u64, u64) = (lo.parse().map_err(|_| bad(part))?, hi.parse().map_err(|_| bad(part))?);
            seeds.extend(lo..=hi);
        } else if let Some((lo, hi)) = part.split_once("..") {
            let (lo, hi): (u64, u64) = (lo.parse().map_err(|_| bad(part))?, hi.parse().map_err(|_| bad(part))?);
            seeds.extend(lo..hi);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}
