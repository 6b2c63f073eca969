//! Experiment harness around `cssl-core`: TOML experiment specs, seeded
//! (strategy, seed) grids run in parallel, and deterministic CSV/JSON
//! artifacts.

pub mod commands;
pub mod error;
pub mod spec;

pub use commands::{cmd_efficiency, cmd_run, cmd_synthetic, cmd_validate, Options, SyntheticSpec};
pub use error::{CliError, CliResult};
pub use spec::{parse_seed_list, ExperimentSpec};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CSSL_OUT";

/// Default output root when neither a flag, the spec nor the environment sets one.
pub const DEFAULT_OUT: &str = "cssl-out";
