use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cssl_cli::commands::print_summaries;
use cssl_cli::{
    cmd_efficiency, cmd_run, cmd_synthetic, cmd_validate, parse_seed_list, CliResult, ExperimentSpec, Options,
    SyntheticSpec, DEFAULT_OUT, OUT_ENV,
};

#[derive(Parser)]
#[command(name = "cssl", version, about = "Credal self-supervised learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (strategy, seed) cell of a spec.
    Run(GridArgs),
    /// Reduced-budget comparison of CSSL, LSMatch and FixMatch.
    Efficiency(GridArgs),
    /// Hard/soft/credal self-training on the 1-D sigmoid task.
    Synthetic(SyntheticArgs),
    /// Check a spec without training.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output directory [default: spec output_dir, then $CSSL_OUT, then ./cssl-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds overriding the spec, e.g. `0,1,2` or `0..5`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Only run the strategy with this name.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "0..5")]
    seeds: String,
    #[arg(long)]
    jobs: Option<usize>,
}

fn out_dir(flag: Option<PathBuf>, spec: Option<&ExperimentSpec>) -> PathBuf {
    flag.or_else(|| spec.and_then(|s| s.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn grid_options(args: GridArgs) -> CliResult<(ExperimentSpec, Options)> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let seeds = args.seeds.as_deref().map(parse_seed_list).transpose()?;
    let out = out_dir(args.out, Some(&spec));
    Ok((spec, Options { out, seeds, jobs: args.jobs, strategy: args.strategy }))
}

fn execute(cli: Cli) -> CliResult<()> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Run(args) => {
            let (spec, opts) = grid_options(args)?;
            let summaries = cmd_run(&spec, &opts)?;
            print_summaries(stdout.lock(), &summaries)?;
            println!("wrote {}", opts.out.display());
        }
        Command::Efficiency(args) => {
            let (spec, opts) = grid_options(args)?;
            let report = cmd_efficiency(&spec, &opts)?;
            println!("budget: {} steps", report.budget_steps);
            print_summaries(stdout.lock(), &report.rows)?;
            println!("wrote {}", opts.out.join("efficiency").display());
        }
        Command::Synthetic(args) => {
            let seeds = parse_seed_list(&args.seeds)?;
            let out = out_dir(args.out, None);
            let report = cmd_synthetic(&SyntheticSpec::default(), &seeds, &out, args.jobs)?;
            for m in &report.methods {
                println!("{:<8} mse {:.5} ± {:.5}", m.method.name(), m.mean_mse, m.std_mse);
            }
            println!("wrote {}", out.join("synthetic").display());
        }
        Command::Validate { spec } => {
            cmd_validate(&ExperimentSpec::load(&spec)?)?;
            println!("{}: ok", spec.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("cssl: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

