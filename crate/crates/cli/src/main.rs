use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use npg_cli::acceptance::{run_criterion, CRITERIA};
use npg_cli::config::{Experiment, ExperimentConfig, EXPERIMENT_IDS};
use npg_cli::experiments::run_experiment;
use npg_cli::instance_io::{generate_instance, GenOptions, INSTANCE_KINDS};
use npg_cli::HarnessError;

#[derive(Parser)]
#[command(name = "npg", version, about = "Entropy-regularized NPG experiments for matrix, monotone and Markov games")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results do
    /// not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSV traces.
    Run(RunArgs),
    /// Generate a seeded instance file.
    Gen(GenArgs),
    /// Run the acceptance suite.
    Accept(AcceptArgs),
    /// List experiments, instance kinds and acceptance criteria.
    List,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(INSTANCE_KINDS))]
    kind: String,
    /// `N`, or `NxM` / `NxD` / `SxA` depending on the kind.
    #[arg(long)]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = GenOptions::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = GenOptions::default().tau)]
    tau: f64,
}

#[derive(Args)]
struct AcceptArgs {
    /// Run only these criteria, e.g. `--only 3,5`.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
}

fn run(args: RunArgs) -> Result<ExitCode, HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.id()));
    let (report, files) = run_experiment(&cfg, &out)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    for name in &report.expected_divergence {
        println!("{name} diverged (expected)");
    }
    if !report.unexpected_divergence.is_empty() {
        return Err(HarnessError::UnexpectedDivergence { run: report.unexpected_divergence.join(", ") });
    }
    Ok(ExitCode::SUCCESS)
}

fn gen(args: GenArgs) -> Result<ExitCode, HarnessError> {
    let opts = GenOptions { gamma: args.gamma, tau: args.tau };
    let file = generate_instance(&args.kind, &args.size, args.seed, opts)?;
    file.validate()?;
    let text = file.to_toml();
    match args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn accept(args: AcceptArgs) -> ExitCode {
    let ids: Vec<u8> = if args.only.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        args.only
    };
    let mut failed = 0;
    for id in ids {
        if !CRITERIA.iter().any(|c| c.0 == id) {
            eprintln!("no criterion {id}");
            return ExitCode::from(2);
        }
        let report = run_criterion(id);
        println!("{report}");
        if !report.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn list() {
    println!("experiments:");
    for id in EXPERIMENT_IDS {
        let budget = Experiment::default_for(id).map(|e| e.budget()).unwrap_or(0);
        println!("  {id:<20} default budget {budget}");
    }
    println!("instance kinds:");
    for kind in INSTANCE_KINDS {
        println!("  {kind}");
    }
    println!("acceptance criteria:");
    for (id, name, _) in CRITERIA {
        println!("  {id:>2} {name}");
    }
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Gen(args) => gen(args),
        Command::Accept(args) => Ok(accept(args)),
        Command::List => {
            list();
            Ok(ExitCode::SUCCESS)
        }
    };
    Ok(result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code() as u8)
    }))
}
