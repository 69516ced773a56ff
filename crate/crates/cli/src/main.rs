use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use policylearn_cli::{
    cmd_evaluate, cmd_export_tree, cmd_fit, cmd_simulate, cmd_validate_policies, CliError, RunConfig,
};

#[derive(Parser)]
#[command(name = "policylearn", version, about = "Policy-tree learning from randomized experiments")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nuisance fit, doubly robust scores and a policy tree for [data].
    Fit,
    /// Resampling comparison of constant, random, tree and plug-in rules.
    ValidatePolicies,
    /// Two-phase experiment plus evaluation regressions.
    Simulate,
    /// Evaluation regressions on an existing sample.
    Evaluate,
    /// Graph description of a saved tree.
    ExportTree {
        /// A tree.json written by `fit` or `simulate`.
        #[arg(long)]
        tree: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output.dir = o;
    }
    let out = cfg.output.dir.clone();
    let written = match cli.command {
        Command::Fit => cmd_fit(&cfg, &out)?,
        Command::ValidatePolicies => cmd_validate_policies(&cfg, &out)?,
        Command::Simulate => cmd_simulate(&cfg, &out)?,
        Command::Evaluate => cmd_evaluate(&cfg, &out)?,
        Command::ExportTree { tree } => cmd_export_tree(&tree, &out)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().lines().next().unwrap_or("").to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
