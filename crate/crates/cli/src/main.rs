use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sysid_cli::{run, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sysid", version, about = "Meta-train, adapt and evaluate in-context system identification models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train on one system class
    Pretrain(RunArgs),
    /// Train on several classes and monitor the loss on a test class
    Metagen(RunArgs),
    /// Monte Carlo adaptation of a checkpoint to single systems
    AdaptMc(RunArgs),
    /// Short horizon, then long horizon from scratch and warm-started
    Short2long(RunArgs),
    /// Evaluate a checkpoint on a seed-pinned stream of systems
    Eval(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed` in the config)
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (expected, args) = match cli.command {
        Command::Pretrain(a) => ("pretrain", a),
        Command::Metagen(a) => ("metagen", a),
        Command::AdaptMc(a) => ("adapt_mc", a),
        Command::Short2long(a) => ("short2long", a),
        Command::Eval(a) => ("eval", a),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment.name() != expected {
        return Err(CliError::Config(format!(
            "{} describes a `{}` experiment, not `{expected}`",
            args.config.display(),
            cfg.experiment.name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    let out = cfg.out_dir.clone().ok_or_else(|| CliError::Config("no output directory: pass --out or set out_dir".into()))?;
    let summary = run(&cfg, &out)?;
    for line in &summary.lines {
        println!("{line}");
    }
    println!("outputs in {} (content hash {})", out.display(), summary.content_hash);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            // usage errors count as configuration errors
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sysid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
