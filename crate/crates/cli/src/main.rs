use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastadv::run;

/// Fast adversarial training laboratory.
#[derive(Parser)]
#[command(name = "fastadv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write records, checkpoints and the overfitting report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Clean and robust accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Loss surface around held-out samples.
    Landscape {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Robust accuracy across perturbation budgets.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn execute(command: Command) -> fastadv::Result<()> {
    match command {
        Command::Train { config } => {
            let s = run::cmd_train(&config)?;
            println!("trained {} epochs into {}", s.epochs, s.output_dir.display());
            if s.co.collapsed {
                println!(
                    "WARNING: catastrophic overfitting ({:?}, peak {:.3} at epoch {}, final {:.3})",
                    s.co.status, s.co.peak_robust_acc, s.co.peak_epoch, s.co.final_robust_acc
                );
            }
        }
        Command::Eval { config, checkpoint } => {
            let (report, path) = run::cmd_eval(&checkpoint, &config)?;
            println!("clean {:.4}", report.clean_acc);
            for (name, acc) in &report.robust_acc {
                println!("{name} {acc:.4}");
            }
            println!("report written to {}", path.display());
        }
        Command::Landscape { config, checkpoint } => {
            let path = run::cmd_landscape(&checkpoint, &config)?;
            println!("landscape written to {}", path.display());
        }
        Command::Sweep { config, checkpoint } => {
            let path = run::cmd_sweep(&checkpoint, &config)?;
            println!("sweep written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
