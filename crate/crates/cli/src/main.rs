use std::path::PathBuf;
use std::process::ExitCode;

use ccs_core::dataset::Age;
use ccs_core::eval::MetricCell;
use ccs_core::model::ModelKind;
use ccs_cli::{cmd_compare, cmd_generate, cmd_predict, cmd_train, CliError};
use clap::{Parser, Subcommand};

/// Train and compare concrete compressive-strength regressors.
#[derive(Parser)]
#[command(name = "ccs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic 7-day and 28-day CSVs plus a sidecar config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Fit one model on the 80% split and save it.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// linear, tree, forest, transformer or embednet.
        #[arg(long)]
        model: ModelKind,
        /// Curing age in days: 7 or 28.
        #[arg(long)]
        age: Age,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Fit and score all configured models for both ages.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Append a predicted_psi column to a CSV.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn line(label: &str, m: &MetricCell) {
    println!(
        "{label:<6} n={:<6} R²={:.4}  MAE={:.2} psi  MAPE={:.2}%",
        m.n_test, m.r2, m.mae_psi, m.mape_percent
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, output_dir } => {
            for path in cmd_generate(&config, output_dir.as_deref())? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train {
            config,
            model,
            age,
            output_dir,
        } => {
            let s = cmd_train(&config, model, age, output_dir.as_deref())?;
            println!("{} ({}-day)", s.kind.display_name(), s.age);
            line("train", &s.train);
            line("test", &s.test);
            if let Some((epoch, loss)) = s.best_epoch {
                println!("best validation loss {loss:.6} (ksi²) at epoch {}", epoch + 1);
            }
            println!("wrote {}", s.model_file.display());
        }
        Command::Compare { config, output_dir } => {
            let s = cmd_compare(&config, output_dir.as_deref())?;
            print!("{}", s.text);
        }
        Command::Predict {
            model_file,
            input,
            output,
        } => {
            let n = cmd_predict(&model_file, &input, &output)?;
            println!("wrote {n} predictions to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
