use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conad::cli;
use conad::config::{ExperimentConfig, SEED_ENV};
use conad::demo::DemoKind;
use conad::Result;

/// Multiple-hypotheses anomaly detection: data generation, training,
/// evaluation and demonstrations.
#[derive(Parser)]
#[command(name = "conad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; without --data the dataset is generated from the config.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a dataset with a trained checkpoint and report AUROC.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a scripted demonstration: lemma41, lemma42, halfmoon_figure, strategy_figure.
    Demo {
        which: String,
        #[command(flatten)]
        common: Common,
    },
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let seed = std::env::var(SEED_ENV).ok();
    ExperimentConfig::load(&c.config, &c.set, seed.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let ds = cli::cmd_gen(&config(&common)?, &common.out)?;
            println!(
                "wrote {} dataset to {} (train {}, valid {}, test {} normal + {} anomalous)",
                ds.params.kind.name(),
                common.out.display(),
                ds.train.shape()[0],
                ds.valid.shape()[0],
                ds.test_normal.shape()[0],
                ds.test_anomaly.shape()[0]
            );
        }
        Command::Train { common, data } => {
            let r = cli::cmd_train(&config(&common)?, data.as_deref(), &common.out)?;
            println!(
                "stopped after {} epochs; best validation loss {} at epoch {}",
                r.stopping_epoch(),
                r.best_val_loss,
                r.best_epoch
            );
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let roc = cli::cmd_eval(&config(&common)?, &checkpoint, data.as_deref(), &common.out)?;
            println!("auroc {}", roc.auroc);
        }
        Command::Demo { which, common } => {
            let kind: DemoKind = which.parse()?;
            let report = cli::cmd_demo(kind, &config(&common)?, &common.out)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
