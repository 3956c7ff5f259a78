use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uniq::mse::UnitStepTable;
use uniq_harness::config::DatasetConfig;
use uniq_harness::data::load_dataset;
use uniq_harness::{train, AblationSuite, ExperimentConfig};

#[derive(Parser)]
#[command(name = "uniq", version, about = "Quantization-aware training with MSE-initialized step sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an ablation suite and write its summary CSV.
    Ablate {
        #[arg(long)]
        suite: PathBuf,
    },
    /// Print the unit step sizes and optimal SQNR per level count.
    Table1 {
        #[arg(long)]
        json: bool,
    },
    /// Test accuracy of a saved checkpoint on MNIST.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
}

fn run(cli: Cli) -> uniq::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let r = train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Ablate { suite } => {
            let s: AblationSuite = serde_json::from_str(&std::fs::read_to_string(&suite)?)?;
            let table = s.run()?;
            print!("{}", table.to_csv());
        }
        Command::Table1 { json } => {
            let t = UnitStepTable::compute(&UnitStepTable::DEFAULT_LEVELS)?;
            if json {
                println!("{}", t.to_json());
            } else {
                print!("{}", t.render());
            }
        }
        Command::Eval { checkpoint, batch_size } => {
            let ckpt = uniq::nn::checkpoint::Checkpoint::read(&checkpoint)?;
            let (_, test) = load_dataset(&DatasetConfig::mnist(), &ckpt.header.arch.input)?;
            let mut model = ckpt.to_model::<f32>()?;
            let acc = uniq_harness::evaluate(&mut model, &test, batch_size)?;
            println!("{acc}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
