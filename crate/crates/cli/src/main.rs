use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sparse_snn::sparsity::{PqParams, Scope};
use sparse_snn_cli::{cmd_gen_data, cmd_pq, cmd_train, config::default_separation, CliError, GenDataArgs};

#[derive(Parser)]
#[command(name = "sparse-snn", version, about = "Sparse-from-scratch spiking network training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Layer,
    Neuron,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a JSON run config.
    Train { config: PathBuf },
    /// Print PQ statistics for every scope group of a checkpoint.
    Pq {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "layer")]
        scope: ScopeArg,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long = "alpha-r", default_value_t = 0.001)]
        alpha_r: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
    },
    /// Write a synthetic rate-pattern dataset as IDX files.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = default_separation())]
        separation: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let a = cmd_train(&config)?;
            match a.final_test_accuracy {
                Some(acc) => println!("final test accuracy {:.4}", acc),
                None => println!("no epochs run"),
            }
            println!("wrote {}, {}, {}", a.metrics.display(), a.events.display(), a.checkpoint.display());
            Ok(())
        }
        Command::Pq {
            checkpoint,
            scope,
            p,
            q,
            alpha_r,
            gamma,
            beta,
        } => {
            let scope = match scope {
                ScopeArg::Layer => Scope::Layer,
                ScopeArg::Neuron => Scope::Neuron,
            };
            let params = PqParams { p, q, alpha_r, gamma, beta };
            cmd_pq(&checkpoint, scope, params, &mut std::io::stdout().lock())
        }
        Command::GenData {
            classes,
            dim,
            per_class,
            seed,
            out,
            separation,
        } => {
            for path in cmd_gen_data(&GenDataArgs {
                classes,
                dim,
                per_class,
                seed,
                separation,
                out,
            })? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
