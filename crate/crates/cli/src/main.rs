use std::path::PathBuf;
use std::process::ExitCode;

use chanmix_cli::commands::{cmd_lower, cmd_pareto, cmd_search, cmd_space, SearchOptions, SpaceSource};
use chanmix_cli::{CliError, CliResult};
use chanmix_core::RegMode;
use clap::{Parser, Subcommand, ValueEnum};

/// Channel-wise mixed-precision quantization search.
///
/// Log verbosity follows the CHANMIX_LOG variable (error, warn, info, debug).
#[derive(Parser)]
#[command(name = "chanmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Size,
    Energy,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search per lambda and write results.csv with per-lambda files.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `out_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training seed, overriding `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of searches run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Keep the non-dominated rows of a results file.
    Pareto {
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Size)]
        mode: Mode,
        /// Defaults to pareto.csv next to the results file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the number of layer-wise and channel-wise assignments.
    Space {
        #[arg(long, required_unless_present = "mobilenet", conflicts_with = "mobilenet")]
        config: Option<PathBuf>,
        /// Report MobileNetV1 at this width multiplier instead.
        #[arg(long)]
        mobilenet: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        classes: usize,
    },
    /// Reorder, split, verify and export a searched model.
    Lower {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Random inputs used by the equivalence check.
        #[arg(long, default_value_t = 64)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Search { config, out, seed, jobs } => {
            let o = cmd_search(&config, &SearchOptions { out, seed, jobs })?;
            println!("{} searches written to {}", o.records.len(), o.out_dir.display());
            for r in &o.records {
                println!("lambda {:e}: score {:.4}, {} bits", r.lambda, r.score, r.size_bits);
            }
        }
        Command::Pareto { results, mode, out } => {
            let out = out.unwrap_or_else(|| results.with_file_name("pareto.csv"));
            let mode = match mode {
                Mode::Size => RegMode::Size,
                Mode::Energy => RegMode::Energy,
            };
            let front = cmd_pareto(&results, mode, &out)?;
            println!("{} Pareto points written to {}", front.len(), out.display());
        }
        Command::Space {
            config,
            mobilenet,
            classes,
        } => {
            let source = match (&config, mobilenet) {
                (Some(p), _) => SpaceSource::Config(p),
                (None, Some(width)) => SpaceSource::MobileNet { width, classes },
                (None, None) => return Err(CliError::Config("pass --config or --mobilenet".into())),
            };
            println!("{}", cmd_space(source)?);
        }
        Command::Lower {
            model,
            assignment,
            out,
            inputs,
            seed,
        } => {
            let r = cmd_lower(&model, &assignment, &out, inputs, seed)?;
            println!(
                "equivalent on {} inputs; {} bits; permuted quantized layers {:?}; {} skipped",
                r.inputs,
                r.size_bits,
                r.permuted_layers,
                r.skipped.len()
            );
            for s in &r.skipped {
                println!("  quantized layer {} kept in place: {}", s.layer, s.reason);
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHANMIX_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
