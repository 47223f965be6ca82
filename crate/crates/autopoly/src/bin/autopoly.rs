use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autopoly::cli::{
    cmd_grid, cmd_homophily, cmd_run, cmd_sbm, cmd_spectrum, load_config, CliError,
};

#[derive(Parser)]
#[command(name = "autopoly", version, about = "Polynomial spectral graph filter learning")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed experiment from a TOML config
    Run {
        config: PathBuf,
        /// Override a config value, e.g. --set model.order=4
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Brute-force coefficient grid search with a full audit table
    Grid {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Node homophily of a bundle directory
    Homophily {
        dir: PathBuf,
        /// Emit machine-readable JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Export the spectral response of a checkpoint as CSV
    Spectrum {
        checkpoint: PathBuf,
        /// Number of uniform grid points over [0, 2]
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Output file; stdout when omitted
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Materialize a synthetic SBM bundle directory
    Sbm {
        params: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Run { config, set } => {
            let config = load_config(&config, &set)?;
            let row = cmd_run(&config)?;
            println!(
                "{} on {}: {:.4} ± {:.4} over {} seed(s)",
                row.regime, row.dataset, row.mean_acc, row.std_acc, row.seed_count
            );
            if !row.failed_seeds.is_empty() {
                println!("failed seeds: {:?}", row.failed_seeds);
            }
            println!("artifacts in {}", config.output_dir.display());
            Ok(())
        }
        Command::Grid { config, set } => {
            let config = load_config(&config, &set)?;
            let best = cmd_grid(&config)?;
            println!(
                "best theta {:?} with val acc {:.4} (test {:.4})",
                best.theta, best.val_acc, best.test_acc
            );
            println!("artifacts in {}", config.output_dir.display());
            Ok(())
        }
        Command::Homophily { dir, json } => {
            let out = cmd_homophily(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
            } else {
                println!("{:.4}", out.homophily);
                println!("isolated nodes excluded: {}", out.excluded_isolated);
            }
            Ok(())
        }
        Command::Spectrum { checkpoint, grid, output } => {
            let csv = cmd_spectrum(&checkpoint, grid)?;
            match output {
                Some(path) => std::fs::write(&path, csv)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Sbm { params, output } => {
            let bundle = cmd_sbm(&params, &output)?;
            println!(
                "wrote {} ({} nodes, {} edges, {} classes) to {}",
                bundle.name,
                bundle.n(),
                bundle.graph.edges().len(),
                bundle.num_classes(),
                output.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
