use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cml_cli::config::{Experiment, Overrides};
use cml_core::PrecisionMode;

/// Runs a coupled-map-lattice experiment and writes `<name>.csv`, `<name>.json` and `<name>.svg`.
#[derive(Parser, Debug)]
#[command(name = "cml", version)]
struct Args {
    experiment: Experiment,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `f64` or `big:<bits>`.
    #[arg(long)]
    precision: Option<PrecisionMode>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let ov = Overrides {
        out: args.out.map(|p| p.to_string_lossy().into_owned()),
        seed: args.seed,
        precision: args.precision,
    };
    match cml_cli::execute(args.experiment, &args.config, &ov) {
        Ok(w) => {
            for f in &w.files {
                println!("{}", f.display());
            }
            match w.partial {
                Some(msg) => {
                    eprintln!("cml: partial result: {msg}");
                    ExitCode::from(3)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("cml: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
