use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filterts::runner::{cmd_build_bank, cmd_eval, cmd_inspect, cmd_train, Overrides, RunConfig};
use filterts::Error;

#[derive(Parser)]
#[command(name = "filterts", version, about = "Filter-based frequency-domain forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Forecast horizon F.
    #[arg(long)]
    horizon: Option<usize>,
    /// Parent directory for run outputs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the static filter bank from the training split.
    BuildBank(Common),
    /// Train and evaluate a model.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write global and per-window spectra of one variable.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        variable: usize,
        #[arg(long, default_value_t = 0)]
        window_start: usize,
    },
}

fn resolve(c: &Common) -> Result<RunConfig, Error> {
    let ov = Overrides {
        seed: c.seed,
        horizon: c.horizon,
        out: c.out.clone(),
    };
    RunConfig::resolve(c.config.as_deref(), &ov)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildBank(c) => {
            let cfg = resolve(&c)?;
            let out = cmd_build_bank(&cfg)?;
            print!("{}", out.summary);
            println!("bank written to {}", out.bank_path.display());
        }
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            let out = cmd_train(&cfg)?;
            for e in &out.report.epochs {
                println!(
                    "epoch {} lr {:e} train mse {:.6} val mse {:.6} val mae {:.6}",
                    e.epoch, e.lr, e.train.mse, e.val.mse, e.val.mae
                );
            }
            println!(
                "test F={} mse {:.6} mae {:.6}",
                out.report.horizon, out.report.test.mse, out.report.test.mae
            );
            println!("run directory {}", out.run_dir.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = resolve(&Common {
                horizon: None,
                ..common.clone()
            })?;
            let out = cmd_eval(&cfg, &checkpoint, common.horizon)?;
            println!("test F={} mse {:.6} mae {:.6}", out.horizon, out.test.mse, out.test.mae);
        }
        Command::Inspect {
            common,
            variable,
            window_start,
        } => {
            let cfg = resolve(&common)?;
            let out = cmd_inspect(&cfg, variable, window_start)?;
            println!("tau {:e}", out.tau);
            println!("peak bin {}", out.peak_bin);
            println!("spectra written to {}", out.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
