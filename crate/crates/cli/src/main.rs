use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use funclangevin::diagnostics::theorem1_bound;
use funclangevin_cli::render::{render_field, Basis};
use funclangevin_cli::run::{read_samples, run, Environment};
use funclangevin_cli::sweep::sweep;
use funclangevin_cli::{load_bound_params, CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "funclangevin", version, about = "Function-space Langevin sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the chains described by a config file.
    Run { config: PathBuf },
    /// Run one experiment per value of `[diagnostics.sweep]`.
    Sweep { config: PathBuf },
    /// Evaluate the error bound for the parameters in a TOML file.
    Bound { params: PathBuf },
    /// Evaluate one retained sample as a function on [0, 1].
    Render {
        #[arg(long)]
        samples: PathBuf,
        /// Zero-based data row of the samples file.
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long, default_value = "cosine")]
        basis: String,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = Environment::from_env()?;
            let (dir, out) = run(&cfg, &env)?;
            let n: usize = out.stores.iter().map(|s| s.len()).sum();
            println!("wrote {n} samples to {}", dir.display());
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = Environment::from_env()?;
            let (dir, out) = sweep(&cfg, &env)?;
            let ok = out.rows.iter().filter(|r| r.status == "ok").count();
            println!("{ok}/{} runs succeeded; results in {}", out.rows.len(), dir.display());
        }
        Command::Bound { params } => {
            let p = load_bound_params(&params)?;
            let b = theorem1_bound(&p)?;
            let text = serde_json::to_string_pretty(&b).map_err(|e| CliError::Output(e.to_string()))?;
            println!("{text}");
        }
        Command::Render {
            samples,
            row,
            basis,
            points,
            output,
        } => {
            let basis: Basis = basis.parse()?;
            let rows = read_samples(&samples)?;
            let (_, x) = rows.get(row).ok_or_else(|| CliError::Config {
                path: "row".into(),
                message: format!("{row} is out of range; the file has {} rows", rows.len()),
            })?;
            let field = render_field(x, basis, points)?;
            let mut text = String::from("# t: grid midpoint in [0, 1]\n# u: field value at t\nt,u\n");
            for (t, u) in field {
                text.push_str(&format!("{t},{u}\n"));
            }
            match output {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
