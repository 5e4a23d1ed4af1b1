use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use stopt_core::probing::ProbeKind;
use stopt_core::runner::{self, RunConfig, RATIO_MEANS};
use stopt_core::{Error, Result};

/// Stochastic-load topology optimisation with randomized compliance estimators.
#[derive(Parser)]
#[command(name = "stopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the continuation optimisation and write report, history and density.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the config file and STOPT_OUT_DIR.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare estimated and exact statistics for several probe counts.
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Probe counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "hadamard,rademacher")]
        kinds: Vec<String>,
    },
    /// Sample correcting ratios on random density fields.
    Ratios {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        means: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        designs: usize,
        /// Standard deviation of the truncated normal.
        #[arg(long, default_value_t = 0.2)]
        sd: f64,
    },
    /// Export or import load scenario files.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Sample the configured scenarios and write them as CSV.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario CSV against the configured mesh.
    Import {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        file: PathBuf,
    },
}

fn load_config(path: Option<&Path>, out_dir: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(dir) = out_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    Ok(cfg)
}

fn parse_kind(name: &str) -> Result<ProbeKind> {
    match name.trim() {
        "hadamard" => Ok(ProbeKind::Hadamard),
        "rademacher" => Ok(ProbeKind::Rademacher),
        other => Err(Error::Config(format!("unknown probe kind {other:?}"))),
    }
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Run { config, out_dir } => {
            let cfg = load_config(config.as_deref(), out_dir.as_deref())?;
            let report = runner::run(&cfg)?;
            Ok(json!({
                "output_dir": cfg.output_dir,
                "mu": report.exact.mu,
                "sigma": report.exact.sigma,
                "volume": report.volume,
                "solves": report.solves.total,
                "converged": report.converged,
            }))
        }
        Command::Profile {
            config,
            out_dir,
            n,
            kinds,
        } => {
            let cfg = load_config(config.as_deref(), out_dir.as_deref())?;
            let kinds = kinds
                .iter()
                .map(|k| parse_kind(k))
                .collect::<Result<Vec<_>>>()?;
            let rows = runner::accuracy_profile(&cfg, &n, &kinds)?;
            let path = cfg.output_dir.join("profile.csv");
            runner::write_profile_csv(&path, &rows)?;
            Ok(json!({ "profile": path, "rows": rows.len() }))
        }
        Command::Ratios {
            config,
            out_dir,
            means,
            designs,
            sd,
        } => {
            let cfg = load_config(config.as_deref(), out_dir.as_deref())?;
            let means = means.unwrap_or_else(|| RATIO_MEANS.to_vec());
            let hist = runner::ratio_histograms(&cfg, &means, designs, sd)?;
            let paths = runner::write_ratio_csvs(&cfg.output_dir, &hist)?;
            Ok(json!({ "files": paths }))
        }
        Command::Scenarios { action } => match action {
            ScenarioAction::Export { config, out } => {
                let cfg = load_config(config.as_deref(), None)?;
                let set = cfg.scenarios(&cfg.mesh()?)?;
                if let Some(parent) = out.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                set.write_csv(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
                Ok(json!({ "file": out, "n_dofs": set.n_dofs(), "L": set.n_scenarios() }))
            }
            ScenarioAction::Import { config, file } => {
                let mut cfg = load_config(config.as_deref(), None)?;
                cfg.scenarios.file = Some(file.clone());
                let set = cfg.scenarios(&cfg.mesh()?)?;
                Ok(json!({
                    "file": file,
                    "n_dofs": set.n_dofs(),
                    "L": set.n_scenarios(),
                    "R": set.rank,
                    "seed": set.seed,
                }))
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let doc = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}
