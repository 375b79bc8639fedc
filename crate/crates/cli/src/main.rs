//! `ecm-attack`: batch runner for attack scenarios and parameter fits.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime or
//! numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecm_attack::scenario::{
    run_attack, run_nominal, run_sweep, write_attack, write_fit, write_nominal, write_sweep, FitConfig, Scenario,
    StageError,
};
use ecm_attack::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "ecm-attack", version, about = "Stealthy false-data-injection attacks on a battery model")]
struct Cli {
    /// Scenario (or fit) configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the one in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Plant noise seed; overrides the one in the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nominal simulation only; writes nominal.csv.
    Simulate,
    /// Input attack, plant run and output masking; writes attack.csv, riccati.csv, summary.json.
    Scenario {
        /// Use the adversary's model as the plant, without noise.
        #[arg(long)]
        perfect_model: bool,
    },
    /// Residual RMS over a list of output-attack gains; writes sweep.csv and sweep.json.
    Sweep {
        /// Comma-separated gains, e.g. `-0.1,-0.05,0,0.05,0.1`; defaults to the config's `sweep_ka`.
        #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
        ka: Option<String>,
        #[arg(long)]
        perfect_model: bool,
    },
    /// OCV extraction and RC fit; writes fitted_params.json and fit_report.json.
    Fit,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Runtime => 3,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(e.kind()),
            message: e.to_string(),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Self {
            code: exit_code(e.source.kind()),
            message: e.to_string(),
        }
    }
}

fn parse_ka(list: &str) -> Result<Vec<f64>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::config(format!("--ka: `{s}` is not a finite number")))
        })
        .collect()
}

fn load_scenario(cli: &Cli, perfect_model: bool) -> Result<Scenario, Failure> {
    let path = config_path(cli)?;
    let mut s = Scenario::from_file(path)?;
    if perfect_model {
        s = s.perfect_model();
    }
    if let Some(seed) = cli.seed {
        s = s.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        s = s.with_output_dir(out);
    }
    Ok(s)
}

fn config_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.config
        .as_deref()
        .ok_or_else(|| Failure::config("--config <PATH> is required"))
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate => {
            let s = load_scenario(cli, false)?;
            let sim = run_nominal(&s)?;
            let path = write_nominal(&s, &sim)?;
            println!("final soc {}", sim.final_state().soc);
            report_files(&[path]);
        }
        Command::Scenario { perfect_model } => {
            let s = load_scenario(cli, *perfect_model)?;
            let run = run_attack(&s)?;
            let files = write_attack(&s, &run)?;
            let sum = &run.summary;
            println!(
                "{}: final soc nominal {:.4}, attacked {:.4}; residual rms {:.3e} V",
                s.name, sum.final_soc_nominal, sum.final_soc_attacked, sum.residual_rms
            );
            if sum.gain_warning {
                eprintln!("warning: |k_a| >= 1, the feedback correction amplifies the mismatch");
            }
            report_files(&files);
        }
        Command::Sweep { ka, perfect_model } => {
            let s = load_scenario(cli, *perfect_model)?;
            let values = match ka {
                Some(list) => parse_ka(list)?,
                None => s.sweep_ka.clone(),
            };
            if values.is_empty() {
                return Err(Failure::config("k_a list is empty (pass --ka or set sweep_ka in the config)"));
            }
            let sweep = run_sweep(&s, &values)?;
            let files = write_sweep(&s, &sweep)?;
            print!("{}", sweep.to_csv());
            println!("argmin k_a = {} (residual rms {} V)", sweep.argmin_k_a, sweep.argmin_residual_rms);
            report_files(&files);
        }
        Command::Fit => {
            let path = config_path(cli)?;
            let (cfg, base) = FitConfig::load(path)?;
            let outcome = cfg.run(&base)?;
            let dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir(&base));
            let files = write_fit(&dir, &outcome)?;
            let p = &outcome.report.fitted;
            println!(
                "rmse {:.4e} V after {} iterations (converged: {}); r0 {:.5e}, r1 {:.5e}, c1 {:.5e}",
                outcome.report.rmse, outcome.report.iterations, outcome.report.converged, p.r0, p.r1, p.c1
            );
            if outcome.high_current_warning {
                eprintln!("warning: OCV sweeps ran above C/10, expect a biased curve");
            }
            report_files(&files);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let label = if f.code == 2 { "config error" } else { "runtime error" };
            eprintln!("{label}: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
