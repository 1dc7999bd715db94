use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmmpf::experiment::{
    emit_outputs, parse_f64_list, parse_key_values, ExperimentConfig, DEFAULT_SWEEP_PAIRS, DEFAULT_SWEEP_V0,
};
use lmmpf::homec::PAIR_IDS;
use lmmpf::ode_models::PROBLEM_IDS;
use lmmpf::{run_experiment, run_sweep, Error, Execution, ResultsTable};

#[derive(Parser)]
#[command(
    name = "lmmpf",
    version,
    about = "Particle filter experiments with multistep integrators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and print its results row
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        v0: Option<f64>,
    },
    /// Run every pair against every initial variance
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated pair ids
        #[arg(long, value_delimiter = ',')]
        pairs: Option<Vec<String>>,
        /// Comma-separated initial variances
        #[arg(long, value_delimiter = ',')]
        v0s: Option<Vec<f64>>,
    },
    /// List test problems and method pairs
    List,
}

#[derive(Args)]
struct Common {
    /// key=value file; flags given on the command line take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Particle count
    #[arg(long)]
    nsample: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tend: Option<f64>,
    /// Observe every `stride` steps
    #[arg(long)]
    stride: Option<usize>,
    /// Observation noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Lower bound on the innovation variance
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// multinomial or systematic
    #[arg(long)]
    resampler: Option<String>,
    /// Write table.csv and per-run trajectories and plots here
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Disable data parallelism
    #[arg(long)]
    sequential: bool,
}

impl Common {
    /// Builds a config from the file (if any) and then the flags. Entries for
    /// `pair` and `v0` are returned raw so a sweep can read them as lists.
    fn load(&self) -> Result<(ExperimentConfig, Option<String>, Option<String>), Error> {
        let mut cfg = ExperimentConfig::default();
        let (mut pair, mut v0) = (None, None);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read config file {}: {e}", path.display())))?;
            for (key, value) in parse_key_values(&text)? {
                match key.as_str() {
                    "pair" => pair = Some(value),
                    "v0" => v0 = Some(value),
                    _ => cfg.set(&key, &value)?,
                }
            }
        }
        let flags: [(&str, Option<String>); 11] = [
            ("problem", self.problem.clone()),
            ("nsample", self.nsample.map(|v| v.to_string())),
            ("dt", self.dt.map(|v| v.to_string())),
            ("tend", self.tend.map(|v| v.to_string())),
            ("stride", self.stride.map(|v| v.to_string())),
            ("noise", self.noise.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("floor", self.floor.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("reps", self.reps.map(|v| v.to_string())),
            ("resampler", self.resampler.clone()),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        if let Some(dir) = &self.outdir {
            cfg.outdir = Some(dir.clone());
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        Ok((cfg, pair, v0))
    }
}

fn print_table(table: &ResultsTable) {
    print!("{}", table.to_csv());
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::List => {
            println!("problems:");
            for p in PROBLEM_IDS {
                println!("  {p}");
            }
            println!("pairs:");
            for p in PAIR_IDS {
                println!("  {p}");
            }
        }
        Command::Run { common, pair, v0 } => {
            let (mut cfg, file_pair, file_v0) = common.load()?;
            if let Some(p) = pair.or(file_pair) {
                cfg.set("pair", &p)?;
            }
            if let Some(v) = v0.map(|v| v.to_string()).or(file_v0) {
                cfg.set("v0", &v)?;
            }
            let outcome = run_experiment(&cfg)?;
            let table = ResultsTable {
                rows: vec![outcome.row],
            };
            print_table(&table);
            if let Some(dir) = &cfg.outdir {
                let runs: Vec<_> = outcome
                    .diagnostics
                    .into_iter()
                    .enumerate()
                    .map(|(k, d)| (cfg.run_label(k), d))
                    .collect();
                let manifest = emit_outputs(&table, &runs, dir)?;
                eprintln!("wrote {} files to {}", manifest.len(), dir.display());
            }
        }
        Command::Sweep { common, pairs, v0s } => {
            let (cfg, file_pairs, file_v0s) = common.load()?;
            let pairs = match (pairs, file_pairs) {
                (Some(p), _) => p,
                (None, Some(p)) => p.split(',').map(|s| s.trim().to_string()).collect(),
                (None, None) => DEFAULT_SWEEP_PAIRS.iter().map(|s| s.to_string()).collect(),
            };
            let v0s = match (v0s, file_v0s) {
                (Some(v), _) => v,
                (None, Some(v)) => parse_f64_list("v0", &v)?,
                (None, None) => DEFAULT_SWEEP_V0.to_vec(),
            };
            let (table, runs) = run_sweep(&cfg, &pairs, &v0s)?;
            print_table(&table);
            if let Some(dir) = &cfg.outdir {
                let manifest = emit_outputs(&table, &runs, dir)?;
                eprintln!("wrote {} files to {}", manifest.len(), dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
