//! Experiment runner CLI: `run`, `sweep`, `plot`, and `verify` over the
//! library's experiment layer.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dansf::experiment::{run_experiment, run_verification, sweep_topologies, ExperimentConfig};
use dansf::plot::plot_summary;
use dansf::DansfError;

#[derive(Parser)]
#[command(name = "dansf", version, about = "Distributed node-specific signal fusion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured Monte-Carlo experiment on one topology
    Run(ExperimentArgs),
    /// Run the fully-connected, Erdős–Rényi, and line topologies on a shared
    /// problem family and compare convergence
    Sweep(ExperimentArgs),
    /// Render a summary CSV as a log-scale SVG chart
    Plot {
        /// Summary CSV produced by `run` or `sweep`
        input: PathBuf,
        /// Output SVG path (defaults to the input with an .svg extension)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "convergence")]
        title: String,
    },
    /// Run the built-in invariant battery and print a pass/fail table
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file; omitted fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo runs (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory override
    #[arg(long)]
    out: Option<PathBuf>,
    /// Statistics mode override: exact | sampled
    #[arg(long)]
    mode: Option<String>,
    /// Monte-Carlo run count override
    #[arg(long)]
    runs: Option<usize>,
    /// Topology override: fully_connected | line | erdos_renyi
    #[arg(long)]
    topology: Option<String>,
    /// Edge-list file to use as the connectivity graph
    #[arg(long)]
    topology_file: Option<PathBuf>,
    /// Generic `key=value` config overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ExperimentArgs {
    fn build_config(&self) -> Result<ExperimentConfig, DansfError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        let mut set = |key: &str, value: String| -> Result<(), DansfError> {
            config = config.with_override(key, &value)?;
            Ok(())
        };
        if let Some(seed) = self.seed {
            set("master_seed", seed.to_string())?;
        }
        if let Some(jobs) = self.jobs {
            set("jobs", jobs.to_string())?;
        }
        if let Some(out) = &self.out {
            set("out_dir", format!("{:?}", out.display().to_string()))?;
        }
        if let Some(mode) = &self.mode {
            set("mode", format!("{mode:?}"))?;
        }
        if let Some(runs) = self.runs {
            set("mc_runs", runs.to_string())?;
        }
        if let Some(topology) = &self.topology {
            set("topology", format!("{topology:?}"))?;
        }
        if let Some(file) = &self.topology_file {
            set("topology_file", format!("{:?}", file.display().to_string()))?;
        }
        for kv in &self.sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                DansfError::InvalidConfig(format!("--set expects key=value, got `{kv}`"))
            })?;
            set(key, value.to_string())?;
        }
        Ok(config)
    }
}

fn exit_code_for(err: &DansfError) -> u8 {
    match err {
        DansfError::InvalidConfig(_)
        | DansfError::Parse { .. }
        | DansfError::Json(_)
        | DansfError::Io(_) => 2,
        _ => 1,
    }
}

fn execute(cli: Cli) -> Result<(), DansfError> {
    match cli.command {
        Command::Run(args) => {
            let config = args.build_config()?;
            let artifacts = run_experiment(&config)?;
            let last = artifacts.summary.median.last().copied().unwrap_or(f64::NAN);
            println!("raw:     {}", artifacts.raw_csv.display());
            println!("summary: {}", artifacts.summary_csv.display());
            println!("plot:    {}", artifacts.svg.display());
            println!("family:  {}", artifacts.family_json.display());
            println!("final median max-MSE: {last:.3e}");
            Ok(())
        }
        Command::Sweep(args) => {
            let config = args.build_config()?;
            let artifacts = sweep_topologies(&config)?;
            println!("summary: {}", artifacts.comparison_csv.display());
            println!("counts:  {}", artifacts.iterations_csv.display());
            println!("plot:    {}", artifacts.overlay_svg.display());
            println!("median iterations to max-MSE <= {:.1e}:", config.threshold);
            for (label, median) in artifacts.median_iterations() {
                match median {
                    Some(v) => println!("  {label:16} {v}"),
                    None => println!("  {label:16} not reached"),
                }
            }
            Ok(())
        }
        Command::Plot { input, out, title } => {
            let text = std::fs::read_to_string(&input)?;
            let svg = plot_summary(&text, &title)?;
            let out = out.unwrap_or_else(|| input.with_extension("svg"));
            std::fs::write(&out, svg)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Verify { seed } => {
            let results = run_verification(seed);
            let mut all_passed = true;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("[{status}] {:40} {}", r.name, r.detail);
                all_passed &= r.passed;
            }
            if all_passed {
                Ok(())
            } else {
                Err(DansfError::InvalidGraph("verification failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
