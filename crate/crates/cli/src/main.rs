use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use saga_cli::{run_bench, run_train, to_json, write_timeline, CliError, Result, RunConfig};
use saga_core::graph::{random_graph, write_dataset, SynthSpec};
use saga_core::ring::DeviceTopology;

#[derive(Parser)]
#[command(name = "saga", version, about = "Chunked graph neural network training and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and print per-epoch metrics.
    Train(RunArgs),
    /// Compare scheduling strategies and ring streaming on one dataset.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Number of simulated devices (overrides the config).
        #[arg(long)]
        devices: Option<usize>,
        /// Stream chunks around a device ring.
        #[arg(long, overrides_with = "no_ring")]
        ring: bool,
        /// Load every chunk from the host on every device.
        #[arg(long, overrides_with = "ring")]
        no_ring: bool,
        /// Write the selected loading timeline as CSV.
        #[arg(long)]
        timeline: Option<PathBuf>,
    },
    /// Write a random labeled dataset and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        vertices: usize,
        #[arg(long, default_value_t = 60)]
        edges: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Integer edge types, for GG-NN.
        #[arg(long)]
        edge_types: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "gcn")]
        model: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// stage, dest or locality (overrides the config).
    #[arg(long)]
    strategy: Option<String>,
    /// Kernel threads; results are identical for any count (overrides the config).
    #[arg(long)]
    threads: Option<usize>,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = &self.strategy {
            cfg.strategy = s.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn emit(out: Option<&Path>, json: String) -> Result<()> {
    match out {
        Some(p) => write(p, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let r = run_train(&cfg)?;
            emit(args.out.as_deref(), to_json(&r.metrics)?)
        }
        Command::Bench { run, devices, ring, no_ring, timeline } => {
            let mut cfg = run.config()?;
            if let Some(d) = devices {
                cfg.devices = d;
            }
            if ring || no_ring {
                cfg.ring = ring;
            }
            cfg.validate()?;
            let r = run_bench(&cfg)?;
            if let Some(path) = timeline {
                let topology = match &cfg.topology_file {
                    Some(p) => DeviceTopology::load(p)?,
                    None => DeviceTopology::switched(cfg.devices, 2, cfg.transfer_rate),
                };
                write_timeline(&r.timeline, |d| topology.device_name(d).to_string(), &path)?;
            }
            emit(run.out.as_deref(), to_json(&r.report)?)
        }
        Command::Synth { out, vertices, edges, features, classes, edge_types, seed, model } => {
            let spec = SynthSpec { vertices, edges, features, classes: Some(classes), edge_types };
            let g = random_graph(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
            write_dataset(&g, &out)?;
            let mut cfg = RunConfig::new(&model, "edges.txt", "features.csv");
            cfg.label_file = Some("labels.txt".into());
            cfg.seed = seed;
            cfg.validate()?;
            write(&out.join("config.json"), &to_json(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
