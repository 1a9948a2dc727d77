//! Training and benchmark driver over the chunked engine.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use saga_core::dataflow::Direction;
use saga_core::engine::{softmax_cross_entropy, train, Engine, EngineConfig, EngineError, EpochStats, TrainConfig};
use saga_core::frontend::LayerProgram;
use saga_core::graph::{load_graph, Graph, GraphError, LoadOptions, Partition};
use saga_core::kernels::KernelConfig;
use saga_core::passes::optimize;
use saga_core::ring::{
    build_nonring_schedule, build_ring_schedule, maximal_fat_tree, simulate_ring, speedup, DeviceTopology, RingError,
    RingTimeline,
};
use saga_core::schedule::{simulate_timeline, Rates, ScheduleError, Strategy, SwapCounters};
use saga_core::tensor::{DType, Tensor, TensorError};
use saga_core::zoo::{build_model, ModelKind, ModelShape, ZooError};

mod config;

pub use config::{BudgetSetting, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("timeline: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// A loaded graph prepared for one model.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    /// Number of label classes, zero when unlabeled.
    pub classes: usize,
    pub edge_types: usize,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let opts = LoadOptions { label_file: cfg.label_file.clone(), ..Default::default() };
    let raw = load_graph(&cfg.edge_file, &cfg.feature_file, &opts)?;
    let graph = cfg.model_kind()?.prepare_graph(&raw)?;
    let classes = graph.labels().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
    let edge_types = match raw.edge_values() {
        Some(v) if cfg.model_kind()? == ModelKind::GgNn => v.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1,
        _ => 1,
    };
    Ok(Dataset { graph, classes, edge_types })
}

/// Builds the model with seeded parameters. The last layer emits one
/// column per class (or the feature width for unlabeled data); GG-NN keeps
/// the feature width throughout.
pub fn build_layers(cfg: &RunConfig, data: &Dataset) -> Result<Vec<LayerProgram>> {
    let kind = cfg.model_kind()?;
    let f = data.graph.feature_width();
    let out = if data.classes > 0 { data.classes } else { f };
    let shape = ModelShape { layers: cfg.layers, input_width: f, hidden: cfg.hidden, output_width: out, edge_types: data.edge_types };
    let layers = build_model(kind, &shape, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok(if cfg.optimize { layers.iter().map(|p| optimize(p).0).collect() } else { layers })
}

pub fn engine(cfg: &RunConfig, strategy: Strategy, vertices: usize) -> Result<Engine> {
    Ok(Engine::new(EngineConfig {
        intervals: cfg.intervals(vertices),
        budget: cfg.budget()?,
        strategy,
        kernels: KernelConfig { threads: cfg.threads, subgroup_edges: None },
    })?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub forward: SwapCounters,
    pub backward: SwapCounters,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainMetrics {
    pub model: String,
    pub vertices: usize,
    pub edges: usize,
    pub layers: usize,
    pub intervals: usize,
    pub strategy: String,
    /// Resolved budget of each layer's forward dataflow.
    pub budget_bytes: Vec<Option<u64>>,
    pub seed: u64,
    pub lr: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Loss after the last update.
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub metrics: TrainMetrics,
    pub initial: Vec<LayerProgram>,
    pub trained: Vec<LayerProgram>,
}

/// Full-batch training with softmax cross-entropy and gradient descent.
pub fn run_train(cfg: &RunConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    if data.classes == 0 {
        return Err(CliError::Config("training needs a label_file".into()));
    }
    let initial = build_layers(cfg, &data)?;
    let strategy = cfg.strategy()?;
    let e = engine(cfg, strategy, data.graph.num_vertices())?;
    let mut trained = initial.clone();
    let report = train(&e, &mut trained, &data.graph, TrainConfig { epochs: cfg.epochs, lr: cfg.lr, classes: data.classes })?;
    let labels = data.graph.labels().expect("checked above");
    let fwd = e.forward(&trained, &data.graph, false)?;
    let (final_loss, _) = softmax_cross_entropy(&fwd.output, labels, data.classes)?;
    let epochs = report
        .epochs
        .iter()
        .enumerate()
        .map(|(k, &EpochStats { loss, forward, backward })| EpochMetrics { epoch: k + 1, loss, forward, backward })
        .collect();
    let metrics = TrainMetrics {
        model: cfg.model.clone(),
        vertices: data.graph.num_vertices(),
        edges: data.graph.num_edges(),
        layers: cfg.layers,
        intervals: e.config.intervals,
        strategy: strategy.name().into(),
        budget_bytes: fwd.layers.iter().map(|l| l.stats.budget).collect(),
        seed: cfg.seed,
        lr: cfg.lr,
        epochs,
        final_loss,
    };
    Ok(TrainRun { metrics, initial, trained })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub swap_h2d_bytes: u64,
    pub swap_d2h_bytes: u64,
    pub swap_bytes: u64,
    pub load_bytes: u64,
    pub spill_bytes: u64,
    pub peak_bytes: u64,
    /// Simulated seconds for one forward and backward pass over all layers.
    pub makespan: f64,
    pub stall_time: f64,
    /// Whether every eviction plan came from the exact search.
    pub exact_plan: bool,
    /// Largest output difference from the first strategy's run.
    pub output_max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RingReport {
    pub devices: usize,
    pub loaders: Vec<String>,
    pub chunks: usize,
    pub chunk_bytes: f64,
    pub compute_time_per_chunk: f64,
    pub single_device_makespan: f64,
    pub ring_makespan: f64,
    pub nonring_makespan: f64,
    pub ring_speedup: f64,
    pub nonring_speedup: f64,
    pub ring_host_bytes: f64,
    pub nonring_host_bytes: f64,
    /// Which of the two the timeline shows.
    pub selected: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub vertices: usize,
    pub edges: usize,
    pub layers: usize,
    pub intervals: usize,
    pub strategies: Vec<StrategyRow>,
    pub ring: RingReport,
}

#[derive(Clone, Debug)]
pub struct BenchRun {
    pub report: BenchReport,
    pub timeline: RingTimeline,
}

/// Seconds of simulated compute and the (makespan, stall) of every layer's
/// forward and backward schedule.
fn simulated_times(e: &Engine, layers: &[LayerProgram], part: &Partition, rates: Rates) -> Result<(f64, f64, f64)> {
    let (mut forward_compute, mut makespan, mut stall) = (0.0, 0.0, 0.0);
    for p in layers {
        for direction in [Direction::Forward, Direction::Backward] {
            let t = simulate_timeline(&e.schedule(p, part, direction, true)?, rates)?;
            if direction == Direction::Forward {
                forward_compute += t.compute_time;
            }
            makespan += t.makespan;
            stall += t.stall_time;
        }
    }
    Ok((forward_compute, makespan, stall))
}

/// Runs one training step under each strategy and the ring and non-ring
/// loading simulations on the same partitioned graph.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchRun> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let g = &data.graph;
    let layers = build_layers(cfg, &data)?;
    let rates = Rates { compute_rate: cfg.compute_rate, transfer_rate: cfg.transfer_rate };
    let mut rows = Vec::new();
    let mut first: Option<Tensor> = None;
    let mut forward_compute = 0.0;
    let mut intervals = 1;
    for strategy in Strategy::ALL {
        let e = engine(cfg, strategy, g.num_vertices())?;
        intervals = e.config.intervals;
        let part = e.partition(g)?;
        let fwd = e.forward(&layers, g, true)?;
        let seed = match g.labels() {
            Some(l) if data.classes > 0 => softmax_cross_entropy(&fwd.output, l, data.classes)?.1,
            _ => Tensor::filled(fwd.output.shape().to_vec(), 1.0, DType::F64)?,
        };
        let (_, back) = e.backward(&layers, g, &fwd, &seed)?;
        let stats: Vec<_> = fwd.layers.iter().map(|l| &l.stats).chain(&back).collect();
        let mut counters = SwapCounters::default();
        for s in &stats {
            counters.add(&s.counters);
        }
        let (fc, makespan, stall_time) = simulated_times(&e, &layers, &part, rates)?;
        forward_compute = fc;
        let diff = first.get_or_insert_with(|| fwd.output.clone()).max_abs_diff(&fwd.output);
        rows.push(StrategyRow {
            strategy: strategy.name().into(),
            swap_h2d_bytes: counters.swap_h2d_bytes,
            swap_d2h_bytes: counters.swap_d2h_bytes,
            swap_bytes: counters.swap_bytes(),
            load_bytes: counters.load_bytes,
            spill_bytes: counters.spill_bytes,
            peak_bytes: stats.iter().map(|s| s.peak_bytes).max().unwrap_or(0),
            makespan,
            stall_time,
            exact_plan: stats.iter().all(|s| s.exact_plan),
            output_max_abs_diff: diff,
        });
    }

    let topology = match &cfg.topology_file {
        Some(path) => DeviceTopology::load(path)?,
        None => DeviceTopology::switched(cfg.devices, 2, cfg.transfer_rate),
    };
    let devices = topology.num_devices();
    // Each input interval is one streamed chunk; the forward work is split
    // evenly over chunks and over the devices' output shares.
    let chunks = intervals;
    let feature_bytes = (g.num_vertices() * g.feature_width() * DType::F64.size_of()) as f64;
    let chunk_bytes = feature_bytes / chunks as f64;
    let per_chunk = forward_compute / (chunks * devices) as f64;
    let sp = speedup(&topology, chunks, chunk_bytes, per_chunk)?;
    let loaders = maximal_fat_tree(&topology);
    let ring = simulate_ring(&topology, &build_ring_schedule(&topology, chunks, &loaders)?, chunk_bytes, per_chunk)?;
    let nonring = simulate_ring(&topology, &build_nonring_schedule(&topology, chunks)?, chunk_bytes, per_chunk)?;
    let report = BenchReport {
        model: cfg.model.clone(),
        vertices: g.num_vertices(),
        edges: g.num_edges(),
        layers: cfg.layers,
        intervals,
        strategies: rows,
        ring: RingReport {
            devices,
            loaders: loaders.iter().map(|&d| topology.device_name(d).to_string()).collect(),
            chunks,
            chunk_bytes,
            compute_time_per_chunk: per_chunk,
            single_device_makespan: sp.single_device,
            ring_makespan: sp.ring,
            nonring_makespan: sp.nonring,
            ring_speedup: sp.ring_speedup(),
            nonring_speedup: sp.nonring_speedup(),
            ring_host_bytes: ring.host_bytes,
            nonring_host_bytes: nonring.host_bytes,
            selected: if cfg.ring { "ring" } else { "nonring" }.into(),
        },
    };
    Ok(BenchRun { report, timeline: if cfg.ring { ring } else { nonring } })
}

/// Timeline CSV: one row per device action with its simulated interval.
pub fn write_timeline(t: &RingTimeline, topology_names: impl Fn(usize) -> String, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "device", "action", "chunk", "start", "end"])?;
    let mut events = t.events.clone();
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then((a.step, a.device).cmp(&(b.step, b.device))));
    for e in &events {
        w.write_record([
            e.step.to_string(),
            topology_names(e.device),
            e.action.name().to_string(),
            e.action.chunk().to_string(),
            format!("{:?}", e.start),
            format!("{:?}", e.end),
        ])?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

/// Pretty JSON of any report.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}
