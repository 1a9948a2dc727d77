//! Executes scheduled chunk dataflows: a host store and a device store,
//! with compute ops reading only device-resident buffers.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::dataflow::{build_layer_dataflow, Buffer, BuildOptions, ChunkDataflow, ChunkOp, Direction, OpKind, SwapOutMode, Transfer};
use crate::frontend::{evaluate_expr, Bindings, FrontendError, LayerProgram, Placeholder, TapeEval};
use crate::graph::{partition_2d, EdgeChunk, Graph, GraphError, Partition};
use crate::kernels::{
    apply_edge_chunk, apply_edge_chunk_recorded, backward_apply_edge, scatter_chunk, AccumState, EdgeTensors,
    GatherAux, KernelConfig, KernelError, Kernels, Need, VertexSide,
};
use crate::schedule::{build_schedule, Schedule, ScheduleError, Strategy, SwapCounters};
use crate::tensor::{elementwise, ElementwiseOp, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("buffer {buffer} is not on the device for {op}")]
    NotResident { op: String, buffer: Buffer },
    #[error("buffer {0} is not on the host")]
    NotOnHost(Buffer),
    #[error("buffer {buffer} holds the wrong kind of data for {op}")]
    Payload { op: String, buffer: Buffer },
    #[error("{0} labels for {1} vertices")]
    Labels(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("model output has {width} features, fewer than {classes} classes")]
    Classes { width: usize, classes: usize },
    #[error("graph has no labels")]
    NoLabels,
    #[error("number of intervals must be positive")]
    Intervals,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// Device memory limit for one dataflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Unbounded,
    Bytes(u64),
    /// The largest single-op working set, the smallest feasible budget.
    Tight,
    /// The largest working set plus this many bytes.
    TightPlus(u64),
}

impl Budget {
    fn resolve(self, df: &ChunkDataflow) -> Option<u64> {
        let ws = || df.ops.iter().map(|o| df.working_set(o)).max().unwrap_or(0);
        match self {
            Budget::Unbounded => None,
            Budget::Bytes(b) => Some(b),
            Budget::Tight => Some(ws()),
            Budget::TightPlus(x) => Some(ws() + x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    /// Number of vertex intervals per axis of the chunk grid.
    pub intervals: usize,
    pub budget: Budget,
    pub strategy: Strategy,
    pub kernels: KernelConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            intervals: 1,
            budget: Budget::Unbounded,
            strategy: Strategy::Locality,
            kernels: KernelConfig::default(),
        }
    }
}

type Recorded = Arc<(Tape, TapeEval)>;

/// Contents of a buffer.
#[derive(Clone, Debug)]
enum Payload {
    Tensor(Tensor),
    Tensors(Vec<Tensor>),
    Chunk(Arc<EdgeChunk>),
    Edges(EdgeTensors),
    Accum(Box<AccumState>),
    Aux(Arc<GatherAux>),
    Tape(Recorded),
    Tapes(Vec<Recorded>),
}

/// Host-side buffers carried between dataflows.
#[derive(Clone, Debug, Default)]
pub struct HostStore {
    buffers: BTreeMap<Buffer, Payload>,
}

impl HostStore {
    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn contains(&self, b: &Buffer) -> bool {
        self.buffers.contains_key(b)
    }

    fn tensor(&self, b: &Buffer) -> Result<&Tensor> {
        match self.buffers.get(b) {
            Some(Payload::Tensor(t)) => Ok(t),
            Some(_) => Err(EngineError::Payload { op: "collect".into(), buffer: *b }),
            None => Err(EngineError::NotOnHost(*b)),
        }
    }
}

/// Runs one schedule. Parameter gradients are collected per op and summed
/// in op-id order so the result does not depend on the schedule.
struct Executor<'a> {
    program: &'a LayerProgram,
    part: &'a Partition,
    kernels: &'a Kernels,
    need: Need,
    host: HostStore,
    device: BTreeMap<Buffer, Payload>,
    param_grads: BTreeMap<usize, BTreeMap<String, Tensor>>,
}

macro_rules! take_as {
    ($self:ident, $op:ident, $b:expr, $variant:ident) => {
        match $self.device.get(&$b) {
            Some(Payload::$variant(x)) => x,
            Some(_) => return Err(EngineError::Payload { op: $op.label(), buffer: $b }),
            None => return Err(EngineError::NotResident { op: $op.label(), buffer: $b }),
        }
    };
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(elementwise(ElementwiseOp::Add, a, Some(b))?)
}

impl Executor<'_> {
    fn rows(&self, i: usize) -> usize {
        self.part.interval(i).len()
    }

    fn empty_vertex(&self, i: usize) -> Tensor {
        Tensor::zeros(vec![self.rows(i), self.program.input_width], crate::tensor::DType::F64)
    }

    fn run(&mut self, schedule: &Schedule) -> Result<()> {
        for op in schedule.ops() {
            match op.transfer {
                Some(t) => self.transfer(op, t)?,
                None => self.compute(op)?,
            }
        }
        Ok(())
    }

    fn transfer(&mut self, op: &ChunkOp, t: Transfer) -> Result<()> {
        match t {
            Transfer::In { .. } => {
                let b = op.creates[0];
                let p = self.host.buffers.get(&b).cloned().ok_or(EngineError::NotOnHost(b))?;
                self.device.insert(b, p);
            }
            Transfer::Out(mode) => {
                let b = op.reads[0];
                let p = self.device.remove(&b).ok_or(EngineError::NotResident { op: op.label(), buffer: b })?;
                match mode {
                    SwapOutMode::Evict | SwapOutMode::Spill => {
                        self.host.buffers.insert(b, p);
                    }
                    SwapOutMode::Discard => {}
                    SwapOutMode::Free => {
                        self.host.buffers.remove(&b);
                    }
                }
            }
            Transfer::Peer { .. } => {}
        }
        Ok(())
    }

    fn vertex(&self, op: &ChunkOp, i: usize) -> Result<Tensor> {
        match self.device.get(&Buffer::Vertex(i)) {
            Some(Payload::Tensor(t)) => Ok(t.clone()),
            Some(_) => Err(EngineError::Payload { op: op.label(), buffer: Buffer::Vertex(i) }),
            None => Ok(self.empty_vertex(i)),
        }
    }

    fn pre(&self, i: usize) -> Vec<Tensor> {
        match self.device.get(&Buffer::Pre(i)) {
            Some(Payload::Tensors(t)) => t.clone(),
            _ => Vec::new(),
        }
    }

    fn edge_inputs(&self, op: &ChunkOp, i: usize, j: usize) -> Result<EdgeTensors> {
        let ec = take_as!(self, op, Buffer::Edges(i, j), Chunk).clone();
        let (fs, fd) = (self.vertex(op, i)?, self.vertex(op, j)?);
        let (ps, pd) = (self.pre(i), self.pre(j));
        let src = VertexSide { features: &fs, pre: &ps };
        let dest = VertexSide { features: &fd, pre: &pd };
        Ok(scatter_chunk(src, dest, &ec, &self.need)?)
    }

    fn new_accum(&self, j: usize) -> AccumState {
        AccumState::new(
            self.program.accumulator,
            self.rows(j),
            self.program.edge_width(),
            crate::tensor::DType::F64,
        )
    }

    fn compute(&mut self, op: &ChunkOp) -> Result<()> {
        let params = &self.program.params;
        match (op.direction, op.kind, op.i, op.j) {
            (Direction::Forward, OpKind::PreCompute, Some(i), _) => {
                let v = self.vertex(op, i)?;
                let b = Bindings::new().with_params(params).with(Placeholder::Vertex, v);
                let (mut outs, mut tapes) = (Vec::new(), Vec::new());
                for pc in &self.program.precompute {
                    if op.creates.contains(&Buffer::PreTape(i)) {
                        let mut tape = Tape::new();
                        let eval = TapeEval::record(&pc.expr, &b, &mut tape)?;
                        outs.push(tape.value(eval.output)?.clone());
                        tapes.push(Arc::new((tape, eval)));
                    } else {
                        outs.push(evaluate_expr(&pc.expr, &b, None)?);
                    }
                }
                self.device.insert(Buffer::Pre(i), Payload::Tensors(outs));
                if op.creates.contains(&Buffer::PreTape(i)) {
                    self.device.insert(Buffer::PreTape(i), Payload::Tapes(tapes));
                }
            }
            (Direction::Forward, OpKind::Scatter, Some(i), Some(j)) => {
                let e = self.edge_inputs(op, i, j)?;
                self.device.insert(Buffer::Scattered(i, j), Payload::Edges(e));
            }
            (Direction::Forward, OpKind::ApplyEdge, Some(i), Some(j)) => {
                let e = take_as!(self, op, Buffer::Scattered(i, j), Edges);
                if op.creates.contains(&Buffer::EdgeTape(i, j)) {
                    let (out, tape, eval) = apply_edge_chunk_recorded(&self.program.apply_edge, e, params)?;
                    self.device.insert(Buffer::EdgeOut(i, j), Payload::Tensor(out));
                    self.device.insert(Buffer::EdgeTape(i, j), Payload::Tape(Arc::new((tape, eval))));
                } else {
                    let out = apply_edge_chunk(&self.program.apply_edge, e, params)?;
                    self.device.insert(Buffer::EdgeOut(i, j), Payload::Tensor(out));
                }
            }
            (Direction::Forward, OpKind::Gather | OpKind::FusedGather, Some(i), Some(j)) => {
                let mut state = match self.device.remove(&Buffer::Accum(j)) {
                    Some(Payload::Accum(s)) => s,
                    Some(_) => return Err(EngineError::Payload { op: op.label(), buffer: Buffer::Accum(j) }),
                    None if op.creates.contains(&Buffer::Accum(j)) => Box::new(self.new_accum(j)),
                    None => return Err(EngineError::NotResident { op: op.label(), buffer: Buffer::Accum(j) }),
                };
                let ec = take_as!(self, op, Buffer::Edges(i, j), Chunk).clone();
                if op.kind == OpKind::Gather {
                    let acc = take_as!(self, op, Buffer::EdgeOut(i, j), Tensor);
                    self.kernels.gather_chunk(acc, &ec, &mut state)?;
                } else {
                    let kernel = self.program.fused.as_ref().ok_or_else(|| {
                        KernelError::MissingArtifact("fused kernel descriptor".into())
                    })?;
                    let (fs, fd) = (self.vertex(op, i)?, self.vertex(op, j)?);
                    let (ps, pd) = (self.pre(i), self.pre(j));
                    let src = VertexSide { features: &fs, pre: &ps };
                    let dest = VertexSide { features: &fd, pre: &pd };
                    self.kernels.fused_gather(kernel, src, dest, &ec, params, &mut state)?;
                }
                self.device.insert(Buffer::Accum(j), Payload::Accum(state));
            }
            (Direction::Forward, OpKind::ApplyVertex, Some(j), _) => {
                let state = match self.device.get(&Buffer::Accum(j)) {
                    Some(Payload::Accum(s)) => (**s).clone(),
                    _ => self.new_accum(j),
                };
                let (accum, aux) = state.finish()?;
                let v = self.vertex(op, j)?;
                let b = Bindings::new()
                    .with_params(params)
                    .with(Placeholder::Vertex, v)
                    .with(Placeholder::Accum, accum);
                if op.creates.contains(&Buffer::VertexTape(j)) {
                    let mut tape = Tape::new();
                    let eval = TapeEval::record(&self.program.apply_vertex, &b, &mut tape)?;
                    let out = tape.value(eval.output)?.clone();
                    self.device.insert(Buffer::VertexOut(j), Payload::Tensor(out));
                    self.device.insert(Buffer::VertexTape(j), Payload::Tape(Arc::new((tape, eval))));
                    self.device.insert(Buffer::GatherAux(j), Payload::Aux(Arc::new(aux)));
                } else {
                    let out = evaluate_expr(&self.program.apply_vertex, &b, None)?;
                    self.device.insert(Buffer::VertexOut(j), Payload::Tensor(out));
                }
            }
            (Direction::Backward, OpKind::ApplyVertex, Some(j), _) => {
                let g = take_as!(self, op, Buffer::GradOut(j), Tensor).clone();
                let rec = take_as!(self, op, Buffer::VertexTape(j), Tape).clone();
                let (tape, eval) = &*rec;
                let grads = tape.backward_from(eval.output, &g)?;
                let mut pg = BTreeMap::new();
                let mut grad_accum = None;
                let mut grad_vertex = None;
                for (p, &id) in &eval.inputs {
                    match p {
                        Placeholder::Param(name) => {
                            pg.insert(name.clone(), grads.get(id));
                        }
                        Placeholder::Accum => grad_accum = Some(grads.get(id)),
                        Placeholder::Vertex => grad_vertex = Some(grads.get(id)),
                        _ => {}
                    }
                }
                self.param_grads.insert(op.id, pg);
                let rows = self.rows(j);
                let ga = grad_accum.unwrap_or_else(|| {
                    Tensor::zeros(vec![rows, self.program.accum_width()], crate::tensor::DType::F64)
                });
                let gv = grad_vertex.unwrap_or_else(|| self.empty_vertex(j));
                self.device.insert(Buffer::GradAccum(j), Payload::Tensor(ga));
                self.device.insert(Buffer::GradVertex(j), Payload::Tensor(gv));
                if op.creates.contains(&Buffer::GradPre(j)) {
                    let zeros = (0..self.program.precompute.len())
                        .map(|k| Tensor::zeros(vec![rows, self.program.precompute_width(k)], crate::tensor::DType::F64))
                        .collect();
                    self.device.insert(Buffer::GradPre(j), Payload::Tensors(zeros));
                }
            }
            (Direction::Backward, OpKind::Gather, Some(i), Some(j)) => {
                let ga = take_as!(self, op, Buffer::GradAccum(j), Tensor);
                let aux = take_as!(self, op, Buffer::GatherAux(j), Aux);
                let ec = take_as!(self, op, Buffer::Edges(i, j), Chunk);
                let g = self.kernels.backward_gather(ga, ec, aux)?;
                self.device.insert(Buffer::GradEdgeOut(i, j), Payload::Tensor(g));
            }
            (Direction::Backward, OpKind::ApplyEdge, Some(i), Some(j)) => {
                let g = take_as!(self, op, Buffer::GradEdgeOut(i, j), Tensor).clone();
                let rec = if self.program.fused.is_some() {
                    // Recompute the edge expression from vertex data.
                    let e = self.edge_inputs(op, i, j)?;
                    let (_, tape, eval) = apply_edge_chunk_recorded(&self.program.apply_edge, &e, params)?;
                    Arc::new((tape, eval))
                } else {
                    take_as!(self, op, Buffer::EdgeTape(i, j), Tape).clone()
                };
                let (edge_grads, pg) = backward_apply_edge(&rec.0, &rec.1, &g)?;
                self.param_grads.insert(op.id, pg);
                self.device.insert(Buffer::GradScattered(i, j), Payload::Edges(edge_grads));
            }
            (Direction::Backward, OpKind::Scatter, Some(i), Some(j)) => {
                let grads = take_as!(self, op, Buffer::GradScattered(i, j), Edges);
                let ec = take_as!(self, op, Buffer::Edges(i, j), Chunk);
                let sg = self.kernels.backward_scatter(grads, ec)?;
                for (p, t) in sg.vertex {
                    let (target, slot) = match p {
                        Placeholder::EdgeSrc => (Buffer::GradVertex(i), None),
                        Placeholder::EdgeDest => (Buffer::GradVertex(j), None),
                        Placeholder::ScatteredSrc(k) => (Buffer::GradPre(i), Some(k)),
                        Placeholder::ScatteredDest(k) => (Buffer::GradPre(j), Some(k)),
                        _ => continue,
                    };
                    match (self.device.get_mut(&target), slot) {
                        (Some(Payload::Tensor(acc)), None) => *acc = add(acc, &t)?,
                        (Some(Payload::Tensors(acc)), Some(k)) => acc[k] = add(&acc[k], &t)?,
                        (Some(_), _) => return Err(EngineError::Payload { op: op.label(), buffer: target }),
                        (None, _) => return Err(EngineError::NotResident { op: op.label(), buffer: target }),
                    }
                }
            }
            (Direction::Backward, OpKind::PreCompute, Some(i), _) => {
                let gp = take_as!(self, op, Buffer::GradPre(i), Tensors).clone();
                let tapes = take_as!(self, op, Buffer::PreTape(i), Tapes).clone();
                let mut pg: BTreeMap<String, Tensor> = BTreeMap::new();
                let mut gv: Option<Tensor> = None;
                for (rec, seed) in tapes.iter().zip(&gp) {
                    let (tape, eval) = &**rec;
                    let grads = tape.backward_from(eval.output, seed)?;
                    for (p, &id) in &eval.inputs {
                        let g = grads.get(id);
                        match p {
                            Placeholder::Param(name) => {
                                let v = match pg.remove(name) {
                                    Some(prev) => add(&prev, &g)?,
                                    None => g,
                                };
                                pg.insert(name.clone(), v);
                            }
                            Placeholder::Vertex => {
                                gv = Some(match gv {
                                    Some(prev) => add(&prev, &g)?,
                                    None => g,
                                })
                            }
                            _ => {}
                        }
                    }
                }
                self.param_grads.insert(op.id, pg);
                if let Some(g) = gv {
                    match self.device.get_mut(&Buffer::GradVertex(i)) {
                        Some(Payload::Tensor(acc)) => *acc = add(acc, &g)?,
                        _ => {
                            return Err(EngineError::NotResident { op: op.label(), buffer: Buffer::GradVertex(i) })
                        }
                    }
                }
            }
            _ => return Err(EngineError::Payload { op: op.label(), buffer: op.touched().next().copied().unwrap_or(Buffer::Vertex(0)) }),
        }
        Ok(())
    }

    fn summed_param_grads(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out: BTreeMap<String, Tensor> = self
            .program
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec(), v.dtype())))
            .collect();
        for grads in self.param_grads.values() {
            for (name, g) in grads {
                if let Some(acc) = out.get_mut(name) {
                    *acc = add(acc, g)?;
                }
            }
        }
        Ok(out)
    }
}

fn concat_intervals(host: &HostStore, n: usize, f: impl Fn(usize) -> Buffer) -> Result<Tensor> {
    let parts: Vec<Tensor> = (0..n).map(|i| host.tensor(&f(i)).cloned()).collect::<Result<_>>()?;
    Ok(Tensor::concat_rows(&parts)?)
}

/// Per-layer schedule statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    pub direction: Direction,
    pub budget: Option<u64>,
    pub counters: SwapCounters,
    pub peak_bytes: u64,
    pub ops: usize,
    pub exact_plan: bool,
}

impl LayerStats {
    fn of(s: &Schedule) -> Self {
        Self {
            direction: s.dataflow.direction,
            budget: s.budget,
            counters: s.counters,
            peak_bytes: s.peak_bytes,
            ops: s.order.len(),
            exact_plan: s.exact,
        }
    }
}

/// Result of one layer's forward pass.
#[derive(Clone, Debug)]
pub struct LayerForward {
    pub output: Tensor,
    pub stats: LayerStats,
    /// Input features and saved artifacts, kept for backward.
    saved: HostStore,
}

#[derive(Clone, Debug)]
pub struct LayerBackward {
    pub grad_input: Tensor,
    pub param_grads: BTreeMap<String, Tensor>,
    pub stats: LayerStats,
}

#[derive(Clone, Debug)]
pub struct ModelForward {
    pub output: Tensor,
    pub layers: Vec<LayerForward>,
}

/// Chunked execution engine.
#[derive(Clone, Debug)]
pub struct Engine {
    pub config: EngineConfig,
    kernels: Kernels,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        if config.intervals == 0 {
            return Err(EngineError::Intervals);
        }
        Ok(Self { config, kernels: Kernels::new(config.kernels)? })
    }

    /// Partitions `g` into the configured number of intervals.
    pub fn partition(&self, g: &Graph) -> Result<Partition> {
        let n = g.num_vertices().max(1);
        let size = n.div_ceil(self.config.intervals);
        Ok(partition_2d(g, size)?)
    }

    pub fn schedule(&self, p: &LayerProgram, part: &Partition, direction: Direction, training: bool) -> Result<Schedule> {
        let df = build_layer_dataflow(p, part, direction, BuildOptions { training, ..Default::default() });
        let budget = self.config.budget.resolve(&df);
        Ok(build_schedule(&df, self.config.strategy, budget)?)
    }

    fn executor<'a>(&'a self, p: &'a LayerProgram, part: &'a Partition, host: HostStore) -> Executor<'a> {
        Executor {
            program: p,
            part,
            kernels: &self.kernels,
            need: Need::of(&p.apply_edge),
            host,
            device: BTreeMap::new(),
            param_grads: BTreeMap::new(),
        }
    }

    pub fn forward_layer(&self, p: &LayerProgram, part: &Partition, features: &Tensor, training: bool) -> Result<LayerForward> {
        let schedule = self.schedule(p, part, Direction::Forward, training)?;
        let mut host = HostStore::default();
        for (i, vc) in part.vertex_chunks_for(features).into_iter().enumerate() {
            host.buffers.insert(Buffer::Vertex(i), Payload::Tensor(vc.features));
        }
        for i in 0..part.p() {
            for j in 0..part.p() {
                if !part.chunk(i, j).is_empty() {
                    host.buffers.insert(Buffer::Edges(i, j), Payload::Chunk(part.chunk(i, j).clone()));
                }
            }
        }
        let inputs = host.clone();
        let mut ex = self.executor(p, part, host);
        ex.run(&schedule)?;
        let output = concat_intervals(&ex.host, part.p(), Buffer::VertexOut)?;
        let mut saved = inputs;
        if training {
            for (b, payload) in ex.host.buffers {
                if matches!(
                    b,
                    Buffer::EdgeTape(..) | Buffer::VertexTape(_) | Buffer::GatherAux(_) | Buffer::PreTape(_) | Buffer::Pre(_)
                ) {
                    saved.buffers.insert(b, payload);
                }
            }
        }
        Ok(LayerForward { output, stats: LayerStats::of(&schedule), saved })
    }

    pub fn backward_layer(&self, p: &LayerProgram, part: &Partition, fwd: &LayerForward, grad_out: &Tensor) -> Result<LayerBackward> {
        let schedule = self.schedule(p, part, Direction::Backward, true)?;
        let mut host = fwd.saved.clone();
        for (j, vc) in part.vertex_chunks_for(grad_out).into_iter().enumerate() {
            host.buffers.insert(Buffer::GradOut(j), Payload::Tensor(vc.features));
        }
        let mut ex = self.executor(p, part, host);
        ex.run(&schedule)?;
        let grad_input = concat_intervals(&ex.host, part.p(), Buffer::GradVertex)?;
        let param_grads = ex.summed_param_grads()?;
        Ok(LayerBackward { grad_input, param_grads, stats: LayerStats::of(&schedule) })
    }

    /// Runs the layers in sequence on `g`.
    pub fn forward(&self, layers: &[LayerProgram], g: &Graph, training: bool) -> Result<ModelForward> {
        let part = self.partition(g)?;
        let mut h = g.features().clone();
        let mut out = Vec::with_capacity(layers.len());
        for p in layers {
            let f = self.forward_layer(p, &part, &h, training)?;
            h = f.output.clone();
            out.push(f);
        }
        Ok(ModelForward { output: h, layers: out })
    }

    /// Backpropagates `grad_out` through all layers, returning parameter
    /// gradients per layer.
    pub fn backward(
        &self,
        layers: &[LayerProgram],
        g: &Graph,
        fwd: &ModelForward,
        grad_out: &Tensor,
    ) -> Result<(Vec<BTreeMap<String, Tensor>>, Vec<LayerStats>)> {
        let part = self.partition(g)?;
        let mut grad = grad_out.clone();
        let mut grads = vec![BTreeMap::new(); layers.len()];
        let mut stats = Vec::new();
        for (k, p) in layers.iter().enumerate().rev() {
            let b = self.backward_layer(p, &part, &fwd.layers[k], &grad)?;
            grad = b.grad_input;
            grads[k] = b.param_grads;
            stats.push(b.stats);
        }
        stats.reverse();
        Ok((grads, stats))
    }
}

/// Mean softmax cross-entropy over labeled vertices, reading the first
/// `classes` columns as logits. Returns the loss and its gradient with
/// respect to the whole output (zero outside the logit columns).
pub fn softmax_cross_entropy(output: &Tensor, labels: &[usize], classes: usize) -> Result<(f64, Tensor)> {
    let n = output.rows();
    let w = output.row_width();
    if labels.len() != n {
        return Err(EngineError::Labels(labels.len(), n));
    }
    if w < classes || classes == 0 {
        return Err(EngineError::Classes { width: w, classes });
    }
    let mut grad = vec![0.0; n * w];
    let mut loss = 0.0;
    for (v, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(EngineError::LabelRange { label, classes });
        }
        let logits = &output.row(v)[..classes];
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
        loss += z.ln() + m - logits[label];
        for c in 0..classes {
            let s = (logits[c] - m).exp() / z;
            let t = if c == label { 1.0 } else { 0.0 };
            grad[v * w + c] = (s - t) / n as f64;
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, w], grad)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub classes: usize,
}

/// Loss and swap traffic of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EpochStats {
    /// Loss before the epoch's update.
    pub loss: f64,
    pub forward: SwapCounters,
    pub backward: SwapCounters,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Full-batch gradient descent on the labels of `g`.
pub fn train(engine: &Engine, layers: &mut [LayerProgram], g: &Graph, cfg: TrainConfig) -> Result<TrainReport> {
    let labels = g.labels().ok_or(EngineError::NoLabels)?.to_vec();
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        let fwd = engine.forward(layers, g, true)?;
        let (loss, grad) = softmax_cross_entropy(&fwd.output, &labels, cfg.classes)?;
        let mut epoch = EpochStats { loss, ..Default::default() };
        for l in &fwd.layers {
            epoch.forward.add(&l.stats.counters);
        }
        let (grads, stats) = engine.backward(layers, g, &fwd, &grad)?;
        for s in &stats {
            epoch.backward.add(&s.counters);
        }
        report.epochs.push(epoch);
        for (p, gs) in layers.iter_mut().zip(grads) {
            for (name, gr) in gs {
                let cur = p.params[&name].clone();
                let step = elementwise(ElementwiseOp::Mul, &gr, Some(&Tensor::filled(gr.shape().to_vec(), cfg.lr, gr.dtype())?))?;
                let next = elementwise(ElementwiseOp::Sub, &cur, Some(&step))?;
                p.set_param(&name, next)?;
            }
        }
    }
    Ok(report)
}
