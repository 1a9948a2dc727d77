//! Lowering of one layer onto a partitioned graph: a chunk-granularity
//! operator graph whose nodes name the buffers they read, create and update.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::frontend::{LayerProgram, Placeholder};
use crate::graph::Partition;
use crate::kernels::Need;
use crate::tensor::DType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OpKind {
    PreCompute,
    Scatter,
    ApplyEdge,
    Gather,
    FusedGather,
    ApplyVertex,
    SwapIn,
    SwapOut,
    DeviceTransfer,
}

impl OpKind {
    pub fn is_transfer(self) -> bool {
        matches!(self, OpKind::SwapIn | OpKind::SwapOut | OpKind::DeviceTransfer)
    }

    fn short(self) -> &'static str {
        match self {
            OpKind::PreCompute => "Pre",
            OpKind::Scatter => "S",
            OpKind::ApplyEdge => "AE",
            OpKind::Gather => "G",
            OpKind::FusedGather => "FG",
            OpKind::ApplyVertex => "AV",
            OpKind::SwapIn => "In",
            OpKind::SwapOut => "Out",
            OpKind::DeviceTransfer => "D2D",
        }
    }
}

/// Named data a chunk operator touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Buffer {
    /// Input features of interval i.
    Vertex(usize),
    /// Pre-computed per-vertex values of interval i.
    Pre(usize),
    PreTape(usize),
    /// Edge chunk structure (both layouts and edge data).
    Edges(usize, usize),
    Scattered(usize, usize),
    EdgeOut(usize, usize),
    EdgeTape(usize, usize),
    /// Running accumulator of destination interval j.
    Accum(usize),
    GatherAux(usize),
    VertexOut(usize),
    VertexTape(usize),
    GradOut(usize),
    GradAccum(usize),
    GradEdgeOut(usize, usize),
    GradScattered(usize, usize),
    GradVertex(usize),
    GradPre(usize),
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{self:?}");
        f.write_str(&s.replace(", ", ","))
    }
}

/// What a SwapOut does with the device copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum SwapOutMode {
    /// Dirty copy written back; a later SwapIn follows.
    Evict,
    /// Clean copy dropped; the host copy is still valid.
    Discard,
    /// Final copy moved to the host for a later layer or direction.
    Spill,
    /// No longer needed anywhere; nothing moves.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Transfer {
    /// Host to device. `reload` is false for the first load of host data.
    In { reload: bool },
    Out(SwapOutMode),
    /// Device to device.
    Peer { from: usize, to: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub flops: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChunkOp {
    pub id: usize,
    pub kind: OpKind,
    pub direction: Direction,
    /// Source interval for edge-stage ops, the interval for vertex ops.
    pub i: Option<usize>,
    /// Destination interval for edge-stage ops.
    pub j: Option<usize>,
    pub reads: Vec<Buffer>,
    pub creates: Vec<Buffer>,
    pub updates: Vec<Buffer>,
    pub transfer: Option<Transfer>,
    pub cost: Cost,
}

impl ChunkOp {
    /// `S`, `AE^b` and so on.
    pub fn stage(&self) -> String {
        match self.direction {
            Direction::Forward => self.kind.short().to_string(),
            Direction::Backward => format!("{}^b", self.kind.short()),
        }
    }

    pub fn label(&self) -> String {
        match (self.i, self.j) {
            (Some(i), Some(j)) => format!("{}({i},{j})", self.stage()),
            (Some(i), None) => format!("{}({i})", self.stage()),
            _ => match (self.transfer, self.touched().next()) {
                (Some(_), Some(b)) => format!("{} {b}", self.stage()),
                _ => self.stage(),
            },
        }
    }

    /// Every buffer the op needs resident: reads, creates and updates.
    pub fn touched(&self) -> impl Iterator<Item = &Buffer> {
        self.reads.iter().chain(&self.updates).chain(&self.creates)
    }

    /// Position in the stage order along dependency paths. Backward ops run
    /// ApplyVertex, Gather, ApplyEdge, Scatter, then pre-compute.
    pub fn stage_rank(&self) -> usize {
        let forward = [
            OpKind::PreCompute,
            OpKind::Scatter,
            OpKind::ApplyEdge,
            OpKind::Gather,
            OpKind::FusedGather,
            OpKind::ApplyVertex,
        ];
        let backward = [
            OpKind::ApplyVertex,
            OpKind::Gather,
            OpKind::ApplyEdge,
            OpKind::Scatter,
            OpKind::PreCompute,
        ];
        let order: &[OpKind] = match self.direction {
            Direction::Forward => &forward,
            Direction::Backward => &backward,
        };
        order.iter().position(|&k| k == self.kind).unwrap_or(usize::MAX)
    }
}

/// Options that change what gets lowered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    /// Keep the forward artifacts backward needs.
    pub training: bool,
    /// Element type for the byte cost model.
    pub dtype: DType,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            training: false,
            dtype: DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChunkDataflow {
    pub p: usize,
    pub direction: Direction,
    pub training: bool,
    pub fused: bool,
    pub ops: Vec<ChunkOp>,
    /// Predecessors of each op.
    pub deps: Vec<Vec<usize>>,
    pub sizes: BTreeMap<Buffer, u64>,
    /// Buffers that start on the host.
    pub inputs: BTreeSet<Buffer>,
    /// Buffers that must end on the host.
    pub outputs: BTreeSet<Buffer>,
}

impl ChunkDataflow {
    pub fn size(&self, b: &Buffer) -> u64 {
        self.sizes.get(b).copied().unwrap_or(0)
    }

    /// Bytes an op needs resident while it runs.
    pub fn working_set(&self, op: &ChunkOp) -> u64 {
        let set: BTreeSet<&Buffer> = op.touched().collect();
        set.into_iter().map(|b| self.size(b)).sum()
    }

    /// Sum of all buffer sizes; a budget at least this large never swaps.
    pub fn total_bytes(&self) -> u64 {
        self.sizes.values().sum()
    }

    pub fn compute_ops(&self) -> impl Iterator<Item = &ChunkOp> {
        self.ops.iter().filter(|o| !o.kind.is_transfer())
    }

    /// Successor lists derived from `deps`.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.ops.len()];
        for (v, ps) in self.deps.iter().enumerate() {
            for &u in ps {
                succ[u].push(v);
            }
        }
        succ
    }

    /// Whether `order` lists every op once and respects dependencies.
    pub fn is_topological(&self, order: &[usize]) -> bool {
        let mut pos = vec![usize::MAX; self.ops.len()];
        for (k, &o) in order.iter().enumerate() {
            if o >= pos.len() || pos[o] != usize::MAX {
                return false;
            }
            pos[o] = k;
        }
        order.len() == self.ops.len()
            && self
                .deps
                .iter()
                .enumerate()
                .all(|(v, ps)| ps.iter().all(|&u| pos[u] < pos[v]))
    }

    /// Textual listing, one op per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for op in &self.ops {
            let list = |bs: &[Buffer]| bs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
            out.push_str(&format!(
                "%{} {} reads=[{}] creates=[{}] updates=[{}] deps={:?} flops={} bytes={}\n",
                op.id,
                op.label(),
                list(&op.reads),
                list(&op.creates),
                list(&op.updates),
                self.deps[op.id],
                op.cost.flops,
                op.cost.bytes,
            ));
        }
        out
    }

    /// Adds `op` and derives its dependencies: the last writer of every
    /// buffer it touches, plus every reader since then for buffers it writes.
    fn push(&mut self, state: &mut Tracker, mut op: ChunkOp) {
        let id = self.ops.len();
        op.id = id;
        let mut deps = BTreeSet::new();
        for b in op.reads.iter().chain(&op.updates) {
            if let Some(&w) = state.writer.get(b) {
                deps.insert(w);
            }
        }
        for b in op.updates.iter().chain(&op.creates) {
            if let Some(rs) = state.readers.get(b) {
                deps.extend(rs.iter().copied());
            }
            if let Some(&w) = state.writer.get(b) {
                deps.insert(w);
            }
        }
        for b in &op.reads {
            state.readers.entry(*b).or_default().push(id);
        }
        for b in op.updates.iter().chain(&op.creates) {
            state.writer.insert(*b, id);
            state.readers.remove(b);
        }
        self.deps.push(deps.into_iter().collect());
        self.ops.push(op);
    }
}

#[derive(Default)]
struct Tracker {
    writer: BTreeMap<Buffer, usize>,
    readers: BTreeMap<Buffer, Vec<usize>>,
}

fn op(kind: OpKind, direction: Direction, i: Option<usize>, j: Option<usize>) -> ChunkOp {
    ChunkOp {
        id: 0,
        kind,
        direction,
        i,
        j,
        reads: Vec::new(),
        creates: Vec::new(),
        updates: Vec::new(),
        transfer: None,
        cost: Cost::default(),
    }
}

/// Width of the scattered edge tensors ApplyEdge reads.
fn scattered_width(p: &LayerProgram, need: &Need) -> usize {
    let mut w = 0;
    if need.src {
        w += p.input_width;
    }
    if need.dest {
        w += p.input_width;
    }
    if need.data {
        w += p.edge_data_width;
    }
    for s in &need.scattered {
        if let Placeholder::ScatteredSrc(k) | Placeholder::ScatteredDest(k) = s {
            w += p.precompute_width(*k);
        }
    }
    w
}

/// Which vertex-side buffers an edge-stage op of chunk (i, j) reads.
fn vertex_reads(need: &Need, i: usize, j: usize) -> Vec<Buffer> {
    let mut reads = BTreeSet::new();
    if need.src {
        reads.insert(Buffer::Vertex(i));
    }
    if need.dest {
        reads.insert(Buffer::Vertex(j));
    }
    for s in &need.scattered {
        match s {
            Placeholder::ScatteredSrc(_) => {
                reads.insert(Buffer::Pre(i));
            }
            Placeholder::ScatteredDest(_) => {
                reads.insert(Buffer::Pre(j));
            }
            _ => {}
        }
    }
    reads.insert(Buffer::Edges(i, j));
    reads.into_iter().collect()
}

/// Lowers one layer onto `part`. Forward emits, per destination interval j,
/// the Scatter/ApplyEdge/Gather chain of every nonempty chunk (i, j) feeding
/// the accumulator, then ApplyVertex(j). Backward emits the reverse stages.
pub fn build_layer_dataflow(
    p: &LayerProgram,
    part: &Partition,
    direction: Direction,
    opts: BuildOptions,
) -> ChunkDataflow {
    let s = opts.dtype.size_of() as u64;
    let n = part.p();
    let need = Need::of(&p.apply_edge);
    let has_pre = !p.precompute.is_empty();
    let fused = p.fused.is_some();
    let rows = |i: usize| part.interval(i).len() as u64;
    let edges = |i: usize, j: usize| part.chunk(i, j).num_edges() as u64;
    let pre_w: usize = (0..p.precompute.len()).map(|k| p.precompute_width(k)).sum();
    let pre_tape_w: usize = p.precompute.iter().map(|pc| pc.expr.row_values_width()).sum();
    let pre_flops: u64 = p.precompute.iter().map(|pc| pc.expr.flops_per_row()).sum();
    let edge_w = p.edge_width() as u64;
    let acc_w = p.accum_width() as u64;
    let owner_w = match p.accumulator {
        crate::frontend::Accumulator::Sum => 0,
        crate::frontend::Accumulator::Max => acc_w,
        crate::frontend::Accumulator::Concat { slots } => slots as u64,
    };
    let scat_w = scattered_width(p, &need) as u64;
    let grad_scat_w = scat_w - if need.data { p.edge_data_width as u64 } else { 0 };

    let mut df = ChunkDataflow {
        p: n,
        direction,
        training: opts.training,
        fused,
        ops: Vec::new(),
        deps: Vec::new(),
        sizes: BTreeMap::new(),
        inputs: BTreeSet::new(),
        outputs: BTreeSet::new(),
    };
    let mut sizes = BTreeMap::new();
    for i in 0..n {
        sizes.insert(Buffer::Vertex(i), rows(i) * p.input_width as u64 * s);
        if has_pre {
            sizes.insert(Buffer::Pre(i), rows(i) * pre_w as u64 * s);
            sizes.insert(Buffer::PreTape(i), rows(i) * pre_tape_w as u64 * s);
        }
        sizes.insert(Buffer::Accum(i), rows(i) * (acc_w * s + owner_w * 8 + 8));
        sizes.insert(Buffer::GatherAux(i), rows(i) * (owner_w * 8 + 8));
        sizes.insert(Buffer::VertexOut(i), rows(i) * p.output_width() as u64 * s);
        sizes.insert(
            Buffer::VertexTape(i),
            rows(i) * p.apply_vertex.row_values_width() as u64 * s,
        );
        sizes.insert(Buffer::GradOut(i), rows(i) * p.output_width() as u64 * s);
        sizes.insert(Buffer::GradAccum(i), rows(i) * acc_w * s);
        sizes.insert(Buffer::GradVertex(i), rows(i) * p.input_width as u64 * s);
        if has_pre {
            sizes.insert(Buffer::GradPre(i), rows(i) * pre_w as u64 * s);
        }
        for j in 0..n {
            let e = edges(i, j);
            if e == 0 {
                continue;
            }
            sizes.insert(Buffer::Edges(i, j), part.chunk(i, j).size_bytes());
            sizes.insert(Buffer::Scattered(i, j), e * scat_w * s);
            sizes.insert(Buffer::EdgeOut(i, j), e * edge_w * s);
            sizes.insert(
                Buffer::EdgeTape(i, j),
                e * p.apply_edge.row_values_width() as u64 * s,
            );
            sizes.insert(Buffer::GradEdgeOut(i, j), e * edge_w * s);
            sizes.insert(Buffer::GradScattered(i, j), e * grad_scat_w * s);
        }
    }

    let mut t = Tracker::default();
    let edge_flops = p.apply_edge.flops_per_row();
    let vertex_flops = p.apply_vertex.flops_per_row();
    let pre_used = |i: usize| {
        (0..n).any(|j| {
            edges(i, j) > 0 && need.scattered.iter().any(|s| matches!(s, Placeholder::ScatteredSrc(_)))
                || edges(j, i) > 0 && need.scattered.iter().any(|s| matches!(s, Placeholder::ScatteredDest(_)))
        })
    };

    match direction {
        Direction::Forward => {
            for i in 0..n {
                df.inputs.insert(Buffer::Vertex(i));
                for j in 0..n {
                    if edges(i, j) > 0 {
                        df.inputs.insert(Buffer::Edges(i, j));
                    }
                }
            }
            for i in 0..n {
                if !has_pre || !pre_used(i) {
                    continue;
                }
                let mut o = op(OpKind::PreCompute, direction, Some(i), None);
                o.reads.push(Buffer::Vertex(i));
                o.creates.push(Buffer::Pre(i));
                if opts.training {
                    o.creates.push(Buffer::PreTape(i));
                    df.outputs.insert(Buffer::PreTape(i));
                    if fused {
                        df.outputs.insert(Buffer::Pre(i));
                    }
                }
                o.cost.flops = rows(i) * pre_flops;
                df.push(&mut t, o);
            }
            for j in 0..n {
                let mut first = true;
                for i in 0..n {
                    let e = edges(i, j);
                    if e == 0 {
                        continue;
                    }
                    let acc_buf = Buffer::Accum(j);
                    let gather_target = |o: &mut ChunkOp, first: bool| {
                        if first {
                            o.creates.push(acc_buf);
                        } else {
                            o.updates.push(acc_buf);
                        }
                    };
                    if fused {
                        let mut o = op(OpKind::FusedGather, direction, Some(i), Some(j));
                        o.reads = vertex_reads(&need, i, j);
                        gather_target(&mut o, first);
                        o.cost.flops = e * (edge_flops + edge_w);
                        df.push(&mut t, o);
                    } else {
                        let mut o = op(OpKind::Scatter, direction, Some(i), Some(j));
                        o.reads = vertex_reads(&need, i, j);
                        o.creates.push(Buffer::Scattered(i, j));
                        o.cost.flops = e * scat_w;
                        df.push(&mut t, o);

                        let mut o = op(OpKind::ApplyEdge, direction, Some(i), Some(j));
                        o.reads.push(Buffer::Scattered(i, j));
                        o.creates.push(Buffer::EdgeOut(i, j));
                        if opts.training {
                            o.creates.push(Buffer::EdgeTape(i, j));
                            df.outputs.insert(Buffer::EdgeTape(i, j));
                        }
                        o.cost.flops = e * edge_flops;
                        df.push(&mut t, o);

                        let mut o = op(OpKind::Gather, direction, Some(i), Some(j));
                        o.reads.push(Buffer::EdgeOut(i, j));
                        o.reads.push(Buffer::Edges(i, j));
                        gather_target(&mut o, first);
                        o.cost.flops = e * edge_w;
                        df.push(&mut t, o);
                    }
                    first = false;
                }
                let mut o = op(OpKind::ApplyVertex, direction, Some(j), None);
                o.reads.push(Buffer::Vertex(j));
                if !first {
                    o.reads.push(Buffer::Accum(j));
                }
                o.creates.push(Buffer::VertexOut(j));
                df.outputs.insert(Buffer::VertexOut(j));
                if opts.training {
                    o.creates.push(Buffer::VertexTape(j));
                    o.creates.push(Buffer::GatherAux(j));
                    df.outputs.insert(Buffer::VertexTape(j));
                    df.outputs.insert(Buffer::GatherAux(j));
                }
                o.cost.flops = rows(j) * vertex_flops;
                df.push(&mut t, o);
            }
        }
        Direction::Backward => {
            for j in 0..n {
                df.inputs.insert(Buffer::GradOut(j));
                df.inputs.insert(Buffer::VertexTape(j));
                df.inputs.insert(Buffer::GatherAux(j));
                df.outputs.insert(Buffer::GradVertex(j));
            }
            for j in 0..n {
                let mut o = op(OpKind::ApplyVertex, direction, Some(j), None);
                o.reads.push(Buffer::GradOut(j));
                o.reads.push(Buffer::VertexTape(j));
                o.creates.push(Buffer::GradAccum(j));
                o.creates.push(Buffer::GradVertex(j));
                if has_pre {
                    o.creates.push(Buffer::GradPre(j));
                }
                o.cost.flops = 2 * rows(j) * vertex_flops;
                df.push(&mut t, o);
            }
            for j in 0..n {
                for i in 0..n {
                    let e = edges(i, j);
                    if e == 0 {
                        continue;
                    }
                    df.inputs.insert(Buffer::Edges(i, j));
                    let mut o = op(OpKind::Gather, direction, Some(i), Some(j));
                    o.reads.extend([Buffer::GradAccum(j), Buffer::GatherAux(j), Buffer::Edges(i, j)]);
                    o.creates.push(Buffer::GradEdgeOut(i, j));
                    o.cost.flops = e * edge_w;
                    df.push(&mut t, o);

                    let mut o = op(OpKind::ApplyEdge, direction, Some(i), Some(j));
                    o.reads.push(Buffer::GradEdgeOut(i, j));
                    if fused {
                        // Recomputes the edge tape from vertex data.
                        for b in vertex_reads(&need, i, j) {
                            df.inputs.insert(b);
                            o.reads.push(b);
                        }
                        o.cost.flops = 3 * e * edge_flops + e * scat_w;
                    } else {
                        df.inputs.insert(Buffer::EdgeTape(i, j));
                        o.reads.push(Buffer::EdgeTape(i, j));
                        o.cost.flops = 2 * e * edge_flops;
                    }
                    o.creates.push(Buffer::GradScattered(i, j));
                    df.push(&mut t, o);

                    let mut o = op(OpKind::Scatter, direction, Some(i), Some(j));
                    o.reads.extend([Buffer::GradScattered(i, j), Buffer::Edges(i, j)]);
                    let mut upd = BTreeSet::new();
                    if need.src {
                        upd.insert(Buffer::GradVertex(i));
                    }
                    if need.dest {
                        upd.insert(Buffer::GradVertex(j));
                    }
                    for sc in &need.scattered {
                        match sc {
                            Placeholder::ScatteredSrc(_) => upd.insert(Buffer::GradPre(i)),
                            Placeholder::ScatteredDest(_) => upd.insert(Buffer::GradPre(j)),
                            _ => false,
                        };
                    }
                    o.updates = upd.into_iter().collect();
                    o.cost.flops = e * grad_scat_w;
                    df.push(&mut t, o);
                }
            }
            if has_pre {
                for i in 0..n {
                    if !pre_used(i) {
                        continue;
                    }
                    df.inputs.insert(Buffer::PreTape(i));
                    let mut o = op(OpKind::PreCompute, direction, Some(i), None);
                    o.reads.extend([Buffer::GradPre(i), Buffer::PreTape(i)]);
                    o.updates.push(Buffer::GradVertex(i));
                    o.cost.flops = 2 * rows(i) * pre_flops;
                    df.push(&mut t, o);
                }
            }
        }
    }
    for o in &mut df.ops {
        o.cost.bytes = o.touched().collect::<BTreeSet<_>>().into_iter().map(|b| sizes.get(b).copied().unwrap_or(0)).sum();
    }
    let used: BTreeSet<Buffer> = df.ops.iter().flat_map(|o| o.touched().copied()).collect();
    sizes.retain(|b, _| used.contains(b));
    df.inputs.retain(|b| used.contains(b));
    df.sizes = sizes;
    df
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{partition_2d, Graph};
    use crate::tensor::Tensor;
    use crate::zoo::{build_gcn, build_ggcn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_graph(n: usize) -> Graph {
        let mut edges = Vec::new();
        for s in 0..n {
            for d in 0..n {
                edges.push((s, d));
            }
        }
        Graph::new(n, edges, None, Tensor::zeros(vec![n, 4], DType::F64)).unwrap()
    }

    fn count(df: &ChunkDataflow, kind: OpKind) -> usize {
        df.ops.iter().filter(|o| o.kind == kind).count()
    }

    #[test]
    fn dense_grid_forward_op_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_ggcn(4, 4, &mut rng).unwrap();
        let part = partition_2d(&dense_graph(6), 2).unwrap();
        let df = build_layer_dataflow(&p, &part, Direction::Forward, BuildOptions::default());
        assert_eq!(count(&df, OpKind::Scatter), 9);
        assert_eq!(count(&df, OpKind::ApplyEdge), 9);
        assert_eq!(count(&df, OpKind::Gather), 9);
        assert_eq!(count(&df, OpKind::ApplyVertex), 3);
        let (fused, _) = crate::passes::optimize(&p);
        let df = build_layer_dataflow(&fused, &part, Direction::Forward, BuildOptions::default());
        assert_eq!(count(&df, OpKind::FusedGather), 9);
        assert_eq!(count(&df, OpKind::Scatter), 0);
    }

    #[test]
    fn empty_chunk_has_no_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_gcn(4, 4, &mut rng).unwrap();
        // Vertices 0,1 form interval 0; 2,3 interval 1. No edge 0->1 interval.
        let g = Graph::new(4, vec![(0, 1), (2, 3), (3, 0)], None, Tensor::zeros(vec![4, 4], DType::F64)).unwrap();
        let part = partition_2d(&g, 2).unwrap();
        let df = build_layer_dataflow(&p, &part, Direction::Forward, BuildOptions::default());
        let col1 = df.ops.iter().filter(|o| o.kind == OpKind::Gather && o.j == Some(1)).count();
        assert_eq!(col1, 1);
        assert!(df.is_topological(&(0..df.ops.len()).collect::<Vec<_>>()));
    }

    #[test]
    fn gather_chain_is_serialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_gcn(4, 4, &mut rng).unwrap();
        let part = partition_2d(&dense_graph(6), 2).unwrap();
        let df = build_layer_dataflow(&p, &part, Direction::Forward, BuildOptions::default());
        let gathers: Vec<&ChunkOp> = df.ops.iter().filter(|o| o.kind == OpKind::Gather && o.j == Some(0)).collect();
        for w in gathers.windows(2) {
            assert!(df.deps[w[1].id].contains(&w[0].id));
        }
        for g in df.ops.iter().filter(|o| o.kind == OpKind::Gather) {
            assert!(g.reads.iter().all(|b| match b {
                Buffer::EdgeOut(_, j) | Buffer::Edges(_, j) => Some(*j) == g.j,
                _ => true,
            }));
        }
    }

    #[test]
    fn backward_dependencies_follow_reverse_stage_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_gcn(4, 4, &mut rng).unwrap();
        let part = partition_2d(&dense_graph(6), 2).unwrap();
        let opts = BuildOptions { training: true, ..Default::default() };
        let df = build_layer_dataflow(&p, &part, Direction::Backward, opts);
        for (v, ps) in df.deps.iter().enumerate() {
            for &u in ps {
                assert!(df.ops[u].stage_rank() <= df.ops[v].stage_rank(), "{} -> {}", df.ops[u].label(), df.ops[v].label());
            }
        }
    }

    #[test]
    fn dump_lists_one_op_per_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_gcn(4, 4, &mut rng).unwrap();
        let part = partition_2d(&dense_graph(2), 2).unwrap();
        let df = build_layer_dataflow(&p, &part, Direction::Forward, BuildOptions::default());
        let dump = df.dump();
        assert_eq!(dump.lines().count(), 4);
        let first = dump.lines().next().unwrap();
        assert!(first.starts_with("%0 S(0,0) reads=[Vertex(0),Edges(0,0)]"), "{first}");
    }
}
