//! Chunk kernels: Scatter, ApplyEdge, Gather, fused gather and their
//! backward forms.
//!
//! The unit of parallel work is a destination group, i.e. all in-edges of
//! one destination vertex inside a chunk. Each group folds its edges into a
//! local register row seeded from the accumulator and writes it back once.
//! With `subgroup_edges` unset the fold runs in CSC order no matter how many
//! threads are used, so results are bit-identical to a single thread.

mod fused;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::frontend::{
    evaluate_expr, Accumulator, Bindings, ExprGraph, FrontendError, Placeholder, TapeEval,
};
use crate::graph::EdgeChunk;
use crate::passes::FusedKernel;
use crate::tensor::{DType, Tape, Tensor, TensorError};

pub use fused::fused_gather_chunk;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("vertex {vertex} has more in-edges than the {slots} concat slots")]
    ConcatOverflow { vertex: usize, slots: usize },
    #[error("missing forward artifact: {0}")]
    MissingArtifact(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

/// Kernel parallelism settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelConfig {
    pub threads: usize,
    /// Split destination groups larger than this into consecutive subgroups
    /// folded independently and then combined. `None` keeps strict CSC order.
    pub subgroup_edges: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            subgroup_edges: None,
        }
    }
}

/// Kernel runner owning its thread pool.
#[derive(Clone)]
pub struct Kernels {
    config: KernelConfig,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Kernels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernels").field("config", &self.config).finish()
    }
}

impl Default for Kernels {
    fn default() -> Self {
        Self::new(KernelConfig::default()).expect("single-threaded kernels")
    }
}

impl Kernels {
    pub fn new(config: KernelConfig) -> Result<Self> {
        let pool = if config.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| KernelError::Pool(e.to_string()))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> KernelConfig {
        self.config
    }

    /// Maps `0..n` through `f` and concatenates the results in order.
    pub(crate) fn map_concat<F>(&self, n: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
    {
        let parts: Vec<Vec<f64>> = match &self.pool {
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect::<Result<_>>())?,
            None => (0..n).map(&f).collect::<Result<_>>()?,
        };
        Ok(parts.concat())
    }
}

/// Which edge tensors ApplyEdge needs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Need {
    pub src: bool,
    pub dest: bool,
    pub data: bool,
    pub scattered: Vec<Placeholder>,
}

impl Need {
    pub fn of(expr: &ExprGraph) -> Self {
        let mut need = Need::default();
        for (p, _) in expr.inputs() {
            match p {
                Placeholder::EdgeSrc => need.src = true,
                Placeholder::EdgeDest => need.dest = true,
                Placeholder::EdgeData => need.data = true,
                Placeholder::ScatteredSrc(_) | Placeholder::ScatteredDest(_) => {
                    need.scattered.push(p.clone())
                }
                _ => {}
            }
        }
        need
    }
}

/// Per-vertex tensors of one interval: features and pre-computed outputs.
#[derive(Clone, Copy, Debug)]
pub struct VertexSide<'a> {
    pub features: &'a Tensor,
    pub pre: &'a [Tensor],
}

/// Edge-aligned tensors of one chunk, rows in CSC order.
#[derive(Clone, Debug, Default)]
pub struct EdgeTensors {
    pub tensors: BTreeMap<Placeholder, Tensor>,
}

impl EdgeTensors {
    pub fn bindings(&self, params: &BTreeMap<String, Tensor>) -> Bindings {
        let mut b = Bindings::new().with_params(params);
        for (p, t) in &self.tensors {
            b.insert(p.clone(), t.clone());
        }
        b
    }

    pub fn size_bytes(&self) -> u64 {
        self.tensors.values().map(Tensor::size_bytes).sum()
    }
}

/// Edge data of a chunk as an `[E, 1]` tensor in CSC order.
pub fn edge_data(ec: &EdgeChunk, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::with_dtype(vec![ec.num_edges(), 1], ec.data().to_vec(), dtype)?)
}

/// Copies vertex rows onto the edges of `ec`: source rows by CSC source
/// index, destination rows replicated once per in-edge.
pub fn scatter_chunk(src: VertexSide, dest: VertexSide, ec: &EdgeChunk, need: &Need) -> Result<EdgeTensors> {
    let mut out = EdgeTensors::default();
    let src_idx = ec.csc_src();
    let dest_idx = if need.dest || need.scattered.iter().any(|p| matches!(p, Placeholder::ScatteredDest(_))) {
        ec.csc_dest()
    } else {
        Vec::new()
    };
    if need.src {
        out.tensors
            .insert(Placeholder::EdgeSrc, src.features.gather_rows(src_idx));
    }
    if need.dest {
        out.tensors
            .insert(Placeholder::EdgeDest, dest.features.gather_rows(&dest_idx));
    }
    if need.data {
        out.tensors
            .insert(Placeholder::EdgeData, edge_data(ec, src.features.dtype())?);
    }
    for p in &need.scattered {
        let t = match p {
            Placeholder::ScatteredSrc(k) => src.pre.get(*k).map(|t| t.gather_rows(src_idx)),
            Placeholder::ScatteredDest(k) => dest.pre.get(*k).map(|t| t.gather_rows(&dest_idx)),
            _ => None,
        }
        .ok_or_else(|| KernelError::MissingArtifact(format!("pre-computed {p}")))?;
        out.tensors.insert(p.clone(), t);
    }
    Ok(out)
}

/// Evaluates ApplyEdge on all edges of a chunk at once.
pub fn apply_edge_chunk(
    expr: &ExprGraph,
    edges: &EdgeTensors,
    params: &BTreeMap<String, Tensor>,
) -> Result<Tensor> {
    Ok(evaluate_expr(expr, &edges.bindings(params), None)?)
}

/// Like [`apply_edge_chunk`] but records the evaluation for backward.
pub fn apply_edge_chunk_recorded(
    expr: &ExprGraph,
    edges: &EdgeTensors,
    params: &BTreeMap<String, Tensor>,
) -> Result<(Tensor, Tape, TapeEval)> {
    let mut tape = Tape::new();
    let eval = TapeEval::record(expr, &edges.bindings(params), &mut tape)?;
    let out = tape.value(eval.output)?.clone();
    Ok((out, tape, eval))
}

/// Running Gather state of one destination interval.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumState {
    pub accumulator: Accumulator,
    pub rows: usize,
    pub edge_width: usize,
    pub dtype: DType,
    /// `rows x accumulator.width(edge_width)` values.
    pub values: Vec<f64>,
    /// Max: winning edge id per element. Concat: edge id per slot.
    pub owner: Vec<usize>,
    /// In-edges folded so far per vertex.
    pub count: Vec<usize>,
}

pub const NO_EDGE: usize = usize::MAX;

impl AccumState {
    /// Accumulator identity: zeros for sum and concat, negative infinity for
    /// max (replaced by zero at [`AccumState::finish`] for isolated vertices).
    pub fn new(accumulator: Accumulator, rows: usize, edge_width: usize, dtype: DType) -> Self {
        let width = accumulator.width(edge_width);
        let (init, owners) = match accumulator {
            Accumulator::Sum => (0.0, 0),
            Accumulator::Max => (f64::NEG_INFINITY, rows * width),
            Accumulator::Concat { slots } => (0.0, rows * slots),
        };
        Self {
            accumulator,
            rows,
            edge_width,
            dtype,
            values: vec![init; rows * width],
            owner: vec![NO_EDGE; owners],
            count: vec![0; rows],
        }
    }

    pub fn width(&self) -> usize {
        self.accumulator.width(self.edge_width)
    }

    fn owner_width(&self) -> usize {
        match self.accumulator {
            Accumulator::Sum => 0,
            Accumulator::Max => self.width(),
            Accumulator::Concat { slots } => slots,
        }
    }

    pub fn size_bytes(&self) -> u64 {
        ((self.values.len() + self.owner.len() + self.count.len()) * 8) as u64
    }

    /// Final accumulator tensor plus what backward needs to route gradients.
    pub fn finish(&self) -> Result<(Tensor, GatherAux)> {
        let w = self.width();
        let mut values = self.values.clone();
        let isolated: Vec<bool> = self.count.iter().map(|&c| c == 0).collect();
        if self.accumulator == Accumulator::Max {
            for (u, &iso) in isolated.iter().enumerate() {
                if iso {
                    values[u * w..(u + 1) * w].fill(0.0);
                }
            }
        }
        let t = Tensor::with_dtype(vec![self.rows, w], values, self.dtype)?;
        let aux = GatherAux {
            accumulator: self.accumulator,
            edge_width: self.edge_width,
            owner: self.owner.clone(),
            isolated,
        };
        Ok((t, aux))
    }

    /// Splits state into per-vertex mutable views for parallel folds.
    fn rows_mut(&mut self) -> Vec<RowState<'_>> {
        let w = self.width();
        let ow = self.owner_width();
        let mut owners: Vec<&mut [usize]> = if ow == 0 {
            (0..self.rows).map(|_| &mut [][..]).collect()
        } else {
            self.owner.chunks_mut(ow).collect()
        };
        owners.reverse();
        self.values
            .chunks_mut(w.max(1))
            .zip(self.count.iter_mut())
            .map(|(values, count)| RowState {
                values,
                owner: owners.pop().unwrap_or(&mut []),
                count,
            })
            .collect()
    }
}

struct RowState<'a> {
    values: &'a mut [f64],
    owner: &'a mut [usize],
    count: &'a mut usize,
}

/// Gather bookkeeping kept for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct GatherAux {
    pub accumulator: Accumulator,
    pub edge_width: usize,
    pub owner: Vec<usize>,
    /// Vertices that received no edge; for max their row was zero-filled.
    pub isolated: Vec<bool>,
}

impl GatherAux {
    pub fn size_bytes(&self) -> u64 {
        ((self.owner.len() + self.isolated.len()) * 8) as u64
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn fold_row(
    acc: Accumulator,
    dtype: DType,
    w: usize,
    reg: &mut [f64],
    owner: &mut [usize],
    count: &mut usize,
    id: usize,
    row: &[f64],
    vertex: usize,
) -> Result<()> {
    match acc {
        Accumulator::Sum => {
            for (r, &x) in reg.iter_mut().zip(row) {
                *r = dtype.round(*r + x);
            }
        }
        Accumulator::Max => {
            for k in 0..w {
                if row[k] > reg[k] {
                    reg[k] = row[k];
                    owner[k] = id;
                }
            }
        }
        Accumulator::Concat { slots } => {
            if *count >= slots {
                return Err(KernelError::ConcatOverflow { vertex, slots });
            }
            reg[*count * w..(*count + 1) * w].copy_from_slice(row);
            owner[*count] = id;
        }
    }
    *count += 1;
    Ok(())
}

impl Kernels {
    /// Folds the ApplyEdge output of chunk `ec` into `state`.
    pub fn gather_chunk(&self, acc: &Tensor, ec: &EdgeChunk, state: &mut AccumState) -> Result<()> {
        let w = state.edge_width;
        if acc.rows() != ec.num_edges() || (ec.num_edges() > 0 && acc.row_width() != w) {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                lhs: vec![ec.num_edges(), w],
                rhs: acc.shape().to_vec(),
            }
            .into());
        }
        let (kind, dtype) = (state.accumulator, state.dtype);
        let base = ec.dest_range.start;
        let subgroup = self.config.subgroup_edges.filter(|&s| s > 0);
        let data = acc.data();
        let rows = state.rows_mut();
        let work = |(u, r): (usize, RowState)| -> Result<()> {
            let col = ec.column(u);
            match subgroup {
                // Consecutive subgroups are folded from zero, then combined
                // in order into the register.
                Some(s) if kind == Accumulator::Sum && col.len() > s => {
                    let positions: Vec<usize> = col.collect();
                    for part in positions.chunks(s) {
                        let mut partial = vec![0.0; w];
                        for &p in part {
                            for (x, &y) in partial.iter_mut().zip(&data[p * w..(p + 1) * w]) {
                                *x = dtype.round(*x + y);
                            }
                        }
                        for (x, y) in r.values.iter_mut().zip(partial) {
                            *x = dtype.round(*x + y);
                        }
                    }
                    *r.count += positions.len();
                    Ok(())
                }
                _ => {
                    for p in col {
                        let row = &data[p * w..(p + 1) * w];
                        fold_row(kind, dtype, w, r.values, r.owner, r.count, ec.edge_id(p), row, base + u)?;
                    }
                    Ok(())
                }
            }
        };
        match &self.pool {
            Some(pool) => pool.install(|| rows.into_par_iter().enumerate().try_for_each(work)),
            None => rows.into_iter().enumerate().try_for_each(work),
        }
    }

    /// Gradient of each edge row from the accumulator gradient: copied for
    /// sum, routed to the winning edge for max, sliced out for concat.
    pub fn backward_gather(&self, grad_accum: &Tensor, ec: &EdgeChunk, aux: &GatherAux) -> Result<Tensor> {
        let w = aux.edge_width;
        let aw = aux.accumulator.width(w);
        let g = grad_accum.data();
        let data = self.map_concat(ec.dest_range.len(), |u| {
            let col = ec.column(u);
            let gu = &g[u * aw..(u + 1) * aw];
            let mut out = Vec::with_capacity(col.len() * w);
            for p in col {
                let id = ec.edge_id(p);
                match aux.accumulator {
                    Accumulator::Sum => out.extend_from_slice(gu),
                    Accumulator::Max => {
                        let own = &aux.owner[u * aw..(u + 1) * aw];
                        out.extend((0..w).map(|k| if own[k] == id { gu[k] } else { 0.0 }));
                    }
                    Accumulator::Concat { slots } => {
                        let own = &aux.owner[u * slots..(u + 1) * slots];
                        let s = own.iter().position(|&o| o == id).ok_or_else(|| {
                            KernelError::MissingArtifact(format!("concat slot of edge {id}"))
                        })?;
                        out.extend_from_slice(&gu[s * w..(s + 1) * w]);
                    }
                }
            }
            Ok(out)
        })?;
        Ok(Tensor::with_dtype(vec![ec.num_edges(), w], data, grad_accum.dtype())?)
    }

    /// Sums per-edge gradients into per-vertex gradients: source-side inputs
    /// through the CSR layout, destination-side inputs through CSC.
    pub fn backward_scatter(&self, grads: &EdgeTensors, ec: &EdgeChunk) -> Result<ScatterGrads> {
        let mut out = ScatterGrads::default();
        for (p, g) in &grads.tensors {
            let w = g.row_width();
            let d = g.data();
            let (side_src, n) = match p {
                Placeholder::EdgeSrc | Placeholder::ScatteredSrc(_) => (true, ec.src_range.len()),
                Placeholder::EdgeDest | Placeholder::ScatteredDest(_) => (false, ec.dest_range.len()),
                _ => continue,
            };
            let data = self.map_concat(n, |v| {
                let mut row = vec![0.0; w];
                let positions: Vec<usize> = if side_src {
                    ec.row(v).map(|k| ec.csr_pos(k)).collect()
                } else {
                    ec.column(v).collect()
                };
                for pos in positions {
                    for (x, &y) in row.iter_mut().zip(&d[pos * w..(pos + 1) * w]) {
                        *x = g.dtype().round(*x + y);
                    }
                }
                Ok(row)
            })?;
            out.vertex
                .insert(p.clone(), Tensor::with_dtype(vec![n, w], data, g.dtype())?);
        }
        Ok(out)
    }

    /// Fused Scatter/ApplyEdge/Gather; see [`fused_gather_chunk`].
    pub fn fused_gather(
        &self,
        kernel: &FusedKernel,
        src: VertexSide,
        dest: VertexSide,
        ec: &EdgeChunk,
        params: &BTreeMap<String, Tensor>,
        state: &mut AccumState,
    ) -> Result<()> {
        fused_gather_chunk(self, kernel, src, dest, ec, params, state)
    }
}

/// Per-vertex gradient contributions of one chunk, keyed by the edge input
/// they came from.
#[derive(Clone, Debug, Default)]
pub struct ScatterGrads {
    pub vertex: BTreeMap<Placeholder, Tensor>,
}

/// Backpropagates a recorded ApplyEdge evaluation. Returns gradients of the
/// edge inputs (CSC rows) and of the parameters.
pub fn backward_apply_edge(
    tape: &Tape,
    eval: &TapeEval,
    grad_out: &Tensor,
) -> Result<(EdgeTensors, BTreeMap<String, Tensor>)> {
    let grads = tape.backward_from(eval.output, grad_out)?;
    let mut edge = EdgeTensors::default();
    let mut params = BTreeMap::new();
    for (p, &id) in &eval.inputs {
        match p {
            Placeholder::Param(name) => {
                params.insert(name.clone(), grads.get(id));
            }
            Placeholder::EdgeData => {}
            _ => {
                edge.tensors.insert(p.clone(), grads.get(id));
            }
        }
    }
    Ok((edge, params))
}
