//! Fused Scatter/ApplyEdge/Gather: evaluates the element-wise ApplyEdge graph
//! one edge at a time and folds the result straight into the destination
//! register, so no edge-sized tensor is ever materialized.

use std::collections::BTreeMap;

use super::{fold_row, AccumState, KernelError, Kernels, Result, RowState, VertexSide};
use crate::frontend::{FrontendError, NodeOp, Placeholder, ValueKind};
use crate::graph::EdgeChunk;
use crate::passes::FusedKernel;
use crate::tensor::ops::selector_index;
use crate::tensor::{self, DType, ElementwiseOp, Tensor, TensorError};

/// A node value for one edge: a row slice, or a tensor shared by all edges.
enum Slot {
    Row { offset: usize, width: usize },
    Fixed(Tensor),
}

struct Plan {
    slots: Vec<Slot>,
    scratch: usize,
}

fn plan(kernel: &FusedKernel, params: &BTreeMap<String, Tensor>) -> Result<Plan> {
    let g = kernel.expr();
    let mut slots: Vec<Slot> = Vec::with_capacity(g.nodes().len());
    let mut scratch = 0;
    for node in g.nodes() {
        let slot = match (&node.kind, &node.op) {
            (ValueKind::Rows(w), _) => {
                let s = Slot::Row {
                    offset: scratch,
                    width: *w,
                };
                scratch += w;
                s
            }
            (ValueKind::Fixed(_), op) => {
                let fixed = |k: usize| match &slots[node.args[k]] {
                    Slot::Fixed(t) => Ok(t),
                    Slot::Row { .. } => Err(KernelError::MissingArtifact("fixed operand".into())),
                };
                Slot::Fixed(match op {
                    NodeOp::Input(Placeholder::Param(name)) => params
                        .get(name)
                        .cloned()
                        .ok_or_else(|| FrontendError::MissingBinding(Placeholder::Param(name.clone())))?,
                    NodeOp::Input(p) => return Err(FrontendError::MissingBinding(p.clone()).into()),
                    NodeOp::Constant(t) => t.clone(),
                    NodeOp::Elementwise(op) => {
                        let b = if node.args.len() > 1 { Some(fixed(1)?) } else { None };
                        tensor::elementwise(*op, fixed(0)?, b)?
                    }
                    NodeOp::Matmul => tensor::matmul(fixed(0)?, fixed(1)?)?,
                    NodeOp::Select => {
                        return Err(KernelError::MissingArtifact("row select on fixed values".into()))
                    }
                })
            }
        };
        slots.push(slot);
    }
    Ok(Plan { slots, scratch })
}

/// Where the inputs of one edge live.
struct EdgeRefs<'a> {
    src: VertexSide<'a>,
    dest: VertexSide<'a>,
    s: usize,
    u: usize,
    data: f64,
}

impl Plan {
    /// Evaluates every row-valued node for one edge into `buf`.
    fn eval(&self, kernel: &FusedKernel, e: &EdgeRefs, dtype: DType, buf: &mut [f64]) -> Result<()> {
        let g = kernel.expr();
        for (i, node) in g.nodes().iter().enumerate() {
            let Slot::Row { offset, width } = self.slots[i] else {
                continue;
            };
            let (before, rest) = buf.split_at_mut(offset);
            let out = &mut rest[..width];
            match &node.op {
                NodeOp::Input(p) => {
                    let row: &[f64] = match p {
                        Placeholder::EdgeSrc => e.src.features.row(e.s),
                        Placeholder::EdgeDest => e.dest.features.row(e.u),
                        Placeholder::EdgeData => std::slice::from_ref(&e.data),
                        Placeholder::ScatteredSrc(k) => pre(e.src, *k, p)?.row(e.s),
                        Placeholder::ScatteredDest(k) => pre(e.dest, *k, p)?.row(e.u),
                        _ => return Err(FrontendError::MissingBinding(p.clone()).into()),
                    };
                    out.copy_from_slice(row);
                }
                NodeOp::Constant(_) | NodeOp::Matmul => {
                    return Err(KernelError::MissingArtifact(format!("row-valued node %{i}")))
                }
                NodeOp::Elementwise(op) => {
                    let a = operand(&self.slots[node.args[0]], before);
                    let b = node.args.get(1).map(|&k| operand(&self.slots[k], before));
                    apply(*op, a, b, dtype, out)?;
                }
                NodeOp::Select => {
                    let Operand::Row(sel) = operand(&self.slots[node.args[0]], before) else {
                        return Err(KernelError::MissingArtifact("selector row".into()));
                    };
                    let which = selector_index(sel[0], node.args.len() - 1)?;
                    let Operand::Row(opt) = operand(&self.slots[node.args[1 + which]], before) else {
                        return Err(KernelError::MissingArtifact("select option row".into()));
                    };
                    out.copy_from_slice(opt);
                }
            }
        }
        Ok(())
    }
}

fn pre<'a>(side: VertexSide<'a>, k: usize, p: &Placeholder) -> Result<&'a Tensor> {
    side.pre
        .get(k)
        .ok_or_else(|| KernelError::MissingArtifact(format!("pre-computed {p}")))
}

enum Operand<'a> {
    Row(&'a [f64]),
    Fixed(&'a [f64]),
}

fn operand<'a>(slot: &'a Slot, buf: &'a [f64]) -> Operand<'a> {
    match slot {
        Slot::Row { offset, width } => Operand::Row(&buf[*offset..offset + width]),
        Slot::Fixed(t) => Operand::Fixed(t.data()),
    }
}

/// One row of a batched element-wise op. Row operands of width 1 broadcast
/// across the other row; fixed operands repeat per row.
fn apply(op: ElementwiseOp, a: Operand, b: Option<Operand>, dtype: DType, out: &mut [f64]) -> Result<()> {
    let w = out.len();
    let pick = |o: &Operand, k: usize| match o {
        Operand::Row(r) if r.len() == 1 => r[0],
        Operand::Row(r) => r[k],
        Operand::Fixed(f) => f[k % f.len().max(1)],
    };
    if let (ElementwiseOp::Div, Some(b)) = (op, &b) {
        let zero = match b {
            Operand::Row(r) | Operand::Fixed(r) => r.iter().any(|&x| x == 0.0),
        };
        if zero {
            return Err(TensorError::DivisionByZero.into());
        }
    }
    for k in 0..w {
        let x = pick(&a, k);
        let y = b.as_ref().map_or(0.0, |b| pick(b, k));
        let v = dtype.round(op.apply(x, y));
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() }.into());
        }
        out[k] = v;
    }
    Ok(())
}

/// Runs the fused operator for chunk `ec`, folding each edge into `state`
/// in CSC order exactly as the unfused Gather would.
pub fn fused_gather_chunk(
    kernels: &Kernels,
    kernel: &FusedKernel,
    src: VertexSide,
    dest: VertexSide,
    ec: &EdgeChunk,
    params: &BTreeMap<String, Tensor>,
    state: &mut AccumState,
) -> Result<()> {
    let plan = plan(kernel, params)?;
    let out = match plan.slots[kernel.expr().output()] {
        Slot::Row { offset, width } => offset..offset + width,
        Slot::Fixed(_) => return Err(FrontendError::OutputNotRows(kernel.expr().output_kind().clone()).into()),
    };
    let (kind, dtype, w) = (state.accumulator, state.dtype, state.edge_width);
    let base = ec.dest_range.start;
    let data = ec.data();
    let rows = state.rows_mut();
    let work = |(u, r): (usize, RowState)| -> Result<()> {
        let mut buf = vec![0.0; plan.scratch];
        for p in ec.column(u) {
            let refs = EdgeRefs {
                src,
                dest,
                s: ec.src_at(p),
                u,
                data: dtype.round(data[p]),
            };
            plan.eval(kernel, &refs, dtype, &mut buf)?;
            fold_row(kind, dtype, w, r.values, r.owner, r.count, ec.edge_id(p), &buf[out.clone()], base + u)?;
        }
        Ok(())
    };
    match &kernels.pool {
        Some(pool) => {
            use rayon::prelude::*;
            pool.install(|| rows.into_par_iter().enumerate().try_for_each(work))
        }
        None => rows.into_iter().enumerate().try_for_each(work),
    }
}
