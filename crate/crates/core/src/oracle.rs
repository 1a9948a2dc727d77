//! Dense, unchunked reference implementation used as ground truth.
//!
//! Everything here runs one edge or one vertex at a time on the whole graph,
//! sharing tensor arithmetic with the engine but none of its partitioning,
//! scheduling or kernel code.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontend::{evaluate_expr, Accumulator, Bindings, FrontendError, LayerProgram, Placeholder, Side};
use crate::graph::Graph;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("vertex {vertex} has more in-edges than the {slots} concat slots")]
    ConcatOverflow { vertex: usize, slots: usize },
    #[error("finite-difference step must be positive")]
    Step,
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

fn row(t: &Tensor, r: usize) -> Tensor {
    t.slice_rows(r, r + 1)
}

/// One layer over the whole graph with a direct per-edge loop.
///
/// In-edges of each vertex are combined in (source id, edge id) order
/// starting from the accumulator identity. A max over no edges yields zeros.
pub fn dense_forward(
    p: &LayerProgram,
    g: &Graph,
    params: &BTreeMap<String, Tensor>,
) -> Result<Tensor> {
    let n = g.num_vertices();
    let h = g.features();
    let base = Bindings::new().with_params(params);

    let mut pre: Vec<Vec<Tensor>> = Vec::with_capacity(p.precompute.len());
    for pc in &p.precompute {
        let mut rows = Vec::with_capacity(n);
        for v in 0..n {
            let b = base.clone().with(Placeholder::Vertex, row(h, v));
            rows.push(evaluate_expr(&pc.expr, &b, None)?);
        }
        pre.push(rows);
    }

    let mut incoming: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(s, d)) in g.edges().iter().enumerate() {
        incoming[d].push((s, e));
    }
    let edge_w = p.edge_width();
    let acc_w = p.accum_width();
    let mut accum = vec![0.0; n * acc_w];
    for (u, list) in incoming.iter_mut().enumerate() {
        list.sort();
        let out = &mut accum[u * acc_w..(u + 1) * acc_w];
        if p.accumulator == Accumulator::Max && !list.is_empty() {
            out.fill(f64::NEG_INFINITY);
        }
        for (slot, &(s, e)) in list.iter().enumerate() {
            let mut b = base
                .clone()
                .with(Placeholder::EdgeSrc, row(h, s))
                .with(Placeholder::EdgeDest, row(h, u))
                .with(
                    Placeholder::EdgeData,
                    Tensor::new(vec![1, 1], vec![g.edge_value(e)])?,
                );
            for (k, pc) in p.precompute.iter().enumerate() {
                match pc.side {
                    Side::Src => b.insert(Placeholder::ScatteredSrc(k), pre[k][s].clone()),
                    Side::Dest => b.insert(Placeholder::ScatteredDest(k), pre[k][u].clone()),
                }
            }
            let acc = evaluate_expr(&p.apply_edge, &b, None)?;
            let acc = acc.data();
            match p.accumulator {
                Accumulator::Sum => {
                    for (o, &x) in out.iter_mut().zip(acc) {
                        *o += x;
                    }
                }
                Accumulator::Max => {
                    for (o, &x) in out.iter_mut().zip(acc) {
                        if x > *o {
                            *o = x;
                        }
                    }
                }
                Accumulator::Concat { slots } => {
                    if slot >= slots {
                        return Err(OracleError::ConcatOverflow { vertex: u, slots });
                    }
                    out[slot * edge_w..(slot + 1) * edge_w].copy_from_slice(acc);
                }
            }
        }
    }
    let accum = Tensor::new(vec![n, acc_w], accum)?;

    let mut out = Vec::new();
    let mut width = p.output_width();
    for v in 0..n {
        let b = base
            .clone()
            .with(Placeholder::Vertex, row(h, v))
            .with(Placeholder::Accum, row(&accum, v));
        let r = evaluate_expr(&p.apply_vertex, &b, None)?;
        width = r.row_width();
        out.extend_from_slice(r.data());
    }
    Ok(Tensor::new(vec![n, width], out)?)
}

/// Runs layers in sequence, feeding each output in as the next features.
pub fn dense_forward_model(layers: &[LayerProgram], g: &Graph) -> Result<Tensor> {
    let mut current = g.clone();
    for p in layers {
        let out = dense_forward(p, &current, &p.params)?;
        current = current
            .with_features(out)
            .expect("layer output has one row per vertex");
    }
    Ok(current.features().clone())
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every element of
/// every parameter tensor.
pub fn finite_diff_grad<F>(mut f: F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(OracleError::Step);
    }
    let mut current: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let base = params[t].to_vec();
        let mut g = vec![0.0; base.len()];
        for k in 0..base.len() {
            let mut probe = base.clone();
            probe[k] = base[k] + step;
            current[t] = Tensor::new(params[t].shape().to_vec(), probe.clone())?;
            let up = f(&current)?;
            probe[k] = base[k] - step;
            current[t] = Tensor::new(params[t].shape().to_vec(), probe)?;
            let down = f(&current)?;
            g[k] = (up - down) / (2.0 * step);
        }
        current[t] = params[t].clone();
        grads.push(Tensor::new(params[t].shape().to_vec(), g)?);
    }
    Ok(grads)
}

/// Textbook triple loop, accumulating over the inner index in ascending
/// order.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a.data()[i * k + l] * b.data()[l * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out).expect("finite product")
}

/// `Aᵀ · H` with a dense adjacency matrix `A[src][dest]` counting parallel
/// edges.
pub fn dense_adjacency_aggregate(g: &Graph, h: &Tensor) -> Tensor {
    let n = g.num_vertices();
    let mut adj = vec![0.0; n * n];
    for &(s, d) in g.edges() {
        adj[s * n + d] += 1.0;
    }
    let mut at = vec![0.0; n * n];
    for s in 0..n {
        for d in 0..n {
            at[d * n + s] = adj[s * n + d];
        }
    }
    naive_matmul(&Tensor::new(vec![n, n], at).expect("finite"), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::LayerSpec;
    use crate::tensor::{ElementwiseOp, DType};

    fn passthrough(width: usize) -> LayerProgram {
        LayerProgram::new(
            "pass",
            LayerSpec {
                input_width: width,
                edge_data_width: 1,
                accumulator: Accumulator::Sum,
                params: BTreeMap::new(),
            },
            &|c| c.src(),
            &|c| c.accum(),
        )
        .unwrap()
    }

    #[test]
    fn single_edge_passthrough() {
        let f = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Graph::new(2, vec![(0, 1)], None, f).unwrap();
        let p = passthrough(2);
        let out = dense_forward(&p, &g, &p.params).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn empty_graph_gives_identity_accumulator() {
        let f = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let g = Graph::new(3, vec![], None, f).unwrap();
        let p = passthrough(1);
        assert_eq!(dense_forward(&p, &g, &p.params).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn finite_differences_of_closed_forms() {
        let x = Tensor::scalar(3.0).unwrap();
        let g = finite_diff_grad(|p| Ok(p[0].data()[0].powi(2)), &[x], 1e-6).unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-6);
        let z = Tensor::scalar(0.0).unwrap();
        let g = finite_diff_grad(
            |p| {
                let s = crate::tensor::elementwise(ElementwiseOp::Sigmoid, &p[0], None)?;
                Ok(s.data()[0])
            },
            &[z],
            1e-6,
        )
        .unwrap();
        assert!((g[0].data()[0] - 0.25).abs() < 1e-9);
        assert!(finite_diff_grad(|_| Ok(0.0), &[], 0.0).is_err());
    }

    #[test]
    fn adjacency_aggregate_counts_parallel_edges() {
        let h = Tensor::new(vec![2, 1], vec![1.0, 10.0]).unwrap();
        let g = Graph::new(2, vec![(0, 1), (0, 1), (1, 1)], None, Tensor::zeros(vec![2, 1], DType::F64)).unwrap();
        assert_eq!(dense_adjacency_aggregate(&g, &h).data(), &[0.0, 12.0]);
    }
}
