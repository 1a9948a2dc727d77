use super::ops::{self, broadcast_kind, reduce_geometry, selector_index, Broadcast};
use super::{DType, ElementwiseOp, ReduceOp, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Recorded {
    Leaf,
    Elementwise {
        op: ElementwiseOp,
        a: TensorId,
        b: Option<TensorId>,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Reduce {
        op: ReduceOp,
        a: TensorId,
        axis: usize,
        argmax: Option<Vec<usize>>,
    },
    Select {
        selector: TensorId,
        options: Vec<TensorId>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Recorded,
}

/// Wengert list of executed tensor operations. Every value produced through
/// the tape is kept, so backward needs no recomputation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(value, Recorded::Leaf)
    }

    pub fn value(&self, id: TensorId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownId(id.0))
    }

    /// Id of the most recently recorded value.
    pub fn last(&self) -> Option<TensorId> {
        self.nodes.len().checked_sub(1).map(TensorId)
    }

    /// Bytes held by recorded values; the size of a saved tape.
    pub fn size_bytes(&self) -> u64 {
        self.nodes.iter().map(|n| n.value.size_bytes()).sum()
    }

    fn push(&mut self, value: Tensor, op: Recorded) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn elementwise(
        &mut self,
        op: ElementwiseOp,
        a: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId> {
        let av = self.value(a)?;
        let bv = b.map(|b| self.value(b)).transpose()?;
        let out = ops::elementwise(op, av, bv)?;
        Ok(self.push(out, Recorded::Elementwise { op, a, b }))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = ops::matmul(self.value(a)?, self.value(b)?)?;
        Ok(self.push(out, Recorded::Matmul { a, b }))
    }

    pub fn reduce(&mut self, op: ReduceOp, a: TensorId, axis: usize) -> Result<TensorId> {
        let (out, argmax) = ops::reduce_with_argmax(op, self.value(a)?, axis)?;
        Ok(self.push(out, Recorded::Reduce { op, a, axis, argmax }))
    }

    pub fn select(&mut self, selector: TensorId, options: &[TensorId]) -> Result<TensorId> {
        let opts = options
            .iter()
            .map(|&o| self.value(o))
            .collect::<Result<Vec<_>>>()?;
        let out = ops::select_rows(self.value(selector)?, &opts)?;
        Ok(self.push(
            out,
            Recorded::Select {
                selector,
                options: options.to_vec(),
            },
        ))
    }

    /// Backpropagates `seed` from the last recorded value.
    pub fn backward(&self, seed: &Tensor) -> Result<Gradients> {
        let out = self.last().ok_or(TensorError::UnknownId(0))?;
        self.backward_from(out, seed)
    }

    /// Backpropagates `seed` from `output`. Every value on the tape gets a
    /// gradient slot; values the seed cannot reach read as zeros.
    pub fn backward_from(&self, output: TensorId, seed: &Tensor) -> Result<Gradients> {
        let out_val = self.value(output)?;
        if seed.shape() != out_val.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                lhs: out_val.shape().to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        if seed.dtype() != out_val.dtype() {
            return Err(TensorError::DTypeMismatch(out_val.dtype(), seed.dtype()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.to_vec());
        let mut visited = 0;
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let dtype = node.value.dtype();
            match &node.op {
                Recorded::Leaf => {}
                Recorded::Elementwise { op, a, b } => {
                    visited += 1;
                    self.elementwise_backward(*op, *a, *b, &node.value, &g, &mut grads)?;
                }
                Recorded::Matmul { a, b } => {
                    visited += 1;
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g.clone(), dtype);
                    let ga = ops::matmul(&gt, &transpose(bv))?;
                    let gb = ops::matmul(&transpose(av), &gt)?;
                    accumulate(&mut grads[a.0], ga.data(), dtype);
                    accumulate(&mut grads[b.0], gb.data(), dtype);
                }
                Recorded::Reduce { op, a, axis, argmax } => {
                    visited += 1;
                    let shape = self.nodes[a.0].value.shape();
                    let (outer, len, inner) = reduce_geometry(shape, *axis)?;
                    let mut ga = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = g[o * inner + i];
                            match op {
                                ReduceOp::Sum => {
                                    for l in 0..len {
                                        ga[(o * len + l) * inner + i] = gv;
                                    }
                                }
                                ReduceOp::Max => {
                                    let l = argmax.as_ref().expect("max records argmax")
                                        [o * inner + i];
                                    ga[(o * len + l) * inner + i] = gv;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], &ga, dtype);
                }
                Recorded::Select { selector, options } => {
                    visited += 1;
                    let sel = &self.nodes[selector.0].value;
                    let w = node.value.row_width();
                    let rows = node.value.rows();
                    let mut per_option = vec![vec![0.0; rows * w]; options.len()];
                    for r in 0..rows {
                        let which = selector_index(sel.data()[r], options.len())?;
                        per_option[which][r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    for (opt, ga) in options.iter().zip(per_option) {
                        accumulate(&mut grads[opt.0], &ga, dtype);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        let values = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g, n.value.dtype()))
            })
            .collect();
        let shapes = self
            .nodes
            .iter()
            .map(|n| (n.value.shape().to_vec(), n.value.dtype()))
            .collect();
        Ok(Gradients {
            values,
            shapes,
            visited,
        })
    }

    fn elementwise_backward(
        &self,
        op: ElementwiseOp,
        a: TensorId,
        b: Option<TensorId>,
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let dtype = out.dtype();
        let av = &self.nodes[a.0].value;
        let Some(b) = b else {
            let ga: Vec<f64> = match op {
                ElementwiseOp::Sigmoid => g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect(),
                ElementwiseOp::Tanh => g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * (1.0 - y * y))
                    .collect(),
                // Derivative at exactly zero is taken as zero.
                ElementwiseOp::Relu => g
                    .iter()
                    .zip(av.data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
                _ => unreachable!("binary op recorded without rhs"),
            };
            accumulate(&mut grads[a.0], &ga, dtype);
            return Ok(());
        };
        let bv = &self.nodes[b.0].value;
        let bc = broadcast_kind(av.shape(), bv.shape()).expect("recorded shapes broadcast");
        let shape = out.shape();
        let n = out.len();
        let w = shape.get(1..).map_or(1, |s| s.iter().product::<usize>()).max(1);
        let (ad, bd) = (av.data(), bv.data());
        let (am, bm) = (ad.len().max(1), bd.len().max(1));
        let mut ga_full = vec![0.0; n];
        let mut gb_full = vec![0.0; n];
        for k in 0..n {
            let x = ad[bc.lhs_index(k, w, am)];
            let y = bd[bc.rhs_index(k, w, bm)];
            let gk = g[k];
            let (da, db) = match op {
                ElementwiseOp::Add => (gk, gk),
                ElementwiseOp::Sub => (gk, -gk),
                ElementwiseOp::Mul => (gk * y, gk * x),
                ElementwiseOp::Div => (gk / y, -gk * x / (y * y)),
                // Ties route to the left operand, matching the forward pick.
                ElementwiseOp::Max => {
                    if y > x {
                        (0.0, gk)
                    } else {
                        (gk, 0.0)
                    }
                }
                _ => unreachable!("unary op recorded with rhs"),
            };
            ga_full[k] = da;
            gb_full[k] = db;
        }
        let ga = shrink(bc, Side::Lhs, ga_full, av.len(), w);
        let gb = shrink(bc, Side::Rhs, gb_full, bv.len(), w);
        accumulate(&mut grads[a.0], &ga, dtype);
        accumulate(&mut grads[b.0], &gb, dtype);
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Lhs,
    Rhs,
}

/// Sums an output-shaped gradient back down to a broadcast operand's shape.
fn shrink(bc: Broadcast, side: Side, full: Vec<f64>, target_len: usize, w: usize) -> Vec<f64> {
    let leading = matches!(
        (bc, side),
        (Broadcast::LhsLeading, Side::Lhs) | (Broadcast::RhsLeading, Side::Rhs)
    );
    let row_scalar = matches!(
        (bc, side),
        (Broadcast::LhsRowScalar, Side::Lhs) | (Broadcast::RhsRowScalar, Side::Rhs)
    );
    if leading {
        let mut out = vec![0.0; target_len];
        if target_len > 0 {
            for (k, v) in full.into_iter().enumerate() {
                out[k % target_len] += v;
            }
        }
        out
    } else if row_scalar {
        let mut out = vec![0.0; target_len];
        for (k, v) in full.into_iter().enumerate() {
            out[k / w] += v;
        }
        out
    } else {
        full
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64], dtype: DType) {
    match slot {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a = dtype.round(*a + v);
            }
        }
        None => *slot = Some(g.iter().map(|&v| dtype.round(v)).collect()),
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let d = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out, t.dtype())
}

/// Result of a backward pass: one gradient per recorded value.
#[derive(Clone, Debug)]
pub struct Gradients {
    values: Vec<Option<Tensor>>,
    shapes: Vec<(Vec<usize>, DType)>,
    visited: usize,
}

impl Gradients {
    /// Gradient of `id`; zeros when the seed does not reach it.
    pub fn get(&self, id: TensorId) -> Tensor {
        match self.values.get(id.0) {
            Some(Some(t)) => t.clone(),
            _ => {
                let (shape, dtype) = self
                    .shapes
                    .get(id.0)
                    .cloned()
                    .unwrap_or((vec![0], DType::F64));
                Tensor::zeros(shape, dtype)
            }
        }
    }

    pub fn is_reached(&self, id: TensorId) -> bool {
        matches!(self.values.get(id.0), Some(Some(_)))
    }

    /// Number of recorded operations replayed by the backward pass.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        tape.elementwise(ElementwiseOp::Mul, x, Some(x)).unwrap();
        let g = tape.backward(&t(&[1], &[1.0])).unwrap();
        assert_eq!(g.get(x).data(), &[6.0]);
    }

    #[test]
    fn linear_map_gradient_is_input_row() {
        // y = x W with x = [1, 3]; seeding e_i on y gives grad_W column i = x^T.
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = tape.leaf(t(&[3, 2], &[0.5; 6]));
        tape.matmul(x, w).unwrap();
        let g = tape.backward(&t(&[1, 2], &[0.0, 1.0])).unwrap();
        assert_eq!(g.get(w).data(), &[0.0, 1.0, 0.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn seed_shape_checked() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        tape.elementwise(ElementwiseOp::Tanh, x, None).unwrap();
        assert!(tape.backward(&t(&[1], &[1.0])).is_err());
    }

    #[test]
    fn unreached_values_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.elementwise(ElementwiseOp::Relu, x, None).unwrap();
        let g = tape.backward_from(y, &t(&[2], &[1.0, 1.0])).unwrap();
        assert!(!g.is_reached(unused));
        assert_eq!(g.get(unused).data(), &[0.0; 3]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 1.0]));
        tape.elementwise(ElementwiseOp::Relu, x, None).unwrap();
        let g = tape.backward(&t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn broadcast_gradients_are_summed() {
        let mut tape = Tape::new();
        let m = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2], &[1.0, 1.0]));
        let s = tape.leaf(t(&[2, 1], &[2.0, 3.0]));
        let y = tape.elementwise(ElementwiseOp::Add, m, Some(b)).unwrap();
        tape.elementwise(ElementwiseOp::Mul, y, Some(s)).unwrap();
        let g = tape.backward(&t(&[2, 2], &[1.0; 4])).unwrap();
        assert_eq!(g.get(b).data(), &[5.0, 5.0]);
        assert_eq!(g.get(s).data(), &[5.0, 9.0]);
        assert_eq!(g.get(m).data(), &[2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn each_operation_replayed_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.3, -0.2]));
        let w = tape.leaf(t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]));
        let a = tape.matmul(x, w).unwrap();
        let b = tape.elementwise(ElementwiseOp::Sigmoid, a, None).unwrap();
        let c = tape.elementwise(ElementwiseOp::Mul, b, Some(x)).unwrap();
        tape.reduce(ReduceOp::Sum, c, 1).unwrap();
        let g = tape.backward(&t(&[1], &[1.0])).unwrap();
        assert_eq!(g.visited(), 4);
    }

    #[test]
    fn max_reduce_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 5.0, 5.0, 2.0, 0.0, 1.0]));
        tape.reduce(ReduceOp::Max, x, 1).unwrap();
        let g = tape.backward(&t(&[2], &[1.0, 2.0])).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn select_routes_rows() {
        let mut tape = Tape::new();
        let sel = tape.leaf(t(&[2, 1], &[1.0, 0.0]));
        let a = tape.leaf(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2, 1], &[3.0, 4.0]));
        tape.select(sel, &[a, b]).unwrap();
        let g = tape.backward(&t(&[2, 1], &[5.0, 7.0])).unwrap();
        assert_eq!(g.get(a).data(), &[0.0, 7.0]);
        assert_eq!(g.get(b).data(), &[5.0, 0.0]);
        assert_eq!(g.get(sel).data(), &[0.0, 0.0]);
    }
}
