use std::cell::Cell;

use serde::{Deserialize, Serialize};

use super::{DType, Result, Tensor, TensorError};

/// Element-wise operators available to stage programs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Sigmoid,
    Tanh,
    Relu,
}

impl ElementwiseOp {
    pub fn is_unary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Sigmoid | ElementwiseOp::Tanh | ElementwiseOp::Relu
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
            ElementwiseOp::Div => "div",
            ElementwiseOp::Max => "max",
            ElementwiseOp::Sigmoid => "sigmoid",
            ElementwiseOp::Tanh => "tanh",
            ElementwiseOp::Relu => "relu",
        }
    }

    /// Scalar kernel shared by tensor ops and the fused row interpreter, so
    /// both paths round identically.
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Div => a / b,
            ElementwiseOp::Max => {
                if b > a {
                    b
                } else {
                    a
                }
            }
            ElementwiseOp::Sigmoid => sigmoid(a),
            ElementwiseOp::Tanh => a.tanh(),
            ElementwiseOp::Relu => {
                if a > 0.0 {
                    a
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    Sum,
    Max,
}

/// How the two operands of a binary op line up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand has the left operand's shape minus the leading axis.
    RhsLeading,
    LhsLeading,
    /// Right operand is `[n, 1]` against a `[n, w]` left operand.
    RhsRowScalar,
    LhsRowScalar,
}

pub(crate) fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        return Some(Broadcast::Same);
    }
    if !a.is_empty() && &a[1..] == b {
        return Some(Broadcast::RhsLeading);
    }
    if !b.is_empty() && &b[1..] == a {
        return Some(Broadcast::LhsLeading);
    }
    if a.len() == 2 && b.len() == 2 && a[0] == b[0] {
        if b[1] == 1 {
            return Some(Broadcast::RhsRowScalar);
        }
        if a[1] == 1 {
            return Some(Broadcast::LhsRowScalar);
        }
    }
    None
}

impl Broadcast {
    /// Output shape given both operand shapes.
    pub(crate) fn out_shape(self, a: &[usize], b: &[usize]) -> Vec<usize> {
        match self {
            Broadcast::Same | Broadcast::RhsLeading | Broadcast::RhsRowScalar => a.to_vec(),
            Broadcast::LhsLeading | Broadcast::LhsRowScalar => b.to_vec(),
        }
    }

    /// Index into the left / right operand for flat output index `k`, given
    /// the output row width `w` and the broadcast operand length `m`.
    #[inline]
    pub(crate) fn lhs_index(self, k: usize, w: usize, m: usize) -> usize {
        match self {
            Broadcast::LhsLeading => k % m,
            Broadcast::LhsRowScalar => k / w,
            _ => k,
        }
    }

    #[inline]
    pub(crate) fn rhs_index(self, k: usize, w: usize, m: usize) -> usize {
        match self {
            Broadcast::RhsLeading => k % m,
            Broadcast::RhsRowScalar => k / w,
            _ => k,
        }
    }
}

fn same_dtype(a: &Tensor, b: &Tensor) -> Result<DType> {
    if a.dtype() != b.dtype() {
        return Err(TensorError::DTypeMismatch(a.dtype(), b.dtype()));
    }
    Ok(a.dtype())
}

/// Applies `op` element-wise. Binary ops accept equal shapes, a right or left
/// operand missing the leading axis, or a `[n, 1]` per-row scalar.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    match (op.is_unary(), b) {
        (true, None) => {
            let dtype = a.dtype();
            let data = a.data().iter().map(|&x| dtype.round(op.apply(x, 0.0))).collect();
            Tensor::checked(op.name(), a.shape().to_vec(), data, dtype)
        }
        (true, Some(b)) => Err(TensorError::ShapeMismatch {
            op: op.name(),
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
        (false, None) => Err(TensorError::ShapeMismatch {
            op: op.name(),
            lhs: a.shape().to_vec(),
            rhs: vec![],
        }),
        (false, Some(b)) => {
            let dtype = same_dtype(a, b)?;
            let bc = broadcast_kind(a.shape(), b.shape()).ok_or_else(|| {
                TensorError::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                }
            })?;
            if op == ElementwiseOp::Div && b.data().iter().any(|&x| x == 0.0) {
                return Err(TensorError::DivisionByZero);
            }
            let shape = bc.out_shape(a.shape(), b.shape());
            let n: usize = shape.iter().product();
            let w = shape.get(1..).map_or(1, |s| s.iter().product::<usize>()).max(1);
            let (ad, bd) = (a.data(), b.data());
            let (am, bm) = (ad.len().max(1), bd.len().max(1));
            let data = (0..n)
                .map(|k| {
                    let x = ad[bc.lhs_index(k, w, am)];
                    let y = bd[bc.rhs_index(k, w, bm)];
                    dtype.round(op.apply(x, y))
                })
                .collect();
            Tensor::checked(op.name(), shape, data, dtype)
        }
    }
}

thread_local! {
    static MATMUL_ROWS: Cell<u64> = const { Cell::new(0) };
}

/// Rows of left operands multiplied on this thread since the last reset.
/// Operator-count tests use it as an independent tally of matmul work.
pub fn matmul_row_count() -> u64 {
    MATMUL_ROWS.with(Cell::get)
}

pub fn reset_matmul_row_count() {
    MATMUL_ROWS.with(|c| c.set(0));
}

/// Standard matrix product of `[m, k]` by `[k, n]`.
///
/// Every output element is accumulated over `k` in ascending order, so a
/// single row evaluated alone is bit-identical to the same row of a batch.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dtype = same_dtype(a, b)?;
    if a.rank() != 2 {
        return Err(TensorError::Rank {
            op: "matmul",
            expected: 2,
            shape: a.shape().to_vec(),
        });
    }
    if b.rank() != 2 {
        return Err(TensorError::Rank {
            op: "matmul",
            expected: 2,
            shape: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    MATMUL_ROWS.with(|c| c.set(c.get() + m as u64));
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            let brow = &bd[kk * n..(kk + 1) * n];
            match dtype {
                DType::F64 => {
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
                DType::F32 => {
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o = dtype.round(*o + dtype.round(aik * bv));
                    }
                }
            }
        }
    }
    Tensor::checked("matmul", vec![m, n], out, dtype)
}

/// Geometry of a reduction: `outer` blocks of `len` slices of `inner` items.
pub(crate) fn reduce_geometry(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Reduction that also reports, for `max`, the winning index along `axis`
/// for every output element (first index wins ties).
pub(crate) fn reduce_with_argmax(
    op: ReduceOp,
    a: &Tensor,
    axis: usize,
) -> Result<(Tensor, Option<Vec<usize>>)> {
    let (outer, len, inner) = reduce_geometry(a.shape(), axis)?;
    let dtype = a.dtype();
    let mut shape = a.shape().to_vec();
    shape.remove(axis);
    let d = a.data();
    match op {
        ReduceOp::Sum => {
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        let slot = &mut out[o * inner + i];
                        *slot = dtype.round(*slot + d[base + i]);
                    }
                }
            }
            Ok((Tensor::checked("reduce_sum", shape, out, dtype)?, None))
        }
        ReduceOp::Max => {
            if len == 0 && outer * inner > 0 {
                return Err(TensorError::EmptyReduction);
            }
            let mut out = vec![0.0; outer * inner];
            let mut arg = vec![0usize; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = d[o * len * inner + i];
                    let mut best_l = 0;
                    for l in 1..len {
                        let v = d[(o * len + l) * inner + i];
                        if v > best {
                            best = v;
                            best_l = l;
                        }
                    }
                    out[o * inner + i] = best;
                    arg[o * inner + i] = best_l;
                }
            }
            Ok((Tensor::from_parts(shape, out, dtype), Some(arg)))
        }
    }
}

/// Reduces `a` along `axis`; the axis is removed from the result shape.
pub fn reduce(op: ReduceOp, a: &Tensor, axis: usize) -> Result<Tensor> {
    reduce_with_argmax(op, a, axis).map(|(t, _)| t)
}

/// Decodes a selector element into an option index.
#[inline]
pub(crate) fn selector_index(value: f64, options: usize) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && (value as usize) < options {
        Ok(value as usize)
    } else {
        Err(TensorError::InvalidSelector { value, options })
    }
}

/// Row-wise choice: row `r` of the result is row `r` of
/// `options[selector[r]]`. The selector is `[n, 1]` holding integral values.
pub fn select_rows(selector: &Tensor, options: &[&Tensor]) -> Result<Tensor> {
    let first = options.first().ok_or(TensorError::InvalidSelector {
        value: 0.0,
        options: 0,
    })?;
    if selector.rank() != 2 || selector.shape()[1] != 1 {
        return Err(TensorError::Rank {
            op: "select",
            expected: 2,
            shape: selector.shape().to_vec(),
        });
    }
    for o in options {
        if o.shape() != first.shape() || o.rank() != 2 || o.rows() != selector.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "select",
                lhs: selector.shape().to_vec(),
                rhs: o.shape().to_vec(),
            });
        }
        same_dtype(first, o)?;
    }
    let w = first.row_width();
    let mut data = Vec::with_capacity(first.len());
    for r in 0..selector.rows() {
        let which = selector_index(selector.data()[r], options.len())?;
        data.extend_from_slice(options[which].row(r));
    }
    Ok(Tensor::from_parts(
        vec![selector.rows(), w],
        data,
        first.dtype(),
    ))
}
