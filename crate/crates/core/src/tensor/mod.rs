//! Dense tensors and the reverse-mode tape used by every stage program.
//!
//! Storage is always `f64`; a tensor tagged [`DType::F32`] rounds every
//! produced element through `f32`, which gives single-precision results
//! without making the rest of the engine generic over the element type.

pub(crate) mod ops;
mod tape;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{
    elementwise, matmul, matmul_row_count, reduce, reset_matmul_row_count, select_rows,
    ElementwiseOp, ReduceOp,
};
pub use tape::{Gradients, Tape, TensorId};

/// Element type of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    /// Bytes per element, used by the memory cost model.
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::F32 => x as f32 as f64,
            DType::F64 => x,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("buffer of length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("dtype mismatch: {0:?} vs {1:?}")]
    DTypeMismatch(DType, DType),
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("max over an empty axis has no identity")]
    EmptyReduction,
    #[error("selector value {value} is not an index into {options} options")]
    InvalidSelector { value: f64, options: usize },
    #[error("tensor id {0} is not on this tape")]
    UnknownId(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Immutable dense row-major tensor. Cloning is cheap (shared buffer).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
    dtype: DType,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::with_dtype(shape, data, DType::F64)
    }

    /// Builds a tensor, rounding the buffer to `dtype` and rejecting NaN/Inf.
    pub fn with_dtype(shape: Vec<usize>, mut data: Vec<f64>, dtype: DType) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        if dtype == DType::F32 {
            data.iter_mut().for_each(|x| *x = dtype.round(*x));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: "construct" });
        }
        Ok(Self {
            shape,
            data: data.into(),
            dtype,
        })
    }

    /// Internal constructor for kernel outputs that were already rounded.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, dtype: DType) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: data.into(),
            dtype,
        }
    }

    /// Like [`Tensor::from_parts`] but fails when a kernel produced NaN/Inf.
    pub(crate) fn checked(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        dtype: DType,
    ) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(Self::from_parts(shape, data, dtype))
    }

    pub fn zeros(shape: Vec<usize>, dtype: DType) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n], dtype)
    }

    pub fn filled(shape: Vec<usize>, value: f64, dtype: DType) -> Result<Self> {
        let n = shape.iter().product();
        Self::with_dtype(shape, vec![value; n], dtype)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.to_vec())
    }

    /// Rank-2 tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![width],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), width], data)
    }

    pub fn identity(n: usize, dtype: DType) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data, dtype)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading extent (number of rows for matrices).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all but the leading extent.
    pub fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn size_bytes(&self) -> u64 {
        (self.len() * self.dtype.size_of()) as u64
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Same buffer under a different shape of equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::DataLength {
                shape,
                len: self.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
            dtype: self.dtype,
        })
    }

    /// Picks rows by index into a new `[indices.len(), ...]` tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let w = self.row_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &r in indices {
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(indices.len());
        } else {
            shape[0] = indices.len();
        }
        Self::from_parts(shape, data, self.dtype)
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Self> {
        let first = parts.first().ok_or(TensorError::DataLength {
            shape: vec![],
            len: 0,
        })?;
        let tail = first.shape[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            if p.dtype != first.dtype {
                return Err(TensorError::DTypeMismatch(first.dtype, p.dtype));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Ok(Self::from_parts(shape, data, first.dtype))
    }

    /// Copy of rows `begin..end`.
    pub fn slice_rows(&self, begin: usize, end: usize) -> Self {
        let w = self.row_width();
        let mut shape = self.shape.clone();
        shape[0] = end - begin;
        Self::from_parts(shape, self.data[begin * w..end * w].to_vec(), self.dtype)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}<{:?}>", self.shape, self.dtype)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        write!(f, "{head:?}")?;
        if self.data.len() > SHOWN {
            write!(f, "..")?;
        }
        Ok(())
    }
}
