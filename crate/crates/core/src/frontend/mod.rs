//! Layer programs: user functions for the ApplyEdge and ApplyVertex stages,
//! traced into expression graphs over symbolic placeholders.
//!
//! A user function receives a [`Ctx`] and builds its result through it. The
//! same function can be traced ([`trace_udf`]) or run eagerly on concrete
//! tensors ([`Eager`]); the two agree bit for bit.

mod expr;
mod program;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::tensor::{ElementwiseOp, Tensor, TensorError};

pub use expr::{
    evaluate_expr, trace_udf, Bindings, Eager, ExprGraph, ExprNode, NodeOp, Signature, TapeEval,
    ValueKind,
};
pub use program::{
    validate_program, Accumulator, Diagnostic, LayerProgram, LayerSpec, PreCompute, Severity, Side,
};

/// Symbolic input of a stage function.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Placeholder {
    EdgeSrc,
    EdgeDest,
    EdgeData,
    Vertex,
    Accum,
    Param(String),
    /// Output `k` of the pre-compute list, scattered from the source vertex.
    ScatteredSrc(usize),
    /// Output `k` of the pre-compute list, scattered from the destination.
    ScatteredDest(usize),
}

impl Placeholder {
    pub fn allowed_in(&self, stage: Stage) -> bool {
        use Placeholder::*;
        match stage {
            Stage::ApplyEdge => matches!(
                self,
                EdgeSrc | EdgeDest | EdgeData | Param(_) | ScatteredSrc(_) | ScatteredDest(_)
            ),
            Stage::ApplyVertex => matches!(self, Vertex | Accum | Param(_)),
            Stage::PreCompute => matches!(self, Vertex | Param(_)),
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placeholder::EdgeSrc => write!(f, "edge.src"),
            Placeholder::EdgeDest => write!(f, "edge.dest"),
            Placeholder::EdgeData => write!(f, "edge.data"),
            Placeholder::Vertex => write!(f, "vertex"),
            Placeholder::Accum => write!(f, "accum"),
            Placeholder::Param(name) => write!(f, "param({name})"),
            Placeholder::ScatteredSrc(k) => write!(f, "scattered.src[{k}]"),
            Placeholder::ScatteredDest(k) => write!(f, "scattered.dest[{k}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Stage {
    ApplyEdge,
    ApplyVertex,
    /// Per-vertex expressions moved out of ApplyEdge by hoisting.
    PreCompute,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("{placeholder} is not available in {stage:?}")]
    ForeignPlaceholder {
        placeholder: Placeholder,
        stage: Stage,
    },
    #[error("{0} has no declared shape")]
    Undeclared(Placeholder),
    #[error("cannot infer shape of {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("no binding for {0}")]
    MissingBinding(Placeholder),
    #[error("binding for {placeholder} has shape {got:?}, expected {expected}")]
    BindingShape {
        placeholder: Placeholder,
        expected: String,
        got: Vec<usize>,
    },
    #[error("stage output must be one row per edge or vertex, got {0}")]
    OutputNotRows(ValueKind),
    #[error("value handle {0} does not belong to this context")]
    UnknownValue(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = FrontendError> = std::result::Result<T, E>;

/// Opaque handle to a value inside a [`Ctx`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Val(pub(crate) usize);

/// Operations available to stage functions.
pub trait Ctx {
    fn input(&mut self, p: Placeholder) -> Result<Val>;
    fn constant(&mut self, t: Tensor) -> Result<Val>;
    fn elementwise(&mut self, op: ElementwiseOp, a: Val, b: Option<Val>) -> Result<Val>;
    fn matmul(&mut self, a: Val, b: Val) -> Result<Val>;
    /// Row `r` of the result is row `r` of `options[selector[r]]`.
    fn select(&mut self, selector: Val, options: &[Val]) -> Result<Val>;

    fn src(&mut self) -> Result<Val> {
        self.input(Placeholder::EdgeSrc)
    }
    fn dest(&mut self) -> Result<Val> {
        self.input(Placeholder::EdgeDest)
    }
    fn data(&mut self) -> Result<Val> {
        self.input(Placeholder::EdgeData)
    }
    fn vertex(&mut self) -> Result<Val> {
        self.input(Placeholder::Vertex)
    }
    fn accum(&mut self) -> Result<Val> {
        self.input(Placeholder::Accum)
    }
    fn param(&mut self, name: &str) -> Result<Val> {
        self.input(Placeholder::Param(name.to_string()))
    }
    fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Add, a, Some(b))
    }
    fn sub(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Sub, a, Some(b))
    }
    fn mul(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Mul, a, Some(b))
    }
    fn div(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Div, a, Some(b))
    }
    fn max(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Max, a, Some(b))
    }
    fn sigmoid(&mut self, a: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Sigmoid, a, None)
    }
    fn tanh(&mut self, a: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Tanh, a, None)
    }
    fn relu(&mut self, a: Val) -> Result<Val> {
        self.elementwise(ElementwiseOp::Relu, a, None)
    }
}

/// A stage function.
pub type Udf<'a> = dyn Fn(&mut dyn Ctx) -> Result<Val> + 'a;
