use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{trace_udf, ExprGraph, FrontendError, Placeholder, Result, Signature, Stage, Udf, ValueKind};
use crate::passes::FusedKernel;
use crate::tensor::Tensor;

/// Gather accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulator {
    Sum,
    Max,
    /// Edge rows placed side by side in `slots` fixed positions per vertex,
    /// ordered by (source interval, in-chunk CSC position); unused slots are
    /// zero. More in-edges than slots is a runtime error.
    Concat { slots: usize },
}

impl Accumulator {
    /// Accumulator row width for edge rows of width `edge_width`.
    pub fn width(self, edge_width: usize) -> usize {
        match self {
            Accumulator::Concat { slots } => edge_width * slots,
            _ => edge_width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    Src,
    Dest,
}

/// A per-vertex expression hoisted out of ApplyEdge. Its output is computed
/// once per vertex chunk and scattered to edges like vertex features.
#[derive(Clone, Debug, PartialEq)]
pub struct PreCompute {
    pub side: Side,
    pub expr: ExprGraph,
}

/// Interface of a layer: what it reads and how it gathers.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub input_width: usize,
    pub edge_data_width: usize,
    pub accumulator: Accumulator,
    pub params: BTreeMap<String, Tensor>,
}

/// One graph layer: ApplyEdge and ApplyVertex graphs, the Gather accumulator
/// and the named parameters both graphs read.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerProgram {
    pub name: String,
    pub input_width: usize,
    pub edge_data_width: usize,
    pub apply_edge: ExprGraph,
    pub apply_vertex: ExprGraph,
    pub accumulator: Accumulator,
    pub params: BTreeMap<String, Tensor>,
    pub precompute: Vec<PreCompute>,
    pub fused: Option<FusedKernel>,
}

impl LayerProgram {
    /// Traces both stage functions against `spec`. The accumulator width fed
    /// to ApplyVertex follows from the traced ApplyEdge output.
    pub fn new(name: &str, spec: LayerSpec, apply_edge: &Udf, apply_vertex: &Udf) -> Result<Self> {
        let edge_sig = Signature::new()
            .rows(Placeholder::EdgeSrc, spec.input_width)
            .rows(Placeholder::EdgeDest, spec.input_width)
            .rows(Placeholder::EdgeData, spec.edge_data_width)
            .params(&spec.params);
        let apply_edge = trace_udf(Stage::ApplyEdge, apply_edge, &edge_sig)?;
        let accum_width = spec.accumulator.width(apply_edge.output_width());
        let vertex_sig = Signature::new()
            .rows(Placeholder::Vertex, spec.input_width)
            .rows(Placeholder::Accum, accum_width)
            .params(&spec.params);
        let apply_vertex = trace_udf(Stage::ApplyVertex, apply_vertex, &vertex_sig)?;
        Ok(Self::from_parts(name, spec, apply_edge, apply_vertex))
    }

    /// Assembles a program from already traced graphs without checking it.
    pub fn from_parts(
        name: &str,
        spec: LayerSpec,
        apply_edge: ExprGraph,
        apply_vertex: ExprGraph,
    ) -> Self {
        Self {
            name: name.to_string(),
            input_width: spec.input_width,
            edge_data_width: spec.edge_data_width,
            apply_edge,
            apply_vertex,
            accumulator: spec.accumulator,
            params: spec.params,
            precompute: Vec::new(),
            fused: None,
        }
    }

    pub fn edge_width(&self) -> usize {
        self.apply_edge.output_width()
    }

    pub fn accum_width(&self) -> usize {
        self.accumulator.width(self.edge_width())
    }

    pub fn output_width(&self) -> usize {
        self.apply_vertex.output_width()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Replaces a parameter value; the shape must stay the same.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| FrontendError::Undeclared(Placeholder::Param(name.to_string())))?;
        if slot.shape() != value.shape() {
            return Err(FrontendError::BindingShape {
                placeholder: Placeholder::Param(name.to_string()),
                expected: format!("{:?}", slot.shape()),
                got: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Width of pre-compute output `k`.
    pub fn precompute_width(&self, k: usize) -> usize {
        self.precompute[k].expr.output_width()
    }

    /// Whether ApplyEdge (or the fused kernel) reads the given side.
    pub fn reads_side(&self, side: Side) -> bool {
        let (raw, scattered): (Placeholder, fn(usize) -> Placeholder) = match side {
            Side::Src => (Placeholder::EdgeSrc, Placeholder::ScatteredSrc),
            Side::Dest => (Placeholder::EdgeDest, Placeholder::ScatteredDest),
        };
        self.apply_edge.uses(&raw)
            || (0..self.precompute.len()).any(|k| self.apply_edge.uses(&scattered(k)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Note,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Note => "note",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Checks the whole shape chain of a program and reports every violated
/// rule. `Ok` carries notes only; `Err` carries all diagnostics.
pub fn validate_program(p: &LayerProgram) -> std::result::Result<Vec<Diagnostic>, Vec<Diagnostic>> {
    let mut out = Vec::new();
    let mut error = |message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            message,
        })
    };

    let graphs: Vec<(&str, Stage, &ExprGraph)> = std::iter::once(("apply_edge", Stage::ApplyEdge, &p.apply_edge))
        .chain(std::iter::once(("apply_vertex", Stage::ApplyVertex, &p.apply_vertex)))
        .chain(p.precompute.iter().map(|pc| ("precompute", Stage::PreCompute, &pc.expr)))
        .collect();

    for (label, stage, g) in &graphs {
        if !matches!(g.output_kind(), ValueKind::Rows(_)) {
            error(format!("{label} output is {}, expected rows", g.output_kind()));
        }
        for (ph, kind) in g.inputs() {
            if !ph.allowed_in(*stage) {
                error(format!("{label} reads {ph}, which is outside its scope"));
                continue;
            }
            let expected = match ph {
                Placeholder::EdgeSrc | Placeholder::EdgeDest | Placeholder::Vertex => {
                    Some(ValueKind::Rows(p.input_width))
                }
                Placeholder::EdgeData => Some(ValueKind::Rows(p.edge_data_width)),
                Placeholder::Accum => Some(ValueKind::Rows(p.accum_width())),
                Placeholder::Param(name) => match p.params.get(name) {
                    Some(t) => Some(ValueKind::Fixed(t.shape().to_vec())),
                    None => {
                        error(format!("{label} reads undefined parameter `{name}`"));
                        None
                    }
                },
                Placeholder::ScatteredSrc(k) | Placeholder::ScatteredDest(k) => {
                    let side = if matches!(ph, Placeholder::ScatteredSrc(_)) {
                        Side::Src
                    } else {
                        Side::Dest
                    };
                    match p.precompute.get(*k) {
                        Some(pc) if pc.side == side => Some(ValueKind::Rows(pc.expr.output_width())),
                        _ => {
                            error(format!("{label} reads {ph} but no matching pre-compute exists"));
                            None
                        }
                    }
                }
            };
            if let Some(expected) = expected {
                if expected != *kind {
                    let what = if *ph == Placeholder::Accum {
                        "gather produces"
                    } else {
                        "layer provides"
                    };
                    error(format!(
                        "{label} expects {ph} as {kind} but the {what} {expected}"
                    ));
                }
            }
        }
    }
    match p.accumulator {
        Accumulator::Concat { slots: 0 } => error("concat accumulator needs at least one slot".into()),
        Accumulator::Concat { .. } => out.push(Diagnostic {
            severity: Severity::Note,
            message: "concat accumulator requires deterministic edge order: \
                      source interval ascending, then in-chunk CSC order"
                .into(),
        }),
        _ => {}
    }
    if out.iter().any(|d| d.severity == Severity::Error) {
        Err(out)
    } else {
        Ok(out)
    }
}
