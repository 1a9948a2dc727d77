use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use super::{Ctx, FrontendError, Placeholder, Result, Stage, Udf, Val};
use crate::tensor::ops::broadcast_kind;
use crate::tensor::{self, ElementwiseOp, Tape, Tensor, TensorId};

/// Static shape of an expression value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ValueKind {
    /// One row of the given width per edge (or per vertex).
    Rows(usize),
    /// A fixed tensor shared by all rows, e.g. a parameter.
    Fixed(Vec<usize>),
}

impl ValueKind {
    pub fn width(&self) -> Option<usize> {
        match self {
            ValueKind::Rows(w) => Some(*w),
            ValueKind::Fixed(_) => None,
        }
    }

    fn accepts(&self, t: &Tensor, rows: Option<usize>) -> bool {
        match self {
            ValueKind::Rows(w) => {
                t.rank() == 2 && t.shape()[1] == *w && rows.is_none_or(|n| n == t.rows())
            }
            ValueKind::Fixed(s) => t.shape() == s.as_slice(),
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Rows(w) => write!(f, "rows[{w}]"),
            ValueKind::Fixed(s) => write!(f, "fixed{s:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeOp {
    Input(Placeholder),
    Constant(Tensor),
    Elementwise(ElementwiseOp),
    Matmul,
    Select,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExprNode {
    pub op: NodeOp,
    pub args: Vec<usize>,
    pub kind: ValueKind,
}

/// Traced dataflow of one stage function. Nodes are in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprGraph {
    stage: Stage,
    nodes: Vec<ExprNode>,
    output: usize,
}

impl ExprGraph {
    /// Assembles a graph from nodes already in topological order.
    pub(crate) fn from_nodes(stage: Stage, nodes: Vec<ExprNode>, output: usize) -> Self {
        debug_assert!(nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.args.iter().all(|&a| a < i)));
        Self {
            stage,
            nodes,
            output,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn nodes(&self) -> &[ExprNode] {
        &self.nodes
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn output_kind(&self) -> &ValueKind {
        &self.nodes[self.output].kind
    }

    /// Width of the output rows (zero if the output is not row-shaped).
    pub fn output_width(&self) -> usize {
        self.output_kind().width().unwrap_or(0)
    }

    /// Placeholders referenced, with their declared kinds.
    pub fn inputs(&self) -> impl Iterator<Item = (&Placeholder, &ValueKind)> {
        self.nodes.iter().filter_map(|n| match &n.op {
            NodeOp::Input(p) => Some((p, &n.kind)),
            _ => None,
        })
    }

    pub fn input_kind(&self, p: &Placeholder) -> Option<&ValueKind> {
        self.inputs().find(|(q, _)| *q == p).map(|(_, k)| k)
    }

    pub fn uses(&self, p: &Placeholder) -> bool {
        self.input_kind(p).is_some()
    }

    /// Number of operation nodes (inputs and constants excluded).
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, NodeOp::Input(_) | NodeOp::Constant(_)))
            .count()
    }

    /// Matmul nodes whose left operand is row-shaped, i.e. applied per row.
    pub fn row_matmul_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.op == NodeOp::Matmul && matches!(n.kind, ValueKind::Rows(_)))
            .count()
    }

    /// Floating-point operations needed to evaluate one row.
    pub fn flops_per_row(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| match (&n.op, &n.kind) {
                (NodeOp::Elementwise(_) | NodeOp::Select, ValueKind::Rows(w)) => *w as u64,
                (NodeOp::Matmul, ValueKind::Rows(w)) => {
                    let k = self.nodes[n.args[0]].kind.width().unwrap_or(0);
                    2 * (k * w) as u64
                }
                _ => 0,
            })
            .sum()
    }

    /// Sum of the widths of all row-shaped values; the per-row size of a
    /// recorded tape.
    pub fn row_values_width(&self) -> usize {
        self.nodes.iter().filter_map(|n| n.kind.width()).sum()
    }
}

impl fmt::Display for ExprGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            let op = match &n.op {
                NodeOp::Input(p) => p.to_string(),
                NodeOp::Constant(t) => format!("const{:?}", t.shape()),
                NodeOp::Elementwise(op) => op.name().to_string(),
                NodeOp::Matmul => "matmul".to_string(),
                NodeOp::Select => "select".to_string(),
            };
            let mark = if i == self.output { " <- out" } else { "" };
            writeln!(f, "%{i} = {op}{:?} : {}{mark}", n.args, n.kind)?;
        }
        Ok(())
    }
}

/// Declared kinds of the placeholders a stage function may read.
#[derive(Clone, Debug, Default)]
pub struct Signature {
    kinds: BTreeMap<Placeholder, ValueKind>,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(mut self, p: Placeholder, width: usize) -> Self {
        self.kinds.insert(p, ValueKind::Rows(width));
        self
    }

    pub fn fixed(mut self, p: Placeholder, shape: &[usize]) -> Self {
        self.kinds.insert(p, ValueKind::Fixed(shape.to_vec()));
        self
    }

    /// Declares every parameter of `params` with its shape.
    pub fn params(mut self, params: &BTreeMap<String, Tensor>) -> Self {
        for (name, t) in params {
            self.kinds.insert(
                Placeholder::Param(name.clone()),
                ValueKind::Fixed(t.shape().to_vec()),
            );
        }
        self
    }

    pub fn get(&self, p: &Placeholder) -> Option<&ValueKind> {
        self.kinds.get(p)
    }
}

fn shape_err(op: &'static str, detail: String) -> FrontendError {
    FrontendError::Shape { op, detail }
}

fn infer_elementwise(op: ElementwiseOp, a: &ValueKind, b: Option<&ValueKind>) -> Result<ValueKind> {
    use ValueKind::*;
    let Some(b) = b else {
        return if op.is_unary() {
            Ok(a.clone())
        } else {
            Err(shape_err(op.name(), "missing right operand".into()))
        };
    };
    if op.is_unary() {
        return Err(shape_err(op.name(), "unary op given two operands".into()));
    }
    let fail = || shape_err(op.name(), format!("{a} vs {b}"));
    match (a, b) {
        (Rows(x), Rows(y)) if x == y => Ok(Rows(*x)),
        (Rows(x), Rows(y)) if *x == 1 || *y == 1 => Ok(Rows(*x.max(y))),
        (Rows(w), Fixed(s)) | (Fixed(s), Rows(w)) if s.as_slice() == [*w] => Ok(Rows(*w)),
        (Fixed(x), Fixed(y)) => {
            let bc = broadcast_kind(x, y).ok_or_else(fail)?;
            Ok(Fixed(bc.out_shape(x, y)))
        }
        _ => Err(fail()),
    }
}

fn infer_matmul(a: &ValueKind, b: &ValueKind) -> Result<ValueKind> {
    use ValueKind::*;
    match (a, b) {
        (Rows(k), Fixed(s)) if s.len() == 2 && s[0] == *k => Ok(Rows(s[1])),
        (Fixed(x), Fixed(y)) if x.len() == 2 && y.len() == 2 && x[1] == y[0] => {
            Ok(Fixed(vec![x[0], y[1]]))
        }
        _ => Err(shape_err("matmul", format!("{a} x {b}"))),
    }
}

fn infer_select(sel: &ValueKind, options: &[&ValueKind]) -> Result<ValueKind> {
    let first = options
        .first()
        .ok_or_else(|| shape_err("select", "no options".into()))?;
    if *sel != ValueKind::Rows(1) {
        return Err(shape_err("select", format!("selector must be rows[1], got {sel}")));
    }
    match first {
        ValueKind::Rows(_) if options.iter().all(|o| o == first) => Ok((*first).clone()),
        _ => Err(shape_err("select", "options must share one row kind".into())),
    }
}

struct Tracer<'s> {
    stage: Stage,
    sig: &'s Signature,
    nodes: Vec<ExprNode>,
    inputs: HashMap<Placeholder, usize>,
}

impl Tracer<'_> {
    fn kind(&self, v: Val) -> Result<&ValueKind> {
        self.nodes
            .get(v.0)
            .map(|n| &n.kind)
            .ok_or(FrontendError::UnknownValue(v.0))
    }

    fn push(&mut self, op: NodeOp, args: Vec<usize>, kind: ValueKind) -> Val {
        self.nodes.push(ExprNode { op, args, kind });
        Val(self.nodes.len() - 1)
    }
}

impl Ctx for Tracer<'_> {
    fn input(&mut self, p: Placeholder) -> Result<Val> {
        if !p.allowed_in(self.stage) {
            return Err(FrontendError::ForeignPlaceholder {
                placeholder: p,
                stage: self.stage,
            });
        }
        if let Some(&idx) = self.inputs.get(&p) {
            return Ok(Val(idx));
        }
        let kind = self
            .sig
            .get(&p)
            .cloned()
            .ok_or_else(|| FrontendError::Undeclared(p.clone()))?;
        let v = self.push(NodeOp::Input(p.clone()), vec![], kind);
        self.inputs.insert(p, v.0);
        Ok(v)
    }

    fn constant(&mut self, t: Tensor) -> Result<Val> {
        let kind = ValueKind::Fixed(t.shape().to_vec());
        Ok(self.push(NodeOp::Constant(t), vec![], kind))
    }

    fn elementwise(&mut self, op: ElementwiseOp, a: Val, b: Option<Val>) -> Result<Val> {
        let ka = self.kind(a)?.clone();
        let kb = b.map(|b| self.kind(b).cloned()).transpose()?;
        let kind = infer_elementwise(op, &ka, kb.as_ref())?;
        let mut args = vec![a.0];
        args.extend(b.map(|b| b.0));
        Ok(self.push(NodeOp::Elementwise(op), args, kind))
    }

    fn matmul(&mut self, a: Val, b: Val) -> Result<Val> {
        let kind = infer_matmul(self.kind(a)?, self.kind(b)?)?;
        Ok(self.push(NodeOp::Matmul, vec![a.0, b.0], kind))
    }

    fn select(&mut self, selector: Val, options: &[Val]) -> Result<Val> {
        let opts = options
            .iter()
            .map(|&o| self.kind(o))
            .collect::<Result<Vec<_>>>()?;
        let kind = infer_select(self.kind(selector)?, &opts)?;
        let mut args = vec![selector.0];
        args.extend(options.iter().map(|o| o.0));
        Ok(self.push(NodeOp::Select, args, kind))
    }
}

/// Traces `udf` for `stage`. Reading a placeholder outside the stage's scope
/// or combining incompatible shapes fails immediately.
pub fn trace_udf(stage: Stage, udf: &Udf, sig: &Signature) -> Result<ExprGraph> {
    let mut tracer = Tracer {
        stage,
        sig,
        nodes: Vec::new(),
        inputs: HashMap::new(),
    };
    let out = udf(&mut tracer)?;
    let kind = tracer.kind(out)?.clone();
    if !matches!(kind, ValueKind::Rows(_)) {
        return Err(FrontendError::OutputNotRows(kind));
    }
    Ok(ExprGraph::from_nodes(stage, tracer.nodes, out.0))
}

/// Concrete tensors for placeholders.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    map: HashMap<Placeholder, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, p: Placeholder, t: Tensor) -> Self {
        self.map.insert(p, t);
        self
    }

    pub fn insert(&mut self, p: Placeholder, t: Tensor) {
        self.map.insert(p, t);
    }

    /// Binds every parameter by name.
    pub fn with_params(mut self, params: &BTreeMap<String, Tensor>) -> Self {
        for (name, t) in params {
            self.map.insert(Placeholder::Param(name.clone()), t.clone());
        }
        self
    }

    pub fn get(&self, p: &Placeholder) -> Option<&Tensor> {
        self.map.get(p)
    }
}

/// Looks up and checks the bindings of every input node. Returns per-node
/// bound tensors (for input nodes) in node order.
fn bind_inputs<'b>(g: &ExprGraph, bindings: &'b Bindings) -> Result<Vec<Option<&'b Tensor>>> {
    let mut rows = None;
    let mut out = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let NodeOp::Input(p) = &node.op else {
            out.push(None);
            continue;
        };
        let t = bindings
            .get(p)
            .ok_or_else(|| FrontendError::MissingBinding(p.clone()))?;
        if !node.kind.accepts(t, rows) {
            return Err(FrontendError::BindingShape {
                placeholder: p.clone(),
                expected: node.kind.to_string(),
                got: t.shape().to_vec(),
            });
        }
        if matches!(node.kind, ValueKind::Rows(_)) {
            rows = Some(t.rows());
        }
        out.push(Some(t));
    }
    Ok(out)
}

/// Evaluates `g` on concrete tensors. When a tape is supplied the evaluation
/// is recorded on it as well.
pub fn evaluate_expr(g: &ExprGraph, bindings: &Bindings, tape: Option<&mut Tape>) -> Result<Tensor> {
    if let Some(tape) = tape {
        let rec = TapeEval::record(g, bindings, tape)?;
        return Ok(tape.value(rec.output)?.clone());
    }
    let bound = bind_inputs(g, bindings)?;
    let mut values: Vec<Tensor> = Vec::with_capacity(g.nodes.len());
    for (node, input) in g.nodes.iter().zip(bound) {
        let arg = |k: usize| &values[node.args[k]];
        let v = match &node.op {
            NodeOp::Input(_) => input.expect("bound input").clone(),
            NodeOp::Constant(t) => t.clone(),
            NodeOp::Elementwise(op) => {
                tensor::elementwise(*op, arg(0), node.args.get(1).map(|&b| &values[b]))?
            }
            NodeOp::Matmul => tensor::matmul(arg(0), arg(1))?,
            NodeOp::Select => {
                let opts: Vec<&Tensor> = node.args[1..].iter().map(|&o| &values[o]).collect();
                tensor::select_rows(arg(0), &opts)?
            }
        };
        values.push(v);
    }
    Ok(values.swap_remove(g.output))
}

/// An expression recorded on a tape: the output id and the leaf id of every
/// placeholder.
#[derive(Clone, Debug)]
pub struct TapeEval {
    pub output: TensorId,
    pub inputs: BTreeMap<Placeholder, TensorId>,
}

impl TapeEval {
    pub fn record(g: &ExprGraph, bindings: &Bindings, tape: &mut Tape) -> Result<Self> {
        let bound = bind_inputs(g, bindings)?;
        let mut ids: Vec<TensorId> = Vec::with_capacity(g.nodes.len());
        let mut inputs = BTreeMap::new();
        for (node, input) in g.nodes.iter().zip(bound) {
            let id = match &node.op {
                NodeOp::Input(p) => {
                    let id = tape.leaf(input.expect("bound input").clone());
                    inputs.insert(p.clone(), id);
                    id
                }
                NodeOp::Constant(t) => tape.leaf(t.clone()),
                NodeOp::Elementwise(op) => {
                    tape.elementwise(*op, ids[node.args[0]], node.args.get(1).map(|&b| ids[b]))?
                }
                NodeOp::Matmul => tape.matmul(ids[node.args[0]], ids[node.args[1]])?,
                NodeOp::Select => {
                    let opts: Vec<TensorId> = node.args[1..].iter().map(|&o| ids[o]).collect();
                    tape.select(ids[node.args[0]], &opts)?
                }
            };
            ids.push(id);
        }
        Ok(Self {
            output: ids[g.output],
            inputs,
        })
    }
}

/// Runs a stage function directly on concrete tensors.
pub struct Eager<'b> {
    stage: Stage,
    bindings: &'b Bindings,
    values: Vec<Tensor>,
}

impl<'b> Eager<'b> {
    pub fn new(stage: Stage, bindings: &'b Bindings) -> Self {
        Self {
            stage,
            bindings,
            values: Vec::new(),
        }
    }

    /// Runs `udf` and returns its result.
    pub fn run(stage: Stage, udf: &Udf, bindings: &'b Bindings) -> Result<Tensor> {
        let mut ctx = Self::new(stage, bindings);
        let out = udf(&mut ctx)?;
        ctx.get(out).cloned()
    }

    fn get(&self, v: Val) -> Result<&Tensor> {
        self.values.get(v.0).ok_or(FrontendError::UnknownValue(v.0))
    }

    fn push(&mut self, t: Tensor) -> Val {
        self.values.push(t);
        Val(self.values.len() - 1)
    }
}

impl Ctx for Eager<'_> {
    fn input(&mut self, p: Placeholder) -> Result<Val> {
        if !p.allowed_in(self.stage) {
            return Err(FrontendError::ForeignPlaceholder {
                placeholder: p,
                stage: self.stage,
            });
        }
        let t = self
            .bindings
            .get(&p)
            .ok_or(FrontendError::MissingBinding(p))?
            .clone();
        Ok(self.push(t))
    }

    fn constant(&mut self, t: Tensor) -> Result<Val> {
        Ok(self.push(t))
    }

    fn elementwise(&mut self, op: ElementwiseOp, a: Val, b: Option<Val>) -> Result<Val> {
        let b = b.map(|b| self.get(b)).transpose()?;
        let t = tensor::elementwise(op, self.get(a)?, b)?;
        Ok(self.push(t))
    }

    fn matmul(&mut self, a: Val, b: Val) -> Result<Val> {
        let t = tensor::matmul(self.get(a)?, self.get(b)?)?;
        Ok(self.push(t))
    }

    fn select(&mut self, selector: Val, options: &[Val]) -> Result<Val> {
        let opts = options
            .iter()
            .map(|&o| self.get(o))
            .collect::<Result<Vec<_>>>()?;
        let t = tensor::select_rows(self.get(selector)?, &opts)?;
        Ok(self.push(t))
    }
}
