//! Program rewrites: hoisting per-vertex work out of ApplyEdge and fusing an
//! element-wise Scatter/ApplyEdge/Gather phase into one operator.

use std::collections::HashMap;

use serde::Serialize;

use crate::frontend::{
    ExprGraph, ExprNode, LayerProgram, NodeOp, Placeholder, PreCompute, Side, Stage, ValueKind,
};

/// What a pass did to one program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PassReport {
    pub pass: &'static str,
    pub applied: bool,
    /// Operation nodes relocated (hoist) or folded into the fused kernel.
    pub nodes_moved: usize,
    /// Why fusion did not happen.
    pub blocker: Option<String>,
    /// Matmul nodes evaluated once per edge.
    pub edge_matmuls_before: usize,
    pub edge_matmuls_after: usize,
    /// Matmul nodes evaluated once per vertex in pre-compute expressions.
    pub vertex_matmuls_before: usize,
    pub vertex_matmuls_after: usize,
}

impl PassReport {
    /// Matmul row applications per layer before and after the pass, on a
    /// graph with the given vertex and edge counts. ApplyVertex is excluded;
    /// passes never touch it.
    pub fn matmul_applications(&self, vertices: usize, edges: usize) -> (usize, usize) {
        (
            self.edge_matmuls_before * edges + self.vertex_matmuls_before * vertices,
            self.edge_matmuls_after * edges + self.vertex_matmuls_after * vertices,
        )
    }
}

fn vertex_matmuls(p: &LayerProgram) -> usize {
    p.precompute.iter().map(|pc| pc.expr.row_matmul_count()).sum()
}

#[derive(Clone, Copy, Default)]
struct Deps {
    src: bool,
    dest: bool,
    /// Edge data or an already scattered value: blocks hoisting.
    other: bool,
}

fn dependencies(g: &ExprGraph) -> Vec<Deps> {
    let mut deps: Vec<Deps> = Vec::with_capacity(g.nodes().len());
    for node in g.nodes() {
        let mut d = Deps::default();
        match &node.op {
            NodeOp::Input(Placeholder::EdgeSrc) => d.src = true,
            NodeOp::Input(Placeholder::EdgeDest) => d.dest = true,
            NodeOp::Input(Placeholder::Param(_)) | NodeOp::Constant(_) => {}
            NodeOp::Input(_) => d.other = true,
            _ => {
                for &a in &node.args {
                    d.src |= deps[a].src;
                    d.dest |= deps[a].dest;
                    d.other |= deps[a].other;
                }
            }
        }
        deps.push(d);
    }
    deps
}

fn pure_side(node: &ExprNode, d: Deps) -> Option<Side> {
    if !matches!(node.kind, ValueKind::Rows(_)) || d.other {
        return None;
    }
    match (d.src, d.dest) {
        (true, false) => Some(Side::Src),
        (false, true) => Some(Side::Dest),
        _ => None,
    }
}

/// Copies the subgraph reachable from `root` into a pre-compute expression,
/// reading the vertex in place of the edge endpoint.
fn extract(g: &ExprGraph, root: usize) -> ExprGraph {
    let mut keep = vec![false; g.nodes().len()];
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        if !keep[n] {
            keep[n] = true;
            stack.extend(&g.nodes()[n].args);
        }
    }
    let mut remap = HashMap::new();
    let mut nodes = Vec::new();
    for (i, node) in g.nodes().iter().enumerate().filter(|(i, _)| keep[*i]) {
        let op = match &node.op {
            NodeOp::Input(Placeholder::EdgeSrc | Placeholder::EdgeDest) => {
                NodeOp::Input(Placeholder::Vertex)
            }
            op => op.clone(),
        };
        remap.insert(i, nodes.len());
        nodes.push(ExprNode {
            op,
            args: node.args.iter().map(|a| remap[a]).collect(),
            kind: node.kind.clone(),
        });
    }
    ExprGraph::from_nodes(Stage::PreCompute, nodes, remap[&root])
}

/// Moves every maximal ApplyEdge subexpression that depends only on the
/// source (or only on the destination) plus parameters into a per-vertex
/// pre-compute expression. ApplyEdge then reads the scattered result.
///
/// Dependence is syntactic; an expression mixing edge data with an endpoint
/// stays on the edge even if it could be factored.
pub fn hoist_vertex_computation(p: &LayerProgram) -> (LayerProgram, PassReport) {
    let g = &p.apply_edge;
    let deps = dependencies(g);
    let side: Vec<Option<Side>> = g
        .nodes()
        .iter()
        .zip(&deps)
        .map(|(n, &d)| pure_side(n, d))
        .collect();
    let mut maximal = vec![false; g.nodes().len()];
    for (i, node) in g.nodes().iter().enumerate() {
        if side[i].is_none() {
            for &a in &node.args {
                maximal[a] = true;
            }
        }
    }
    maximal[g.output()] = true;
    let roots: Vec<usize> = (0..g.nodes().len())
        .filter(|&i| maximal[i] && side[i].is_some() && !matches!(g.nodes()[i].op, NodeOp::Input(_)))
        .collect();

    let mut out = p.clone();
    let edge_before = g.row_matmul_count();
    let vertex_before = vertex_matmuls(p);
    if roots.is_empty() {
        let report = PassReport {
            pass: "hoist",
            applied: false,
            nodes_moved: 0,
            blocker: None,
            edge_matmuls_before: edge_before,
            edge_matmuls_after: edge_before,
            vertex_matmuls_before: vertex_before,
            vertex_matmuls_after: vertex_before,
        };
        return (out, report);
    }

    let mut replaced = HashMap::new();
    for &r in &roots {
        let k = out.precompute.len();
        let s = side[r].expect("root has a side");
        out.precompute.push(PreCompute {
            side: s,
            expr: extract(g, r),
        });
        let ph = match s {
            Side::Src => Placeholder::ScatteredSrc(k),
            Side::Dest => Placeholder::ScatteredDest(k),
        };
        replaced.insert(r, ph);
    }

    // Keep what the output still reaches once hoisted roots become inputs.
    let mut live = vec![false; g.nodes().len()];
    let mut stack = vec![g.output()];
    while let Some(n) = stack.pop() {
        if !live[n] {
            live[n] = true;
            if !replaced.contains_key(&n) {
                stack.extend(&g.nodes()[n].args);
            }
        }
    }
    let mut remap = HashMap::new();
    let mut nodes = Vec::new();
    for (i, node) in g.nodes().iter().enumerate().filter(|(i, _)| live[*i]) {
        remap.insert(i, nodes.len());
        nodes.push(match replaced.get(&i) {
            Some(ph) => ExprNode {
                op: NodeOp::Input(ph.clone()),
                args: vec![],
                kind: node.kind.clone(),
            },
            None => ExprNode {
                op: node.op.clone(),
                args: node.args.iter().map(|a| remap[a]).collect(),
                kind: node.kind.clone(),
            },
        });
    }
    out.apply_edge = ExprGraph::from_nodes(Stage::ApplyEdge, nodes, remap[&g.output()]);
    out.fused = None;
    let moved = g.op_count() - out.apply_edge.op_count();
    let report = PassReport {
        pass: "hoist",
        applied: true,
        nodes_moved: moved,
        blocker: None,
        edge_matmuls_before: edge_before,
        edge_matmuls_after: out.apply_edge.row_matmul_count(),
        vertex_matmuls_before: vertex_before,
        vertex_matmuls_after: vertex_matmuls(&out),
    };
    (out, report)
}

/// Descriptor of a fused Scatter/ApplyEdge/Gather operator: the ApplyEdge
/// graph, evaluated one edge at a time straight into the accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedKernel {
    expr: ExprGraph,
}

impl FusedKernel {
    /// Accepts graphs made only of element-wise operations and row
    /// selection. On failure returns a description of the blocking node.
    pub fn compile(expr: &ExprGraph) -> Result<Self, String> {
        for (i, node) in expr.nodes().iter().enumerate() {
            if node.op == NodeOp::Matmul {
                return Err(format!("matmul (node %{i})"));
            }
        }
        Ok(Self { expr: expr.clone() })
    }

    pub fn expr(&self) -> &ExprGraph {
        &self.expr
    }
}

/// Marks the program fused when its ApplyEdge is element-wise only.
pub fn fuse_sag(p: &LayerProgram) -> (LayerProgram, PassReport) {
    let edge = p.apply_edge.row_matmul_count();
    let vertex = vertex_matmuls(p);
    let mut report = PassReport {
        pass: "fuse_sag",
        applied: false,
        nodes_moved: 0,
        blocker: None,
        edge_matmuls_before: edge,
        edge_matmuls_after: edge,
        vertex_matmuls_before: vertex,
        vertex_matmuls_after: vertex,
    };
    let mut out = p.clone();
    match FusedKernel::compile(&p.apply_edge) {
        Ok(kernel) => {
            report.applied = true;
            report.nodes_moved = p.apply_edge.op_count();
            out.fused = Some(kernel);
        }
        Err(blocker) => report.blocker = Some(blocker),
    }
    (out, report)
}

/// Hoisting followed by fusion.
pub fn optimize(p: &LayerProgram) -> (LayerProgram, Vec<PassReport>) {
    let (hoisted, r1) = hoist_vertex_computation(p);
    let (fused, r2) = fuse_sag(&hoisted);
    (fused, vec![r1, r2])
}
