use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

/// Shape of a random graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub vertices: usize,
    pub edges: usize,
    pub features: usize,
    /// Label every vertex with one of this many classes.
    pub classes: Option<usize>,
    /// Give every edge an integer type below this.
    pub edge_types: Option<usize>,
}

/// Random directed graph without duplicate edges (self-loops allowed),
/// uniform features in `[-1, 1)`. Edge count is capped at `vertices²`.
pub fn random_graph(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Graph> {
    let n = spec.vertices;
    if spec.features == 0 {
        return Err(GraphError::Invalid("feature width must be positive".into()));
    }
    let m = spec.edges.min(n * n);
    let mut picked: Vec<usize> = if m == 0 { Vec::new() } else { sample(rng, n * n, m).into_vec() };
    picked.sort_unstable();
    let edges: Vec<(usize, usize)> = picked.iter().map(|&k| (k / n, k % n)).collect();
    let values = spec.edge_types.map(|t| (0..edges.len()).map(|_| rng.gen_range(0..t.max(1)) as f64).collect());
    let data = (0..n * spec.features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let features = Tensor::new(vec![n, spec.features], data)?;
    let g = Graph::new(n, edges, values, features)?;
    match spec.classes {
        Some(c) if c > 0 => {
            let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
            g.with_labels(labels)
        }
        Some(_) => Err(GraphError::Invalid("class count must be positive".into())),
        None => Ok(g),
    }
}

/// Writes `edges.txt`, `features.csv` and, when labeled, `labels.txt`
/// under `dir` in the formats [`super::load_graph`] reads.
pub fn write_dataset(g: &Graph, dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| GraphError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut edges = String::new();
    for (e, &(s, d)) in g.edges().iter().enumerate() {
        match g.edge_values() {
            Some(v) => writeln!(edges, "{s} {d} {}", v[e]),
            None => writeln!(edges, "{s} {d}"),
        }
        .expect("writing to a string");
    }
    let path = dir.join("edges.txt");
    fs::write(&path, edges).map_err(io(&path))?;
    let mut feats = String::new();
    for r in 0..g.num_vertices() {
        let row: Vec<String> = g.features().row(r).iter().map(|x| format!("{x:?}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let path = dir.join("features.csv");
    fs::write(&path, feats).map_err(io(&path))?;
    if let Some(labels) = g.labels() {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        let path = dir.join("labels.txt");
        fs::write(&path, text).map_err(io(&path))?;
    }
    Ok(())
}
