//! Graph storage, file ingestion, balance re-encoding and 2D chunking.

mod load;
mod partition;
mod reencode;
mod synth;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use load::{load_graph, load_labels, write_binary_features, FeatureFormat, LoadOptions};
pub use partition::{partition_2d, EdgeChunk, Partition, VertexChunk};
pub use reencode::{max_chunk_edges, reencode_balance};
pub use synth::{random_graph, write_dataset, SynthSpec};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("edge {index} ({src} -> {dest}) references a vertex outside 0..{vertices}")]
    VertexOutOfRange {
        index: usize,
        src: usize,
        dest: usize,
        vertices: usize,
    },
    #[error("feature matrix has {rows} rows but the graph has {vertices} vertices")]
    FeatureRows { rows: usize, vertices: usize },
    #[error("{what} has {got} entries, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// A directed graph with a dense vertex feature matrix.
///
/// Each edge optionally carries a scalar value (a weight or an integer edge
/// type); edges without one read as `1.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    edge_values: Option<Vec<f64>>,
    features: Tensor,
    labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn new(
        num_vertices: usize,
        edges: Vec<(usize, usize)>,
        edge_values: Option<Vec<f64>>,
        features: Tensor,
    ) -> Result<Self> {
        if features.rank() != 2 || features.rows() != num_vertices {
            return Err(GraphError::FeatureRows {
                rows: features.rows(),
                vertices: num_vertices,
            });
        }
        if let Some((index, &(src, dest))) = edges
            .iter()
            .enumerate()
            .find(|(_, &(s, d))| s >= num_vertices || d >= num_vertices)
        {
            return Err(GraphError::VertexOutOfRange {
                index,
                src,
                dest,
                vertices: num_vertices,
            });
        }
        if let Some(values) = &edge_values {
            if values.len() != edges.len() {
                return Err(GraphError::Length {
                    what: "edge value list",
                    got: values.len(),
                    expected: edges.len(),
                });
            }
        }
        Ok(Self {
            num_vertices,
            edges,
            edge_values,
            features,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_vertices {
            return Err(GraphError::Length {
                what: "label list",
                got: labels.len(),
                expected: self.num_vertices,
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_values(&self) -> Option<&[f64]> {
        self.edge_values.as_deref()
    }

    pub fn edge_value(&self, e: usize) -> f64 {
        self.edge_values.as_ref().map_or(1.0, |v| v[e])
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.features.row_width()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_vertices];
        for &(_, d) in &self.edges {
            deg[d] += 1;
        }
        deg
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_vertices];
        for &(s, _) in &self.edges {
            deg[s] += 1;
        }
        deg
    }

    /// Replaces the vertex features, keeping topology and labels.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        let mut g = Self::new(
            self.num_vertices,
            self.edges.clone(),
            self.edge_values.clone(),
            features,
        )?;
        g.labels = self.labels.clone();
        Ok(g)
    }

    pub fn with_edge_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut g = Self::new(
            self.num_vertices,
            self.edges.clone(),
            Some(values),
            self.features.clone(),
        )?;
        g.labels = self.labels.clone();
        Ok(g)
    }

    /// Symmetric degree normalization `1/sqrt(deg_out(src) * deg_in(dest))`
    /// stored as the edge value.
    pub fn with_degree_normalization(&self) -> Result<Self> {
        let (outd, ind) = (self.out_degrees(), self.in_degrees());
        let values = self
            .edges
            .iter()
            .map(|&(s, d)| 1.0 / ((outd[s] * ind[d]) as f64).sqrt())
            .collect();
        self.with_edge_values(values)
    }

    /// Relabels vertices with `perm[old] = new`. Edge order is preserved.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_vertices;
        let mut inverse = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(GraphError::Length {
                what: "permutation",
                got: perm.len(),
                expected: n,
            });
        }
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return Err(GraphError::Invalid("permutation is not a bijection".into()));
            }
            inverse[new] = old;
        }
        let edges = self
            .edges
            .iter()
            .map(|&(s, d)| (perm[s], perm[d]))
            .collect();
        let features = self.features.gather_rows(&inverse);
        let mut g = Self::new(n, edges, self.edge_values.clone(), features)?;
        g.labels = self
            .labels
            .as_ref()
            .map(|l| inverse.iter().map(|&old| l[old]).collect());
        Ok(g)
    }
}

/// Inverse of a vertex permutation.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}
