use std::ops::Range;
use std::sync::Arc;

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

/// Features of one vertex id interval.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexChunk {
    pub index: usize,
    pub interval: Range<usize>,
    pub features: Tensor,
}

impl VertexChunk {
    pub fn len(&self) -> usize {
        self.interval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interval.is_empty()
    }
}

/// Edges from source interval `src_interval` to destination interval
/// `dest_interval`, stored twice: CSC (grouped by destination, used forward)
/// and CSR (grouped by source, used backward).
///
/// Positions `p` refer to the CSC order, which is (local dest, local src,
/// input edge order). Per-edge data is stored in CSC order.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeChunk {
    pub src_interval: usize,
    pub dest_interval: usize,
    pub src_range: Range<usize>,
    pub dest_range: Range<usize>,
    col_ptr: Vec<usize>,
    csc_src: Vec<usize>,
    csc_edge: Vec<usize>,
    row_ptr: Vec<usize>,
    csr_dest: Vec<usize>,
    csr_pos: Vec<usize>,
    data: Vec<f64>,
}

impl EdgeChunk {
    /// `edges` holds (global src, global dest, edge id, value).
    fn build(
        src_interval: usize,
        dest_interval: usize,
        src_range: Range<usize>,
        dest_range: Range<usize>,
        mut edges: Vec<(usize, usize, usize, f64)>,
    ) -> Self {
        edges.sort_by_key(|&(s, d, id, _)| (d, s, id));
        let (ns, nd) = (src_range.len(), dest_range.len());
        let mut col_ptr = vec![0; nd + 1];
        let mut row_ptr = vec![0; ns + 1];
        for &(s, d, _, _) in &edges {
            col_ptr[d - dest_range.start + 1] += 1;
            row_ptr[s - src_range.start + 1] += 1;
        }
        for k in 0..nd {
            col_ptr[k + 1] += col_ptr[k];
        }
        for k in 0..ns {
            row_ptr[k + 1] += row_ptr[k];
        }
        let csc_src = edges.iter().map(|e| e.0 - src_range.start).collect();
        let csc_edge = edges.iter().map(|e| e.2).collect();
        let data = edges.iter().map(|e| e.3).collect();
        // Stable sort of CSC positions by source keeps (dest, id) order per row.
        let mut csr_pos: Vec<usize> = (0..edges.len()).collect();
        csr_pos.sort_by_key(|&p| edges[p].0);
        let csr_dest = csr_pos
            .iter()
            .map(|&p| edges[p].1 - dest_range.start)
            .collect();
        Self {
            src_interval,
            dest_interval,
            src_range,
            dest_range,
            col_ptr,
            csc_src,
            csc_edge,
            row_ptr,
            csr_dest,
            csr_pos,
            data,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.csc_src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.csc_src.is_empty()
    }

    /// CSC positions of in-edges of local destination `u`.
    pub fn column(&self, u: usize) -> Range<usize> {
        self.col_ptr[u]..self.col_ptr[u + 1]
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    /// Local source id at CSC position `p`.
    pub fn src_at(&self, p: usize) -> usize {
        self.csc_src[p]
    }

    pub fn csc_src(&self) -> &[usize] {
        &self.csc_src
    }

    /// Local destination id of every CSC position.
    pub fn csc_dest(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.dest_range.len() {
            out.extend(std::iter::repeat(u).take(self.column(u).len()));
        }
        out
    }

    /// Input edge id at CSC position `p`.
    pub fn edge_id(&self, p: usize) -> usize {
        self.csc_edge[p]
    }

    pub fn edge_ids(&self) -> &[usize] {
        &self.csc_edge
    }

    /// CSR entries of local source `s`.
    pub fn row(&self, s: usize) -> Range<usize> {
        self.row_ptr[s]..self.row_ptr[s + 1]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    /// Local destination of CSR entry `k`.
    pub fn csr_dest(&self, k: usize) -> usize {
        self.csr_dest[k]
    }

    /// CSC position of CSR entry `k`.
    pub fn csr_pos(&self, k: usize) -> usize {
        self.csr_pos[k]
    }

    /// Edge values in CSC order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// (global src, global dest, edge id) in CSC order.
    pub fn csc_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.dest_range.len() {
            for p in self.column(u) {
                out.push((
                    self.src_range.start + self.csc_src[p],
                    self.dest_range.start + u,
                    self.csc_edge[p],
                ));
            }
        }
        out
    }

    /// (global src, global dest, edge id) in CSR order.
    pub fn csr_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for s in 0..self.src_range.len() {
            for k in self.row(s) {
                out.push((
                    self.src_range.start + s,
                    self.dest_range.start + self.csr_dest[k],
                    self.csc_edge[self.csr_pos[k]],
                ));
            }
        }
        out
    }

    /// Footprint of both layouts plus edge values, with 8-byte indices.
    pub fn size_bytes(&self) -> u64 {
        let words = self.col_ptr.len()
            + self.row_ptr.len()
            + 4 * self.num_edges()
            + self.data.len();
        (words * 8) as u64
    }
}

/// 2D partition: `p` vertex intervals and a `p x p` grid of edge chunks.
#[derive(Clone, Debug)]
pub struct Partition {
    pub interval_size: usize,
    pub num_vertices: usize,
    pub vertex_chunks: Vec<VertexChunk>,
    edge_chunks: Vec<Arc<EdgeChunk>>,
    has_edge_values: bool,
}

impl Partition {
    pub fn p(&self) -> usize {
        self.vertex_chunks.len()
    }

    /// Chunk C_ij holding edges from interval `i` into interval `j`.
    pub fn chunk(&self, i: usize, j: usize) -> &Arc<EdgeChunk> {
        &self.edge_chunks[i * self.p() + j]
    }

    pub fn interval(&self, i: usize) -> Range<usize> {
        self.vertex_chunks[i].interval.clone()
    }

    pub fn interval_of(&self, v: usize) -> usize {
        v / self.interval_size
    }

    pub fn num_edges(&self) -> usize {
        self.edge_chunks.iter().map(|c| c.num_edges()).sum()
    }

    /// Whether the source graph carried explicit edge values.
    pub fn has_edge_values(&self) -> bool {
        self.has_edge_values
    }

    pub fn feature_width(&self) -> usize {
        self.vertex_chunks
            .first()
            .map_or(0, |c| c.features.row_width())
    }

    /// All edges as (src, dest, edge id), chunk by chunk in CSC order.
    pub fn flatten(&self) -> Vec<(usize, usize, usize)> {
        self.edge_chunks.iter().flat_map(|c| c.csc_edges()).collect()
    }

    /// Vertex chunks with the same intervals but new feature rows.
    pub fn vertex_chunks_for(&self, features: &Tensor) -> Vec<VertexChunk> {
        self.vertex_chunks
            .iter()
            .map(|c| VertexChunk {
                index: c.index,
                interval: c.interval.clone(),
                features: features.slice_rows(c.interval.start, c.interval.end),
            })
            .collect()
    }
}

/// Tiles the adjacency matrix into `ceil(V / interval_size)` intervals.
/// Empty chunks are kept in the grid.
pub fn partition_2d(g: &Graph, interval_size: usize) -> Result<Partition> {
    if interval_size == 0 {
        return Err(GraphError::Invalid("interval size must be at least 1".into()));
    }
    let n = g.num_vertices();
    let p = n.div_ceil(interval_size);
    let interval = |i: usize| i * interval_size..((i + 1) * interval_size).min(n);
    let vertex_chunks = (0..p)
        .map(|i| {
            let r = interval(i);
            VertexChunk {
                index: i,
                features: g.features().slice_rows(r.start, r.end),
                interval: r,
            }
        })
        .collect();
    let mut buckets = vec![Vec::new(); p * p];
    for (id, &(s, d)) in g.edges().iter().enumerate() {
        buckets[(s / interval_size) * p + d / interval_size].push((s, d, id, g.edge_value(id)));
    }
    let edge_chunks = buckets
        .into_iter()
        .enumerate()
        .map(|(k, edges)| {
            let (i, j) = (k / p, k % p);
            Arc::new(EdgeChunk::build(i, j, interval(i), interval(j), edges))
        })
        .collect();
    Ok(Partition {
        interval_size,
        num_vertices: n,
        vertex_chunks,
        edge_chunks,
        has_edge_values: g.edge_values().is_some(),
    })
}
