use super::{Graph, GraphError, Result};

/// Largest edge count over the chunk grid for a given interval size.
pub fn max_chunk_edges(g: &Graph, interval_size: usize) -> usize {
    let p = g.num_vertices().div_ceil(interval_size.max(1));
    let mut counts = vec![0; p * p];
    for &(s, d) in g.edges() {
        counts[(s / interval_size) * p + d / interval_size] += 1;
    }
    counts.into_iter().max().unwrap_or(0)
}

/// Relabels vertices so edges spread more evenly over the chunk grid.
///
/// Vertices are sorted by total degree (descending) and dealt round-robin
/// into the intervals. The result is only used when it lowers the largest
/// chunk; otherwise the identity permutation is returned. The permutation
/// maps old ids to new ids.
pub fn reencode_balance(g: &Graph, num_intervals: usize) -> Result<(Graph, Vec<usize>)> {
    if num_intervals == 0 {
        return Err(GraphError::Invalid("need at least one interval".into()));
    }
    let n = g.num_vertices();
    let identity: Vec<usize> = (0..n).collect();
    if n == 0 {
        return Ok((g.clone(), identity));
    }
    let size = n.div_ceil(num_intervals);
    let p = n.div_ceil(size);
    let (ind, outd) = (g.in_degrees(), g.out_degrees());
    let mut order = identity.clone();
    order.sort_by_key(|&v| (std::cmp::Reverse(ind[v] + outd[v]), v));

    let capacity = |k: usize| ((k + 1) * size).min(n) - k * size;
    let mut filled = vec![0; p];
    let mut perm = vec![0; n];
    let mut k = 0;
    for v in order {
        while filled[k] == capacity(k) {
            k = (k + 1) % p;
        }
        perm[v] = k * size + filled[k];
        filled[k] += 1;
        k = (k + 1) % p;
    }
    let candidate = g.permute(&perm)?;
    if max_chunk_edges(&candidate, size) < max_chunk_edges(g, size) {
        Ok((candidate, perm))
    } else {
        Ok((g.clone(), identity))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::invert_permutation;
    use crate::tensor::Tensor;

    fn graph(n: usize, edges: Vec<(usize, usize)>) -> Graph {
        let f = Tensor::new(vec![n, 1], (0..n).map(|x| x as f64).collect()).unwrap();
        Graph::new(n, edges, None, f).unwrap()
    }

    #[test]
    fn ring_keeps_identity() {
        let edges = (0..8).map(|v| (v, (v + 1) % 8)).collect();
        let g = graph(8, edges);
        let (h, perm) = reencode_balance(&g, 2).unwrap();
        assert!(max_chunk_edges(&h, 4) <= max_chunk_edges(&g, 4));
        assert_eq!(perm, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn star_not_worse_and_bijective() {
        let edges: Vec<_> = (1..8).flat_map(|v| [(0, v), (v, 0)]).collect();
        let g = graph(8, edges);
        let (h, perm) = reencode_balance(&g, 2).unwrap();
        assert!(max_chunk_edges(&h, 4) <= max_chunk_edges(&g, 4));
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert_eq!(h.permute(&invert_permutation(&perm)).unwrap(), g);
    }

    #[test]
    fn skewed_graph_improves() {
        // All edges among vertices 0..4, which the identity puts in one chunk.
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)];
        let g = graph(8, edges);
        let (h, _) = reencode_balance(&g, 2).unwrap();
        assert!(max_chunk_edges(&h, 4) < max_chunk_edges(&g, 4));
    }
}
