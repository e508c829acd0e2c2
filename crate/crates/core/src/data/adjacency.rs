use std::collections::BTreeSet;

use super::log::TemporalEdge;
use crate::error::{Error, Result};
use crate::numerics::SparseAdjacency;

/// Distinct `(user, item)` pairs of `edges`, sorted.
pub fn structural_pairs(edges: &[TemporalEdge]) -> Vec<(usize, usize)> {
    edges
        .iter()
        .map(|e| (e.user, e.item))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Number of distinct neighbours of every node.
pub fn distinct_degrees(edges: &[TemporalEdge], n: usize) -> Result<Vec<usize>> {
    let mut deg = vec![0usize; n];
    for (u, i) in structural_pairs(edges) {
        if u >= n || i >= n {
            return Err(Error::Invalid(format!("edge ({u}, {i}) references a node >= {n}")));
        }
        deg[u] += 1;
        deg[i] += 1;
    }
    Ok(deg)
}

/// Symmetric-normalized bipartite adjacency: `1/√(deg_u·deg_i)` on every
/// observed pair in both directions, no self-loops. Repeated interactions of
/// the same pair count once.
pub fn build_adjacency(edges: &[TemporalEdge], n: usize) -> Result<SparseAdjacency> {
    let deg = distinct_degrees(edges, n)?;
    let mut triplets = Vec::new();
    for (u, i) in structural_pairs(edges) {
        if u == i {
            return Err(Error::Invalid(format!("self-loop on node {u}")));
        }
        let w = 1.0 / ((deg[u] * deg[i]) as f64).sqrt();
        triplets.push((u, i, w));
        triplets.push((i, u, w));
    }
    SparseAdjacency::from_triplets(n, &triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(user: usize, item: usize, timestamp: i64) -> TemporalEdge {
        TemporalEdge { user, item, timestamp }
    }

    #[test]
    fn single_edge() {
        let a = build_adjacency(&[e(0, 1, 5)], 2).unwrap();
        assert_eq!(a.to_dense().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn star_with_two_items() {
        let a = build_adjacency(&[e(0, 1, 1), e(0, 2, 2)], 3).unwrap();
        let w = 1.0 / 2f64.sqrt();
        assert_eq!(a.get(0, 1), w);
        assert_eq!(a.get(0, 2), w);
        assert_eq!(a.get(1, 0), w);
        assert_eq!(a.get(1, 2), 0.0);
    }

    #[test]
    fn empty_edges_give_zero_matrix() {
        let a = build_adjacency(&[], 4).unwrap();
        assert_eq!(a.nnz(), 0);
        assert_eq!(a.n(), 4);
    }

    #[test]
    fn duplicates_collapse_before_degrees() {
        let a = build_adjacency(&[e(0, 2, 1), e(0, 2, 9), e(1, 2, 3)], 3).unwrap();
        assert_eq!(a.get(0, 2), 1.0 / 2f64.sqrt());
        assert_eq!(a.nnz(), 4);
    }

    #[test]
    fn out_of_range_node() {
        assert!(build_adjacency(&[e(0, 5, 1)], 3).is_err());
    }
}
