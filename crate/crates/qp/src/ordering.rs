//! Fill-reducing symmetric ordering.
//!
//! A plain minimum-degree ordering on the explicit elimination graph. Ties
//! break toward the smallest original index, so orderings are reproducible.

use std::collections::BTreeSet;

/// Returns `perm` with `perm[new] = old` for the symmetric pattern given as
/// off-diagonal `(row, col)` pairs (either triangle, duplicates allowed).
pub fn minimum_degree(n: usize, pattern: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j) in pattern {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut mark = vec![usize::MAX; n];
    let mut perm = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
        }
        // Each neighbour loses v and gains the rest of the clique.
        for &u in &nbrs {
            let list = &mut adj[u];
            list.retain(|&w| w != v);
            for &w in list.iter() {
                mark[w] = u;
            }
            mark[u] = u;
            for &w in &nbrs {
                if mark[w] != u {
                    mark[w] = u;
                    list.push(w);
                }
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
    }
    perm
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrow_matrix_puts_hub_last() {
        // Node 0 connects to everything; eliminating it first would fill the matrix.
        let n = 6;
        let pattern: Vec<(usize, usize)> = (1..n).map(|j| (0, j)).collect();
        let perm = minimum_degree(n, pattern);
        let hub = perm.iter().position(|&v| v == 0).unwrap();
        assert!(hub >= n - 2);
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let inv = invert(&perm);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(inv[old], new);
        }
    }
}
