//! Minimum-degree fill-reducing ordering on the undirected graph of a
//! symmetric sparsity pattern. Plain quotient-free elimination with lazy
//! degree updates; ties break toward the lowest vertex index so the
//! ordering is deterministic.

use std::collections::BTreeSet;

/// Returns `perm` such that `perm[k]` is the k-th pivot in elimination
/// order. `adj` is a symmetric adjacency list without self loops.
pub fn min_degree(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut nb: Vec<BTreeSet<usize>> = adj
        .iter()
        .map(|row| row.iter().copied().collect::<BTreeSet<usize>>())
        .collect();
    let mut alive = vec![true; n];
    let mut heap: BTreeSet<(usize, usize)> = (0..n).map(|v| (nb[v].len(), v)).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some(&(deg, v)) = heap.iter().next() {
        heap.remove(&(deg, v));
        if !alive[v] {
            continue;
        }
        if nb[v].len() != deg {
            heap.insert((nb[v].len(), v));
            continue;
        }
        alive[v] = false;
        perm.push(v);
        let neigh: Vec<usize> = nb[v].iter().copied().collect();
        for &u in &neigh {
            nb[u].remove(&v);
        }
        // Eliminating v joins its remaining neighbors into a clique.
        for (a_pos, &a) in neigh.iter().enumerate() {
            for &b in &neigh[a_pos + 1..] {
                nb[a].insert(b);
                nb[b].insert(a);
            }
        }
        for &u in &neigh {
            heap.insert((nb[u].len(), u));
        }
        nb[v].clear();
    }
    debug_assert_eq!(perm.len(), n);
    perm
}

/// Inverse permutation: `inv[perm[k]] = k`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (k, &v) in perm.iter().enumerate() {
        inv[v] = k;
    }
    inv
}
