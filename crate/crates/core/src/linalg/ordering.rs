use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency
/// lists. Returns `perm` with `perm[new] = old`. Each connected component is
/// started from a pseudo-peripheral vertex.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, seed, &visited);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut nbrs = Vec::new();
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_by_key(|&u| (degree[u], u));
            nbrs.dedup();
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], start: usize, blocked: &[bool]) -> (usize, usize) {
    // returns (eccentricity, a farthest vertex of minimum degree)
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut far = start;
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        if d > dist[far] || (d == dist[far] && (adj[v].len(), v) < (adj[far].len(), far)) {
            far = v;
        }
        for &u in &adj[v] {
            if !blocked[u] && dist[u] == usize::MAX {
                dist[u] = d + 1;
                queue.push_back(u);
            }
        }
    }
    (dist[far], far)
}

fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize, blocked: &[bool]) -> usize {
    let mut current = seed;
    let (mut ecc, mut far) = bfs_levels(adj, current, blocked);
    for _ in 0..8 {
        let (e, f) = bfs_levels(adj, far, blocked);
        if e <= ecc {
            break;
        }
        current = far;
        ecc = e;
        far = f;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn is_a_permutation_with_disconnected_parts() {
        let adj = vec![vec![1], vec![0, 2], vec![1], vec![4], vec![3], vec![]];
        let mut p = reverse_cuthill_mckee(&adj);
        p.sort();
        assert_eq!(p, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn path_gets_bandwidth_one() {
        // path 0-2-4-1-3 scrambled labels
        let edges = [(0, 2), (2, 4), (4, 1), (1, 3)];
        let mut adj = vec![Vec::new(); 5];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let p = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; 5];
        for (new, &old) in p.iter().enumerate() {
            inv[old] = new;
        }
        for &(a, b) in &edges {
            assert_eq!((inv[a] as isize - inv[b] as isize).abs(), 1);
        }
    }
}
