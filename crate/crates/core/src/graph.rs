//! Small directed-graph utilities on dense boolean adjacency matrices,
//! where `adj[i][j]` means an edge `i -> j`.

/// Topological order by Kahn's algorithm, smallest index first among ready
/// nodes. `None` if the graph has a cycle.
pub fn topological_order(adj: &[Vec<bool>]) -> Option<Vec<usize>> {
    let p = adj.len();
    let mut indegree: Vec<usize> = (0..p).map(|j| (0..p).filter(|&i| adj[i][j]).count()).collect();
    let mut ready: std::collections::BTreeSet<usize> = (0..p).filter(|&j| indegree[j] == 0).collect();
    let mut order = Vec::with_capacity(p);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for j in 0..p {
            if adj[i][j] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.insert(j);
                }
            }
        }
    }
    (order.len() == p).then_some(order)
}

/// Cycle detection by iterative depth-first search with three colours.
pub fn is_acyclic(adj: &[Vec<bool>]) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Colour {
        White,
        Grey,
        Black,
    }
    let p = adj.len();
    let mut colour = vec![Colour::White; p];
    for root in 0..p {
        if colour[root] != Colour::White {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        colour[root] = Colour::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < p {
                let child = *next;
                *next += 1;
                if !adj[node][child] {
                    continue;
                }
                match colour[child] {
                    Colour::Grey => return false,
                    Colour::White => {
                        colour[child] = Colour::Grey;
                        stack.push((child, 0));
                    }
                    Colour::Black => {}
                }
            } else {
                colour[node] = Colour::Black;
                stack.pop();
            }
        }
    }
    true
}

pub fn edge_count(adj: &[Vec<bool>]) -> usize {
    adj.iter().map(|row| row.iter().filter(|&&e| e).count()).sum()
}

/// Whether every edge goes from an earlier to a later position of `order`.
pub fn respects_order(adj: &[Vec<bool>], order: &[usize]) -> bool {
    let mut pos = vec![0; adj.len()];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    (0..adj.len()).all(|i| (0..adj.len()).all(|j| !adj[i][j] || pos[i] < pos[j]))
}
