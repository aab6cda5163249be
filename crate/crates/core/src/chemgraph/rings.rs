//! Cycle membership via bridge detection.
//!
//! A bond lies on a cycle iff it is not a bridge, so ring atoms and ring
//! systems fall out of a single lowlink pass.

use super::MolGraph;

/// `true` for every bond that lies on at least one cycle.
pub fn ring_bonds(mol: &MolGraph) -> Vec<bool> {
    let n = mol.atoms.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in mol.bonds.iter().enumerate() {
        adj[b.a].push((b.b, k));
        adj[b.b].push((b.a, k));
    }
    let mut order = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; mol.bonds.len()];
    let mut counter = 0;
    for root in 0..n {
        if order[root] != usize::MAX {
            continue;
        }
        // (vertex, bond used to reach it, next adjacency slot)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        order[root] = counter;
        low[root] = counter;
        counter += 1;
        while let Some(top) = stack.last_mut() {
            let (v, via, slot) = *top;
            if slot < adj[v].len() {
                top.2 += 1;
                let (w, k) = adj[v][slot];
                if k == via {
                    continue;
                }
                if order[w] == usize::MAX {
                    order[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push((w, k, 0));
                } else {
                    low[v] = low[v].min(order[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > order[parent] {
                        is_bridge[via] = true;
                    }
                }
            }
        }
    }
    is_bridge.into_iter().map(|b| !b).collect()
}

/// Connected components of the ring-bond subgraph. Each entry lists the atoms
/// of one ring system in ascending order.
pub fn ring_systems(mol: &MolGraph) -> Vec<Vec<usize>> {
    let ring = ring_bonds(mol);
    let n = mol.atoms.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut member = vec![false; n];
    for (b, &r) in mol.bonds.iter().zip(&ring) {
        if r {
            member[b.a] = true;
            member[b.b] = true;
            let (x, y) = (find(&mut parent, b.a), find(&mut parent, b.b));
            if x != y {
                parent[x.max(y)] = x.min(y);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        if member[i] {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}
