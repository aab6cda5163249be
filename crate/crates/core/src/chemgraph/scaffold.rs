//! Bemis–Murcko scaffolds and an isomorphism-invariant scaffold digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use super::MolGraph;

const WL_ROUNDS: usize = 3;

/// Ring systems plus linkers: non-ring atoms of degree ≤ 1 are pruned until
/// nothing changes. Acyclic molecules reduce to the empty graph.
pub fn murcko_scaffold(mol: &MolGraph) -> MolGraph {
    let n = mol.n_atoms();
    let mut keep = vec![true; n];
    let mut degree: Vec<u32> = mol.atoms.iter().map(|a| a.heavy_degree as u32).collect();
    let adj = mol.adjacency();
    let mut queue: Vec<usize> = (0..n)
        .filter(|&i| !mol.atoms[i].in_ring && degree[i] <= 1)
        .collect();
    while let Some(v) = queue.pop() {
        if !keep[v] {
            continue;
        }
        keep[v] = false;
        for &(w, _) in &adj[v] {
            if keep[w] {
                degree[w] -= 1;
                if !mol.atoms[w].in_ring && degree[w] <= 1 {
                    queue.push(w);
                }
            }
        }
    }
    if keep.iter().all(|k| !k) {
        return MolGraph::empty();
    }
    mol.subgraph(&keep)
}

/// SHA-256 digest of a scaffold graph. All-zero bytes mark the empty scaffold.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScaffoldKey(pub [u8; 32]);

impl ScaffoldKey {
    pub const EMPTY: ScaffoldKey = ScaffoldKey([0; 32]);

    pub fn is_empty_scaffold(&self) -> bool {
        *self == Self::EMPTY
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ScaffoldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScaffoldKey({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for ScaffoldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Weisfeiler–Lehman refinement over (element, aromatic, charge) labels and
/// bond orders; chirality and isotopes are ignored. The digest covers the
/// sorted label multisets of every round, so it does not depend on atom order.
pub fn scaffold_key(mol: &MolGraph) -> ScaffoldKey {
    if mol.is_empty() {
        return ScaffoldKey::EMPTY;
    }
    let adj = mol.adjacency();
    let mut labels: Vec<u64> = mol
        .atoms
        .iter()
        .map(|a| {
            let h = mix(0x5ca1_ab1e, a.element as u64);
            let h = mix(h, a.aromatic as u64);
            mix(h, (a.formal_charge as i64 + 128) as u64)
        })
        .collect();
    let mut hasher = Sha256::new();
    hasher.update((mol.n_atoms() as u64).to_le_bytes());
    hasher.update((mol.bonds.len() as u64).to_le_bytes());
    let absorb = |hasher: &mut Sha256, labels: &[u64]| {
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        for l in sorted {
            hasher.update(l.to_le_bytes());
        }
    };
    absorb(&mut hasher, &labels);
    for _ in 0..WL_ROUNDS {
        let next: Vec<u64> = (0..mol.n_atoms())
            .map(|v| {
                let mut nbr: Vec<u64> = adj[v]
                    .iter()
                    .map(|&(w, order)| mix(order.code() as u64, labels[w]))
                    .collect();
                nbr.sort_unstable();
                nbr.into_iter().fold(mix(labels[v], 0xfeed), mix)
            })
            .collect();
        labels = next;
        absorb(&mut hasher, &labels);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    if digest == [0; 32] {
        // vanishingly unlikely; keep the sentinel reserved
        let mut d = digest;
        d[0] = 1;
        return ScaffoldKey(d);
    }
    ScaffoldKey(digest)
}
