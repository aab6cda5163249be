use serde::Serialize;

use super::MoleculeDataset;
use crate::chemgraph::{FEATURE_BLOCKS, FEATURE_WIDTH};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub n_graphs: usize,
    pub n_dropped: usize,
    pub mean_atoms: f64,
    /// Undirected bonds per molecule.
    pub mean_bonds: f64,
    /// Each bond counted in both directions.
    pub mean_directed_edges: f64,
    /// Categorical atom attributes before one-hot expansion.
    pub n_atom_features: usize,
    pub feature_width: usize,
    pub n_tasks: usize,
}

pub fn dataset_stats(ds: &MoleculeDataset) -> DatasetStats {
    let n = ds.len().max(1) as f64;
    let atoms: usize = ds.molecules.iter().map(|m| m.n_atoms()).sum();
    let bonds: usize = ds.molecules.iter().map(|m| m.bonds.len()).sum();
    DatasetStats {
        name: ds.task.name.clone(),
        n_graphs: ds.len(),
        n_dropped: ds.dropped.len(),
        mean_atoms: atoms as f64 / n,
        mean_bonds: bonds as f64 / n,
        mean_directed_edges: 2.0 * bonds as f64 / n,
        n_atom_features: FEATURE_BLOCKS.len(),
        feature_width: FEATURE_WIDTH,
        n_tasks: ds.n_tasks(),
    }
}
