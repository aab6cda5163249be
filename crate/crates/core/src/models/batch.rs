use std::sync::Arc;

use crate::chemgraph::{featurize, MolGraph, FEATURE_WIDTH};
use crate::datasets::MoleculeDataset;
use crate::tensorcore::{SparseMatrix, Tensor};

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree of `A + I`.
pub fn normalize_adjacency(mol: &MolGraph) -> SparseMatrix {
    let n = mol.n_atoms();
    let mut degree = vec![1.0f64; n];
    for b in &mol.bonds {
        degree[b.a] += 1.0;
        degree[b.b] += 1.0;
    }
    let mut triplets = Vec::with_capacity(n + 2 * mol.bonds.len());
    for (i, d) in degree.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for b in &mol.bonds {
        let w = 1.0 / (degree[b.a] * degree[b.b]).sqrt();
        triplets.push((b.a, b.b, w));
        triplets.push((b.b, b.a, w));
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Per-molecule features and propagation matrices, computed once per dataset.
#[derive(Clone, Debug)]
pub struct PreparedGraphs {
    pub features: Vec<Tensor>,
    pub adjacency: Vec<SparseMatrix>,
    /// Row-major `n_mols × n_tasks` labels with NaN where masked.
    pub labels: Vec<f64>,
    pub mask: Vec<bool>,
    pub n_tasks: usize,
}

impl PreparedGraphs {
    pub fn from_dataset(ds: &MoleculeDataset) -> PreparedGraphs {
        let mut features = Vec::with_capacity(ds.len());
        let mut adjacency = Vec::with_capacity(ds.len());
        for mol in &ds.molecules {
            let fm = featurize(mol);
            features.push(Tensor {
                shape: [fm.n_rows, FEATURE_WIDTH],
                data: fm.data,
            });
            adjacency.push(normalize_adjacency(mol));
        }
        PreparedGraphs {
            features,
            adjacency,
            labels: ds.labels.clone(),
            mask: ds.mask.clone(),
            n_tasks: ds.n_tasks(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.first().map_or(FEATURE_WIDTH, Tensor::cols)
    }

    pub fn batch(&self, indices: &[usize]) -> GraphBatch {
        let width = self.feature_width();
        let n_atoms: usize = indices.iter().map(|&i| self.features[i].rows()).sum();
        let mut x = Vec::with_capacity(n_atoms * width);
        let mut ids = Vec::with_capacity(n_atoms);
        let mut blocks = Vec::with_capacity(indices.len());
        let t = self.n_tasks;
        let mut labels = Vec::with_capacity(indices.len() * t);
        let mut mask = Vec::with_capacity(indices.len() * t);
        for (g, &i) in indices.iter().enumerate() {
            let f = &self.features[i];
            x.extend_from_slice(&f.data);
            ids.extend(std::iter::repeat_n(g, f.rows()));
            blocks.push(&self.adjacency[i]);
            for k in i * t..(i + 1) * t {
                labels.push(if self.mask[k] { self.labels[k] } else { 0.0 });
                mask.push(self.mask[k]);
            }
        }
        GraphBatch {
            x: Tensor {
                shape: [n_atoms, width],
                data: x,
            },
            graph_ids: Arc::new(ids),
            adjacency: Arc::new(SparseMatrix::block_diagonal(&blocks)),
            n_graphs: indices.len(),
            labels: Arc::new(Tensor {
                shape: [indices.len(), t],
                data: labels,
            }),
            mask: Arc::new(mask),
            indices: indices.to_vec(),
        }
    }
}

/// Several molecules stacked into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    /// Stacked atom features, one row per atom.
    pub x: Tensor,
    /// Owning graph of every atom row; sorted.
    pub graph_ids: Arc<Vec<usize>>,
    /// Block-diagonal normalized adjacency.
    pub adjacency: Arc<SparseMatrix>,
    pub n_graphs: usize,
    /// `n_graphs × n_tasks`; masked entries hold 0.
    pub labels: Arc<Tensor>,
    pub mask: Arc<Vec<bool>>,
    /// Dataset indices of the molecules, in batch order.
    pub indices: Vec<usize>,
}

impl GraphBatch {
    pub fn n_atoms(&self) -> usize {
        self.x.rows()
    }
}
