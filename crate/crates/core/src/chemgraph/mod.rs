//! Molecular graphs: SMILES reading, atom featurization, Murcko scaffolds,
//! 2D depiction and the edge-list text used in prompts.

pub mod depict;
pub mod elements;
pub mod features;
pub mod rings;
pub mod scaffold;
mod smiles;
mod writer;

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub use depict::{depict, DepictOptions, RasterError, VectorImage};
pub use features::{featurize, FeatureMatrix, FEATURE_BLOCKS, FEATURE_WIDTH};
pub use scaffold::{murcko_scaffold, scaffold_key, ScaffoldKey};
pub use smiles::{parse_smiles, SmilesError};
pub use writer::write_smiles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn label(self) -> &'static str {
        match self {
            BondOrder::Single => "SINGLE",
            BondOrder::Double => "DOUBLE",
            BondOrder::Triple => "TRIPLE",
            BondOrder::Aromatic => "AROMATIC",
        }
    }

    /// Contribution to an atom's bond-order sum. Aromatic bonds count as one;
    /// the extra pi electron is accounted for per aromatic atom.
    pub(crate) fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chirality {
    #[default]
    None,
    Clockwise,
    CounterClockwise,
    /// Allene, square-planar, bipyramidal and octahedral classes.
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Sp3d,
    Sp3d2,
    Unspecified,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    /// Atomic number; 0 is the `*` wildcard.
    pub element: u8,
    pub chirality: Chirality,
    pub formal_charge: i8,
    /// Hydrogen count written inside a bracket atom. `None` for organic-subset
    /// atoms, whose hydrogens are implicit.
    pub explicit_h: Option<u8>,
    pub isotope: Option<u16>,
    pub aromatic: bool,
    /// Number of incident bonds.
    pub heavy_degree: u8,
    pub implicit_h: u8,
    pub in_ring: bool,
    pub radical_electrons: u8,
}

impl Atom {
    pub fn symbol(&self) -> &'static str {
        elements::symbol(self.element)
    }

    pub(crate) fn new(element: u8) -> Self {
        Atom {
            element,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Clone, Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("bond endpoint {0} out of range for {1} atoms")]
    EndpointOutOfRange(usize, usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("aromatic bond {0}-{1} joins a non-aromatic atom")]
    AromaticMismatch(usize, usize),
}

/// A molecule: atoms, undirected bonds and the SMILES text it came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub smiles: String,
}

impl MolGraph {
    /// Builds a graph from raw atoms and bonds, validating the structural
    /// invariants and filling in degree, ring membership, implicit hydrogens
    /// and radical counts.
    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>, smiles: String) -> Result<Self, GraphError> {
        let n = atoms.len();
        let mut seen = std::collections::HashSet::new();
        let mut normalized = Vec::with_capacity(bonds.len());
        for bond in bonds {
            if bond.a >= n || bond.b >= n {
                return Err(GraphError::EndpointOutOfRange(bond.a.max(bond.b), n));
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfLoop(bond.a));
            }
            let (a, b) = (bond.a.min(bond.b), bond.a.max(bond.b));
            if !seen.insert((a, b)) {
                return Err(GraphError::DuplicateBond(a, b));
            }
            if bond.order == BondOrder::Aromatic && !(atoms[a].aromatic && atoms[b].aromatic) {
                return Err(GraphError::AromaticMismatch(a, b));
            }
            normalized.push(Bond { a, b, order: bond.order });
        }
        let mut mol = MolGraph {
            atoms,
            bonds: normalized,
            smiles,
        };
        mol.perceive();
        Ok(mol)
    }

    pub fn empty() -> Self {
        MolGraph {
            atoms: Vec::new(),
            bonds: Vec::new(),
            smiles: String::new(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bond in &self.bonds {
            adj[bond.a].push((bond.b, bond.order));
            adj[bond.b].push((bond.a, bond.order));
        }
        adj
    }

    /// Hydrogens attached to atom `i`: implicit, bracket-declared, and explicit
    /// hydrogen atoms bonded to it.
    pub fn total_h(&self, i: usize) -> u32 {
        let atom = &self.atoms[i];
        let neighbours = self
            .bonds
            .iter()
            .filter(|b| (b.a == i && self.atoms[b.b].element == 1) || (b.b == i && self.atoms[b.a].element == 1))
            .count() as u32;
        atom.implicit_h as u32 + atom.explicit_h.unwrap_or(0) as u32 + neighbours
    }

    /// Rule-based hybridization from bond multiplicities and coordination.
    pub fn hybridization(&self, i: usize) -> Hybridization {
        let atom = &self.atoms[i];
        if atom.element <= 1 {
            return Hybridization::Unspecified;
        }
        let (mut doubles, mut triples) = (0, 0);
        for b in self.bonds.iter().filter(|b| b.a == i || b.b == i) {
            match b.order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triples += 1,
                _ => {}
            }
        }
        if triples > 0 || doubles >= 2 {
            return Hybridization::Sp;
        }
        if atom.aromatic || doubles == 1 {
            return Hybridization::Sp2;
        }
        match atom.heavy_degree as u32 + self.total_h(i) {
            0 => Hybridization::Unspecified,
            1..=4 => Hybridization::Sp3,
            5 => Hybridization::Sp3d,
            6 => Hybridization::Sp3d2,
            _ => Hybridization::Unspecified,
        }
    }

    /// Induced subgraph on the atoms flagged in `keep`, preserving order.
    pub fn subgraph(&self, keep: &[bool]) -> MolGraph {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        let mut atoms = Vec::new();
        for (i, atom) in self.atoms.iter().enumerate() {
            if keep[i] {
                remap[i] = atoms.len();
                atoms.push(atom.clone());
            }
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| keep[b.a] && keep[b.b])
            .map(|b| Bond {
                a: remap[b.a],
                b: remap[b.b],
                order: b.order,
            })
            .collect();
        let mut mol = MolGraph {
            atoms,
            bonds,
            smiles: String::new(),
        };
        mol.perceive();
        mol.smiles = write_smiles(&mol);
        mol
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut atoms = vec![Atom::default(); self.atoms.len()];
        for (i, atom) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = atom.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| {
                let (a, c) = (perm[b.a], perm[b.b]);
                Bond {
                    a: a.min(c),
                    b: a.max(c),
                    order: b.order,
                }
            })
            .collect();
        MolGraph {
            atoms,
            bonds,
            smiles: self.smiles.clone(),
        }
    }

    fn perceive(&mut self) {
        let n = self.atoms.len();
        let mut degree = vec![0u32; n];
        let mut bond_sum = vec![0u32; n];
        for bond in &self.bonds {
            for end in [bond.a, bond.b] {
                degree[end] += 1;
                bond_sum[end] += bond.order.valence();
            }
        }
        let ring_bond = rings::ring_bonds(self);
        let mut in_ring = vec![false; n];
        for (bond, &ring) in self.bonds.iter().zip(&ring_bond) {
            if ring {
                in_ring[bond.a] = true;
                in_ring[bond.b] = true;
            }
        }
        for (i, atom) in self.atoms.iter_mut().enumerate() {
            atom.heavy_degree = degree[i].min(u8::MAX as u32) as u8;
            atom.in_ring = in_ring[i];
            let used = bond_sum[i] + u32::from(atom.aromatic);
            atom.implicit_h = match atom.explicit_h {
                Some(_) => 0,
                None => implicit_hydrogens(atom.element, atom.aromatic, used),
            };
            atom.radical_electrons = match atom.explicit_h {
                Some(h) => radicals(atom.element, atom.formal_charge, used + h as u32),
                None => 0,
            };
        }
    }
}

fn implicit_hydrogens(element: u8, aromatic: bool, used: u32) -> u8 {
    let Some(valences) = elements::organic_valences(element) else {
        return 0;
    };
    if aromatic {
        // aromatic atoms never jump to a higher valence state
        return valences[0].saturating_sub(used.min(255) as u8);
    }
    valences
        .iter()
        .find(|&&v| v as u32 >= used)
        .map(|&v| (v as u32 - used) as u8)
        .unwrap_or(0)
}

fn radicals(element: u8, charge: i8, used: u32) -> u8 {
    let Some(electrons) = elements::valence_electrons(element) else {
        return 0;
    };
    let effective = electrons - charge as i32;
    if !(0..=8).contains(&effective) {
        return 0;
    }
    let default = if effective <= 4 { effective } else { 8 - effective };
    (default - used as i32).max(0) as u8
}

/// One line per bond in ascending `(a, b)` order:
/// `Atom {a} ({symbol}) - Atom {b} ({symbol}): {ORDER}`.
pub fn edge_text(mol: &MolGraph) -> String {
    let mut bonds: Vec<&Bond> = mol.bonds.iter().collect();
    bonds.sort_by_key(|b| (b.a, b.b));
    let mut out = String::new();
    for (k, bond) in bonds.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = write!(
            out,
            "Atom {} ({}) - Atom {} ({}): {}",
            bond.a,
            mol.atoms[bond.a].symbol(),
            bond.b,
            mol.atoms[bond.b].symbol(),
            bond.order.label()
        );
    }
    out
}
