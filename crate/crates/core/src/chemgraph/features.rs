//! Nine-attribute categorical atom featurization.
//!
//! Each attribute is one-hot encoded into its own block; values outside a
//! block's vocabulary land in the block's trailing "misc" slot.
//!
//! | block | attribute            | categories                               | width |
//! |-------|----------------------|------------------------------------------|-------|
//! | 0     | atomic number        | 1..=118, misc                            | 119   |
//! | 1     | chirality            | none, CW, CCW, other, misc               | 5     |
//! | 2     | degree               | 0..=10, misc                             | 12    |
//! | 3     | formal charge        | -5..=5, misc                             | 12    |
//! | 4     | total hydrogens      | 0..=8, misc                              | 10    |
//! | 5     | radical electrons    | 0..=4, misc                              | 6     |
//! | 6     | hybridization        | SP, SP2, SP3, SP3D, SP3D2, misc          | 6     |
//! | 7     | aromatic             | false, true                              | 2     |
//! | 8     | in ring              | false, true                              | 2     |

use super::{Chirality, Hybridization, MolGraph};

/// `(name, width)` of each one-hot block, in column order.
pub const FEATURE_BLOCKS: [(&str, usize); 9] = [
    ("atomic_number", 119),
    ("chirality", 5),
    ("degree", 12),
    ("formal_charge", 12),
    ("total_h", 10),
    ("radical_electrons", 6),
    ("hybridization", 6),
    ("aromatic", 2),
    ("in_ring", 2),
];

pub const FEATURE_WIDTH: usize = 174;

/// Dense `n_atoms × FEATURE_WIDTH` one-hot matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub data: Vec<f64>,
    /// Active category per block for every row.
    pub categories: Vec<[u16; 9]>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        FEATURE_WIDTH
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * FEATURE_WIDTH..(i + 1) * FEATURE_WIDTH]
    }

    /// Column offset of each block.
    pub fn block_offsets() -> [usize; 9] {
        let mut offsets = [0; 9];
        let mut acc = 0;
        for (k, (_, w)) in FEATURE_BLOCKS.iter().enumerate() {
            offsets[k] = acc;
            acc += w;
        }
        offsets
    }
}

fn bucket(value: i64, lo: i64, hi: i64) -> u16 {
    if (lo..=hi).contains(&value) {
        (value - lo) as u16
    } else {
        (hi - lo + 1) as u16
    }
}

pub fn atom_categories(mol: &MolGraph, i: usize) -> [u16; 9] {
    let atom = &mol.atoms[i];
    let element = if atom.element == 0 { 119 } else { atom.element as i64 };
    let chirality = match atom.chirality {
        Chirality::None => 0,
        Chirality::Clockwise => 1,
        Chirality::CounterClockwise => 2,
        Chirality::Other => 3,
    };
    let hybridization = match mol.hybridization(i) {
        Hybridization::Sp => 0,
        Hybridization::Sp2 => 1,
        Hybridization::Sp3 => 2,
        Hybridization::Sp3d => 3,
        Hybridization::Sp3d2 => 4,
        Hybridization::Unspecified => 5,
    };
    [
        bucket(element, 1, 118),
        chirality,
        bucket(atom.heavy_degree as i64, 0, 10),
        bucket(atom.formal_charge as i64, -5, 5),
        bucket(mol.total_h(i) as i64, 0, 8),
        bucket(atom.radical_electrons as i64, 0, 4),
        hybridization,
        atom.aromatic as u16,
        atom.in_ring as u16,
    ]
}

pub fn featurize(mol: &MolGraph) -> FeatureMatrix {
    let offsets = FeatureMatrix::block_offsets();
    let n = mol.n_atoms();
    let mut data = vec![0.0; n * FEATURE_WIDTH];
    let mut categories = Vec::with_capacity(n);
    for i in 0..n {
        let cats = atom_categories(mol, i);
        for (k, &c) in cats.iter().enumerate() {
            data[i * FEATURE_WIDTH + offsets[k] + c as usize] = 1.0;
        }
        categories.push(cats);
    }
    FeatureMatrix {
        n_rows: n,
        data,
        categories,
    }
}
