use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MoleculeDataset;
use crate::chemgraph::{murcko_scaffold, scaffold_key, ScaffoldKey};
use crate::tensorcore::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Largest scaffold groups first; ties by ascending key.
    Scaffold,
    /// Scaffold groups in seeded random order.
    RandomScaffold,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scaffold" => Ok(SplitMode::Scaffold),
            "random_scaffold" => Ok(SplitMode::RandomScaffold),
            other => Err(format!("unknown split mode {other:?} (scaffold | random_scaffold)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub mode: SplitMode,
    pub seed: u64,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios(SplitRatios),
    #[error("cannot split an empty dataset")]
    EmptyDataset,
}

/// Scaffold key of every molecule's Murcko scaffold.
pub fn scaffold_keys(ds: &MoleculeDataset) -> Vec<ScaffoldKey> {
    ds.molecules.iter().map(|m| scaffold_key(&murcko_scaffold(m))).collect()
}

/// Assigns whole scaffold groups to train until it holds at least
/// `ratios.train` of the molecules, then to valid until train + valid reach
/// `ratios.train + ratios.valid`; the rest go to test. Indices within each
/// partition are ascending.
pub fn scaffold_split(
    ds: &MoleculeDataset,
    ratios: SplitRatios,
    mode: SplitMode,
    seed: u64,
) -> Result<SplitIndices, SplitError> {
    let r = [ratios.train, ratios.valid, ratios.test];
    if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SplitError::Ratios(ratios));
    }
    if ds.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    Ok(split_by_keys(&scaffold_keys(ds), ratios, mode, seed))
}

pub(crate) fn split_by_keys(keys: &[ScaffoldKey], ratios: SplitRatios, mode: SplitMode, seed: u64) -> SplitIndices {
    let mut groups: BTreeMap<ScaffoldKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(*k).or_default().push(i);
    }
    let mut ordered: Vec<(ScaffoldKey, Vec<usize>)> = groups.into_iter().collect();
    match mode {
        // stable sort keeps ascending key order among equal sizes
        SplitMode::Scaffold => ordered.sort_by(|a, b| b.1.len().cmp(&a.1.len())),
        SplitMode::RandomScaffold => ordered.shuffle(&mut seeded(seed)),
    }
    let n = keys.len() as f64;
    let train_cut = ratios.train * n;
    let valid_cut = (ratios.train + ratios.valid) * n;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (_, members) in ordered {
        if (train.len() as f64) < train_cut {
            train.extend(members);
        } else if ((train.len() + valid.len()) as f64) < valid_cut {
            valid.extend(members);
        } else {
            test.extend(members);
        }
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    SplitIndices {
        mode,
        seed,
        train,
        valid,
        test,
    }
}
