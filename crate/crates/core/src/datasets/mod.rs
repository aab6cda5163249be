//! MoleculeNet-style CSV ingestion, task metadata and scaffold splits.

mod split;
mod stats;

pub use split::{scaffold_keys, scaffold_split, SplitError, SplitIndices, SplitMode, SplitRatios};
pub use stats::{dataset_stats, DatasetStats};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chemgraph::{parse_smiles, MolGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "ROCAUC")]
    RocAuc,
    #[serde(rename = "RMSE")]
    Rmse,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::RocAuc)
    }
}

impl TaskKind {
    pub fn metric(self) -> Metric {
        match self {
            TaskKind::Classification => Metric::RocAuc,
            TaskKind::Regression => Metric::Rmse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub smiles_column: String,
    pub label_columns: Vec<String>,
    /// Dataset-specific part of the LLM prompt.
    pub prompt_description: String,
    /// Chat model queried for this dataset unless overridden.
    pub llm_model: String,
    /// File name under the data directory.
    pub file_name: String,
}

pub const GPT4V: &str = "gpt-4-vision-preview";
pub const CLAUDE3_HAIKU: &str = "claude-3-haiku-20240307";

pub const PRESET_NAMES: [&str; 7] = ["bace", "bbbp", "clintox", "hiv", "esol", "freesolv", "lipo"];

const BACE_TEXT: &str = "The BACE dataset provides and binary label binding results for a set of inhibitors of human \u{3b2}-secretase 1 (BACE-1). Based on the following inputs, please analyze the property of the molecule (e.g. Functional groups, Structural characteristics) and analyze the binding results for a set of inhibitors of human beta-secretase (BACE-1)?";
const BBBP_TEXT: &str = "As a membrane separating circulating blood and brain extracellular fluid the blood-brain barrier blocks most drugs, hormones, and neurotransmitters. Based on these inputs, please analyze the property of the molecule (e.g. Functional groups, Structural characteristics) and analyze if the molecule is permeable to the blood-brain barrier?";
const CLINTOX_TEXT: &str = "Could you analyze the given molecule based on the provided inputs and detail the factors influencing its potential for clinical trial toxicity or non-toxicity? Additionally, please assess factors that might impact its FDA approval status.";
const HIV_TEXT: &str = "The HIV dataset tests the ability to inhibit HIV replication for over 40,000 compounds. Based on the following inputs, please analyze the property of the molecule (e.g. Functional groups, Structural characteristics) with focusing on its ability to inhibit HIV replication. Then make your guess or prediction (active or inactive).";
const ESOL_TEXT: &str = "Based on these inputs, please analyze the property of the molecule (e.g. Functional groups, Structural characteristics), and which properties of the molecule can affect its water solubility? Also try to guess its solubility.";
const FREESOLV_TEXT: &str = "Free Solvation Database (FreeSolv) provides experimental and calculated hydration free energy of small molecules in water. Based on the following inputs, please analyze the property of the molecule (e.g. Functional groups, Structural characteristics) with focusing on its hydration free energy. Then make your guess or prediction about its hydration free energy.";
const LIPO_TEXT: &str = "Lipophilicity is an important feature of drug molecules that affects both membrane permeability and solubility. Based on the following inputs, please analyze the molecule and give some details of factors that can affect octanol/water distribution coefficient (logD at pH 7.4). Then make your guess or prediction about its lipophilicity.";

impl TaskSpec {
    /// Built-in task definitions, looked up case-insensitively.
    /// `lipophilicity` is accepted for `lipo`.
    pub fn preset(name: &str) -> Option<TaskSpec> {
        let lower = name.to_ascii_lowercase();
        let (name, kind, label, text, model, file): (&str, TaskKind, &[&str], &str, &str, &str) = match lower.as_str() {
            "bace" => ("bace", TaskKind::Classification, &["Class"], BACE_TEXT, GPT4V, "bace.csv"),
            "bbbp" => ("bbbp", TaskKind::Classification, &["p_np"], BBBP_TEXT, GPT4V, "bbbp.csv"),
            "clintox" => (
                "clintox",
                TaskKind::Classification,
                &["FDA_APPROVED", "CT_TOX"],
                CLINTOX_TEXT,
                GPT4V,
                "clintox.csv",
            ),
            "hiv" => ("hiv", TaskKind::Classification, &["HIV_active"], HIV_TEXT, CLAUDE3_HAIKU, "hiv.csv"),
            "esol" => (
                "esol",
                TaskKind::Regression,
                &["measured log solubility in mols per litre"],
                ESOL_TEXT,
                GPT4V,
                "esol.csv",
            ),
            "freesolv" => ("freesolv", TaskKind::Regression, &["expt"], FREESOLV_TEXT, GPT4V, "freesolv.csv"),
            "lipo" | "lipophilicity" => (
                "lipo",
                TaskKind::Regression,
                &["exp"],
                LIPO_TEXT,
                CLAUDE3_HAIKU,
                "lipophilicity.csv",
            ),
            _ => return None,
        };
        Some(TaskSpec {
            name: name.to_string(),
            kind,
            smiles_column: "smiles".to_string(),
            label_columns: label.iter().map(|s| s.to_string()).collect(),
            prompt_description: text.to_string(),
            llm_model: model.to_string(),
            file_name: file.to_string(),
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.label_columns.len()
    }

    pub fn metric(&self) -> Metric {
        self.kind.metric()
    }

    /// Model output width: one logit per binary task, one value for regression.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            TaskKind::Classification => self.n_tasks(),
            TaskKind::Regression => 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("{path}: row {row}, column {column:?}: {value:?} is not a number")]
    BadLabel {
        path: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: every SMILES failed to parse")]
    NothingParsed { path: String },
}

/// A row whose SMILES could not be parsed. `row` is 1-based and counts the
/// header as row 1, matching what a spreadsheet shows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DroppedRow {
    pub row: usize,
    pub smiles: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct MoleculeDataset {
    pub task: TaskSpec,
    pub molecules: Vec<MolGraph>,
    /// Row-major `n_mols × n_tasks`; masked entries hold NaN.
    pub labels: Vec<f64>,
    /// `true` where the label is present and finite.
    pub mask: Vec<bool>,
    pub dropped: Vec<DroppedRow>,
}

impl MoleculeDataset {
    /// Builds a dataset from in-memory rows; `None` labels are masked.
    pub fn from_rows(task: TaskSpec, rows: Vec<(MolGraph, Vec<Option<f64>>)>) -> MoleculeDataset {
        let t = task.n_tasks();
        let mut molecules = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len() * t);
        let mut mask = Vec::with_capacity(rows.len() * t);
        for (mol, ys) in rows {
            assert_eq!(ys.len(), t, "label width");
            molecules.push(mol);
            for y in ys {
                match y.filter(|v| v.is_finite()) {
                    Some(v) => {
                        labels.push(v);
                        mask.push(true);
                    }
                    None => {
                        labels.push(f64::NAN);
                        mask.push(false);
                    }
                }
            }
        }
        MoleculeDataset {
            task,
            molecules,
            labels,
            mask,
            dropped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.task.n_tasks()
    }

    pub fn label(&self, i: usize, t: usize) -> Option<f64> {
        let k = i * self.n_tasks() + t;
        self.mask[k].then(|| self.labels[k])
    }

    /// Copy restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> MoleculeDataset {
        let t = self.n_tasks();
        let mut out = MoleculeDataset {
            task: self.task.clone(),
            molecules: Vec::with_capacity(indices.len()),
            labels: Vec::with_capacity(indices.len() * t),
            mask: Vec::with_capacity(indices.len() * t),
            dropped: Vec::new(),
        };
        for &i in indices {
            out.molecules.push(self.molecules[i].clone());
            out.labels.extend_from_slice(&self.labels[i * t..(i + 1) * t]);
            out.mask.extend_from_slice(&self.mask[i * t..(i + 1) * t]);
        }
        out
    }
}

/// Reads a CSV with a header row. Unparseable SMILES are dropped and logged;
/// blank labels are masked.
pub fn load_csv(path: impl AsRef<Path>, task: &TaskSpec) -> Result<MoleculeDataset, DatasetError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: shown.clone(),
        source,
    })?;
    read_csv(file, task, &shown)
}

/// [`load_csv`] over any reader; `origin` names the source in errors.
pub fn read_csv<R: std::io::Read>(reader: R, task: &TaskSpec, origin: &str) -> Result<MoleculeDataset, DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: origin.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                path: origin.to_string(),
                column: name.to_string(),
            })
    };
    let smiles_col = column(&task.smiles_column)?;
    let label_cols = task
        .label_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut n_records = 0;
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        n_records += 1;
        let row = k + 2;
        let smiles = record.get(smiles_col).unwrap_or("").trim();
        let mut ys = Vec::with_capacity(label_cols.len());
        for (&c, name) in label_cols.iter().zip(&task.label_columns) {
            let raw = record.get(c).unwrap_or("").trim();
            if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
                ys.push(None);
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| DatasetError::BadLabel {
                path: origin.to_string(),
                row,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            ys.push(Some(v));
        }
        match parse_smiles(smiles) {
            Ok(mol) => rows.push((mol, ys)),
            Err(e) => {
                log::warn!("{origin}: row {row}: dropping {smiles:?}: {e}");
                dropped.push(DroppedRow {
                    row,
                    smiles: smiles.to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    if n_records == 0 {
        return Err(DatasetError::Empty {
            path: origin.to_string(),
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::NothingParsed {
            path: origin.to_string(),
        });
    }
    let mut ds = MoleculeDataset::from_rows(task.clone(), rows);
    ds.dropped = dropped;
    Ok(ds)
}
