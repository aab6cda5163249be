//! Teacher pretraining, student distillation and the α/β grid search.

mod grid;
pub mod losses;
mod train;

pub use grid::{grid_search, GridResult, GridRow, DEFAULT_GRID};
pub use losses::{label_distill_loss, pred_loss, repr_distill_loss, TeacherBatch};
pub use train::{
    total_loss, train_gnn_teacher, train_plain_mlp, train_student, EpochRecord, LossParts, TrainOutcome,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::TaskKind;
use crate::evaluation::MetricError;
use crate::models::{ModelError, PreparedGraphs};
use crate::tensorcore::checkpoint::{self, CheckpointError};
use crate::tensorcore::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("missing {0}")]
    MissingTeacher(&'static str),
    #[error("teacher {name} has {found} rows, dataset has {expected}")]
    TeacherRows {
        name: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: TensorError,
    },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("empty training split")]
    EmptySplit,
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Width of every hidden layer.
    pub hidden: usize,
    pub n_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            patience: 20,
            seed: 0,
            hidden: 32,
            n_layers: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillMode {
    /// Match teacher predictions.
    Label,
    /// Match teacher representations in a shared latent space.
    Representation,
}

impl DistillMode {
    pub fn default_for(kind: TaskKind) -> DistillMode {
        match kind {
            TaskKind::Classification => DistillMode::Label,
            TaskKind::Regression => DistillMode::Representation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the language-model teacher.
    pub alpha: f64,
    /// Weight of the graph teacher.
    pub beta: f64,
    /// `None` picks label mode for classification, representation mode for
    /// regression.
    pub mode: Option<DistillMode>,
    pub latent_dim: usize,
    pub teacher_heads_trainable: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.0,
            beta: 0.0,
            mode: None,
            latent_dim: 32,
            teacher_heads_trainable: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(DistillError::Config(format!(
                "alpha and beta must be finite and non-negative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.latent_dim == 0 {
            return Err(DistillError::Config("latent_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn mode_for(&self, kind: TaskKind) -> DistillMode {
        self.mode.unwrap_or(DistillMode::default_for(kind))
    }
}

/// Per-molecule teacher outputs over the whole dataset. Logits for
/// classification, raw values for regression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeacherArtifacts {
    pub y_lm: Option<Tensor>,
    pub h_lm: Option<Tensor>,
    pub y_gnn: Option<Tensor>,
    pub h_gnn: Option<Tensor>,
    /// Digests of the inputs and runs that produced each part.
    pub provenance: BTreeMap<String, String>,
}

impl TeacherArtifacts {
    fn parts(&self) -> [(&'static str, &Option<Tensor>); 4] {
        [
            ("y_lm", &self.y_lm),
            ("h_lm", &self.h_lm),
            ("y_gnn", &self.y_gnn),
            ("h_gnn", &self.h_gnn),
        ]
    }

    pub fn check_rows(&self, n: usize) -> Result<(), DistillError> {
        for (name, t) in self.parts() {
            if let Some(t) = t {
                if t.rows() != n {
                    return Err(DistillError::TeacherRows {
                        name,
                        found: t.rows(),
                        expected: n,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn batch(&self, indices: &[usize]) -> TeacherBatch {
        let pick = |t: &Option<Tensor>| t.as_ref().map(|t| t.select_rows(indices));
        TeacherBatch {
            y_lm: pick(&self.y_lm),
            h_lm: pick(&self.h_lm),
            y_gnn: pick(&self.y_gnn),
            h_gnn: pick(&self.h_gnn),
        }
    }

    /// Combines the LM half of `self` with the GNN half of `other`.
    pub fn merged(&self, other: &TeacherArtifacts) -> TeacherArtifacts {
        let mut provenance = self.provenance.clone();
        provenance.extend(other.provenance.clone());
        TeacherArtifacts {
            y_lm: self.y_lm.clone().or_else(|| other.y_lm.clone()),
            h_lm: self.h_lm.clone().or_else(|| other.h_lm.clone()),
            y_gnn: other.y_gnn.clone().or_else(|| self.y_gnn.clone()),
            h_gnn: other.h_gnn.clone().or_else(|| self.h_gnn.clone()),
            provenance,
        }
    }

    /// Writes the present parts as a matrix container, plus provenance as
    /// `<path>.provenance.json`.
    pub fn save(&self, path: &Path) -> Result<(), DistillError> {
        let entries: Vec<(&str, &Tensor)> = self.parts().into_iter().filter_map(|(n, t)| t.as_ref().map(|t| (n, t))).collect();
        checkpoint::write_matrices(path, &entries)?;
        let mut p = path.as_os_str().to_owned();
        p.push(".provenance.json");
        let text = serde_json::to_vec_pretty(&self.provenance).expect("string map serializes");
        checkpoint::write_atomic(Path::new(&p), &text).map_err(|source| CheckpointError::Io {
            path: Path::new(&p).display().to_string(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TeacherArtifacts, DistillError> {
        let entries = checkpoint::read_matrices(path)?;
        let mut out = TeacherArtifacts::default();
        for (name, t) in entries {
            match name.as_str() {
                "y_lm" => out.y_lm = Some(t),
                "h_lm" => out.h_lm = Some(t),
                "y_gnn" => out.y_gnn = Some(t),
                "h_gnn" => out.h_gnn = Some(t),
                _ => {}
            }
        }
        let mut p = path.as_os_str().to_owned();
        p.push(".provenance.json");
        if let Ok(text) = std::fs::read(Path::new(&p)) {
            out.provenance = serde_json::from_slice(&text).unwrap_or_default();
        }
        Ok(out)
    }
}

/// Logits of a teacher that knows every label: `+margin` for positives,
/// `−margin` for negatives, 0 where the label is missing.
pub fn perfect_teacher_logits(data: &PreparedGraphs, margin: f64) -> Tensor {
    let data_vec = data
        .labels
        .iter()
        .zip(&data.mask)
        .map(|(&y, &m)| if !m { 0.0 } else if y > 0.5 { margin } else { -margin })
        .collect();
    Tensor {
        shape: [data.len(), data.n_tasks],
        data: data_vec,
    }
}
