//! Experiment configuration: one TOML file, overridable per key.

use std::path::{Path, PathBuf};

use gallon::datasets::{SplitMode, SplitRatios, TaskSpec};
use gallon::distillation::{DistillConfig, DistillMode, TrainConfig, DEFAULT_GRID};
use gallon::teacherlm::{ClientConfig, ModalityFlags};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    /// Master seed; every stage derives its own from it.
    pub seed: u64,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub teachers: TeachersSection,
    pub student: TrainSection,
    pub distill: DistillSection,
    pub eval: EvalSection,
    pub llm: LlmSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Preset name: bace, bbbp, clintox, hiv, esol, freesolv, lipo.
    pub name: String,
    /// CSV path; defaults to `<data_dir>/<preset file name>`.
    pub path: Option<PathBuf>,
    pub data_dir: PathBuf,
    /// Overrides the preset's label columns.
    pub label_columns: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitMode,
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Shared by the GCN teacher and the student MLP.
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Hashed,
    File,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeachersSection {
    pub gnn: TrainSection,
    pub lm_head: TrainSection,
    /// Hidden width of the LM head; 0 for a single linear layer.
    pub lm_head_hidden: usize,
    pub embedding: EmbeddingKind,
    pub embedding_file: Option<PathBuf>,
    pub embedding_endpoint: Option<String>,
    pub embedding_model: Option<String>,
    pub embedding_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSetting {
    /// Label distillation for classification, representation for
    /// regression.
    Auto,
    Label,
    Representation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub alpha: f64,
    pub beta: f64,
    pub mode: ModeSetting,
    pub latent_dim: usize,
    pub teacher_heads_trainable: bool,
    /// Candidate values for both α and β in `grid`.
    pub grid: Vec<f64>,
    /// `pipeline` searches the grid instead of using `alpha`/`beta`.
    pub search: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub bench_repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: String,
    /// Defaults to the dataset preset's model.
    pub model: Option<String>,
    pub api_key_env: String,
    pub use_image: bool,
    pub use_graph_text: bool,
    pub max_tries: u32,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    pub timeout_secs: u64,
    pub offline: bool,
    /// Skip the chat model entirely and embed the SMILES alone.
    pub skip: bool,
    pub cache_dir: PathBuf,
}


impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            name: "bace".into(),
            path: None,
            data_dir: "data".into(),
            label_columns: None,
        }
    }
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        SplitSection {
            mode: SplitMode::Scaffold,
            train: r.train,
            valid: r.valid,
            test: r.test,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden: 32, layers: 3 }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            patience: t.patience,
        }
    }
}

impl Default for TeachersSection {
    fn default() -> Self {
        TeachersSection {
            gnn: TrainSection::default(),
            lm_head: TrainSection::default(),
            lm_head_hidden: 0,
            embedding: EmbeddingKind::Hashed,
            embedding_file: None,
            embedding_endpoint: None,
            embedding_model: None,
            embedding_dim: 0,
        }
    }
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillSection {
            alpha: d.alpha,
            beta: d.beta,
            mode: ModeSetting::Auto,
            latent_dim: d.latent_dim,
            teacher_heads_trainable: d.teacher_heads_trainable,
            grid: DEFAULT_GRID.to_vec(),
            search: false,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { bench_repeats: 100 }
    }
}

impl Default for LlmSection {
    fn default() -> Self {
        let c = ClientConfig::default();
        LlmSection {
            endpoint: c.endpoint,
            model: None,
            api_key_env: c.api_key_env,
            use_image: true,
            use_graph_text: true,
            max_tries: c.max_tries,
            max_in_flight: c.max_in_flight,
            requests_per_minute: c.requests_per_minute,
            timeout_secs: c.timeout_secs,
            offline: false,
            skip: false,
            cache_dir: "cache".into(),
        }
    }
}

/// Parses a `--set` value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set: malformed key {key:?}")));
    }
    let mut table = root;
    for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: `{}` is not a table", parts[..=depth].join("."))))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Config {
    /// Reads `path` (if any), applies `key=value` overrides, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {o:?}")))?;
            set_path(&mut table, k.trim(), parse_literal(v.trim()))?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("{key}: {why}")));
        if TaskSpec::preset(&self.dataset.name).is_none() {
            return bad("dataset.name", &format!("unknown dataset {:?}", self.dataset.name));
        }
        let r = [self.split.train, self.split.valid, self.split.test];
        if r.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split", "ratios must be non-negative and sum to 1");
        }
        if self.model.hidden == 0 || self.model.layers == 0 {
            return bad("model", "hidden and layers must be positive");
        }
        for (key, t) in [("student", &self.student), ("teachers.gnn", &self.teachers.gnn), ("teachers.lm_head", &self.teachers.lm_head)] {
            if t.batch_size == 0 {
                return bad(&format!("{key}.batch_size"), "must be positive");
            }
            if !(t.lr > 0.0 && t.lr.is_finite()) {
                return bad(&format!("{key}.lr"), "must be positive");
            }
        }
        if self.distill_config().validate().is_err() {
            return bad("distill", "alpha and beta must be finite and non-negative, latent_dim positive");
        }
        if self.distill.grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return bad("distill.grid", "values must be finite and non-negative");
        }
        match self.teachers.embedding {
            EmbeddingKind::File if self.teachers.embedding_file.is_none() => {
                return bad("teachers.embedding_file", "required when teachers.embedding = \"file\"");
            }
            EmbeddingKind::Remote if self.teachers.embedding_endpoint.is_none() || self.teachers.embedding_dim == 0 => {
                return bad("teachers.embedding_endpoint", "remote embeddings need an endpoint and embedding_dim");
            }
            _ => {}
        }
        Ok(())
    }

    pub fn task(&self) -> TaskSpec {
        let mut task = TaskSpec::preset(&self.dataset.name).expect("validated");
        if let Some(cols) = &self.dataset.label_columns {
            task.label_columns = cols.clone();
        }
        task
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.path.clone().unwrap_or_else(|| self.dataset.data_dir.join(self.task().file_name))
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.split.train,
            valid: self.split.valid,
            test: self.split.test,
        }
    }

    fn train_config(&self, t: &TrainSection, stage: &str) -> TrainConfig {
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            patience: t.patience,
            seed: gallon::tensorcore::rng::derive_seed(self.seed, stage),
            hidden: self.model.hidden,
            n_layers: self.model.layers,
        }
    }

    pub fn gnn_train(&self) -> TrainConfig {
        self.train_config(&self.teachers.gnn, "gnn")
    }

    pub fn lm_head_train(&self) -> TrainConfig {
        self.train_config(&self.teachers.lm_head, "lm-head")
    }

    /// The student uses the master seed itself, so a student with zero
    /// weights reproduces a plain MLP trained with the same seed.
    pub fn student_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train_config(&self.student, "student")
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            alpha: self.distill.alpha,
            beta: self.distill.beta,
            mode: match self.distill.mode {
                ModeSetting::Auto => None,
                ModeSetting::Label => Some(DistillMode::Label),
                ModeSetting::Representation => Some(DistillMode::Representation),
            },
            latent_dim: self.distill.latent_dim,
            teacher_heads_trainable: self.distill.teacher_heads_trainable,
        }
    }

    pub fn flags(&self) -> ModalityFlags {
        ModalityFlags {
            use_image: self.llm.use_image,
            use_graph_text: self.llm.use_graph_text,
        }
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            endpoint: self.llm.endpoint.clone(),
            model: self.llm.model.clone().unwrap_or_else(|| self.task().llm_model),
            api_key_env: self.llm.api_key_env.clone(),
            max_tries: self.llm.max_tries,
            timeout_secs: self.llm.timeout_secs,
            offline: self.llm.offline,
            max_in_flight: self.llm.max_in_flight,
            requests_per_minute: self.llm.requests_per_minute,
            ..ClientConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let text = toml::to_string(&c).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.distill.grid.len(), 10);
        assert_eq!((c.model.hidden, c.model.layers), (32, 3));
    }

    #[test]
    fn overrides_apply_by_path() {
        let c = Config::load(
            None,
            &[
                "distill.alpha=0.5".into(),
                "dataset.name=esol".into(),
                "split.mode=\"random_scaffold\"".into(),
                "seed=7".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.distill.alpha, 0.5);
        assert_eq!(c.dataset.name, "esol");
        assert_eq!(c.split.mode, SplitMode::RandomScaffold);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn schema_errors_name_the_key() {
        let err = Config::load(None, &["distill.alpah=1".into()]).unwrap_err().to_string();
        assert!(err.contains("alpah"), "{err}");
        let err = Config::load(None, &["distill.alpha=-1".into()]).unwrap_err().to_string();
        assert!(err.contains("distill"), "{err}");
        let err = Config::load(None, &["dataset.name=tox21".into()]).unwrap_err().to_string();
        assert!(err.contains("dataset.name"), "{err}");
        assert!(Config::load(None, &["seed".into()]).is_err());
    }

    #[test]
    fn student_seed_is_master_seed() {
        let c = Config::load(None, &["seed=12".into()]).unwrap();
        assert_eq!(c.student_train().seed, 12);
        assert_ne!(c.gnn_train().seed, 12);
    }

    #[test]
    fn bundled_example_config_loads() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bace.toml");
        let c = Config::load(Some(&path), &[]).unwrap();
        assert!(c.llm.skip);
        assert_eq!(c.distill.grid, DEFAULT_GRID.to_vec());
        assert_eq!(c.split.mode, SplitMode::Scaffold);
    }
}
