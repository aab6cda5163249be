//! Text embeddings of `response ⧺ separator ⧺ SMILES`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::client::{agent, post_json_with_retry, LlmError};
use crate::tensorcore::Tensor;

/// Width of the hashed-trigram embedding.
pub const HASHED_DIM: usize = 256;
pub const SEPARATOR: &str = "\n\nSMILES: ";

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("no embedding for molecule {0}")]
    MissingRow(usize),
    #[error("provider {provider} returned width {found}, registered width {expected}")]
    Width {
        provider: String,
        found: usize,
        expected: usize,
    },
    #[error("non-finite embedding value from {0}")]
    NonFinite(String),
    #[error(transparent)]
    Remote(#[from] LlmError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub provider_id: String,
    /// SHA-256 of the embedded text, or of the file row for file providers.
    pub source_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    /// Full URL of an OpenAI-style `/embeddings` endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub dim: usize,
    pub max_tries: u32,
    pub timeout_secs: u64,
}

pub enum EmbeddingProvider {
    /// Character-trigram feature hashing; needs no external resources.
    Hashed,
    /// Precomputed vectors, row `i` for molecule `i`.
    File { id: String, vectors: Tensor },
    Remote { config: RemoteEmbeddingConfig, agent: ureq::Agent },
}

/// FNV-1a, 64-bit.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Counts of character trigrams hashed into [`HASHED_DIM`] buckets, scaled
/// to unit L2 norm. Texts shorter than three characters hash as one gram.
pub fn hashed_trigram_embedding(text: &str) -> Vec<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut v = vec![0.0; HASHED_DIM];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        v[(fnv1a(s.as_bytes()) % HASHED_DIM as u64) as usize] += 1.0;
    };
    if chars.len() < 3 {
        if !chars.is_empty() {
            add(&chars);
        }
    } else {
        chars.windows(3).for_each(&mut add);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn embedding_input(response: &str, smiles: &str) -> String {
    format!("{response}{SEPARATOR}{smiles}")
}

impl EmbeddingProvider {
    pub fn remote(config: RemoteEmbeddingConfig) -> EmbeddingProvider {
        let agent = agent(Duration::from_secs(config.timeout_secs));
        EmbeddingProvider::Remote { config, agent }
    }

    /// Loads `{ "index": [floats], ... }` JSON, or a little-endian f32
    /// matrix with a `<file>.json` manifest `{ "rows": r, "cols": c }`.
    pub fn from_file(path: &Path) -> Result<EmbeddingProvider, EmbedError> {
        let err = |reason: String| EmbedError::File {
            path: path.display().to_string(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let vectors = if is_json {
            let map: BTreeMap<String, Vec<f64>> = serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
            let mut rows: Vec<(usize, Vec<f64>)> = map
                .into_iter()
                .map(|(k, v)| k.parse::<usize>().map(|i| (i, v)).map_err(|_| err(format!("key {k:?} is not an index"))))
                .collect::<Result<_, _>>()?;
            rows.sort_by_key(|(i, _)| *i);
            for (expected, (i, _)) in rows.iter().enumerate() {
                if *i != expected {
                    return Err(EmbedError::MissingRow(expected));
                }
            }
            let cols = rows.first().map_or(0, |(_, v)| v.len());
            if rows.iter().any(|(_, v)| v.len() != cols) || cols == 0 {
                return Err(err("rows differ in width or are empty".into()));
            }
            Tensor {
                shape: [rows.len(), cols],
                data: rows.into_iter().flat_map(|(_, v)| v).collect(),
            }
        } else {
            #[derive(Deserialize)]
            struct Manifest {
                rows: usize,
                cols: usize,
            }
            let mpath = crate::tensorcore::checkpoint::manifest_path(path);
            let m: Manifest = serde_json::from_slice(&std::fs::read(&mpath).map_err(|e| err(format!("manifest: {e}")))?)
                .map_err(|e| err(format!("manifest: {e}")))?;
            if bytes.len() != m.rows * m.cols * 4 {
                return Err(err(format!("expected {} bytes, found {}", m.rows * m.cols * 4, bytes.len())));
            }
            Tensor {
                shape: [m.rows, m.cols],
                data: bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
            }
        };
        if !vectors.is_finite() {
            return Err(EmbedError::NonFinite(path.display().to_string()));
        }
        Ok(EmbeddingProvider::File {
            id: format!("file:{}", path.display()),
            vectors,
        })
    }

    pub fn id(&self) -> String {
        match self {
            EmbeddingProvider::Hashed => format!("hashed-trigram-{HASHED_DIM}"),
            EmbeddingProvider::File { id, .. } => id.clone(),
            EmbeddingProvider::Remote { config, .. } => format!("remote:{}", config.model),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Hashed => HASHED_DIM,
            EmbeddingProvider::File { vectors, .. } => vectors.cols(),
            EmbeddingProvider::Remote { config, .. } => config.dim,
        }
    }

    /// Embeds molecule `index` with LLM answer `response`.
    pub fn embed(&self, index: usize, response: &str, smiles: &str) -> Result<TextEmbedding, EmbedError> {
        let text = embedding_input(response, smiles);
        let text_digest = hex::encode(Sha256::digest(text.as_bytes()));
        let (vector, source_digest) = match self {
            EmbeddingProvider::Hashed => (hashed_trigram_embedding(&text), text_digest),
            EmbeddingProvider::File { vectors, .. } => {
                if index >= vectors.rows() {
                    return Err(EmbedError::MissingRow(index));
                }
                let row = vectors.row(index).to_vec();
                let bytes: Vec<u8> = row.iter().flat_map(|x| x.to_le_bytes()).collect();
                (row, hex::encode(Sha256::digest(bytes)))
            }
            EmbeddingProvider::Remote { config, agent } => {
                let body = json!({ "model": config.model, "input": text });
                let reply = post_json_with_retry(
                    agent,
                    &config.endpoint,
                    &config.api_key_env,
                    &body,
                    config.max_tries,
                    Duration::from_millis(500),
                    &|| {},
                )?;
                let vector: Vec<f64> = reply["data"][0]["embedding"]
                    .as_array()
                    .ok_or_else(|| LlmError::Malformed("no data[0].embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(f64::NAN))
                    .collect();
                (vector, text_digest)
            }
        };
        if vector.len() != self.dim() {
            return Err(EmbedError::Width {
                provider: self.id(),
                found: vector.len(),
                expected: self.dim(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite(self.id()));
        }
        Ok(TextEmbedding {
            vector,
            provider_id: self.id(),
            source_digest,
        })
    }
}

/// Stacks embeddings into an `N × H_LM` matrix.
pub fn stack(embeddings: &[TextEmbedding]) -> Tensor {
    let cols = embeddings.first().map_or(0, |e| e.vector.len());
    Tensor {
        shape: [embeddings.len(), cols],
        data: embeddings.iter().flat_map(|e| e.vector.iter().copied()).collect(),
    }
}
