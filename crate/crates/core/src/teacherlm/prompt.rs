//! Multimodal prompt assembly and content digests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chemgraph::{depict, edge_text, DepictOptions, MolGraph, RasterError};
use crate::datasets::TaskSpec;

/// Shared opening of every prompt. Part of every digest: editing it
/// invalidates all cached responses.
pub const PREAMBLE: &str = "Act as an expert in chemistry and molecular science. \
You will receive one molecule as a SMILES string, optionally with a list of its bonds and a 2D structure diagram. \
Describe the molecule: its functional groups, ring systems, charge, polarity, size and any notable structural motifs. \
Then explain how these features are likely to affect the property described below, reasoning step by step. \
Be specific and concise.";

const IMAGE_NOTE: &str = "The 2D structure diagram of the molecule is attached as an image.";
/// Raster scale applied to the vector depiction.
pub const IMAGE_SCALE: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityFlags {
    pub use_image: bool,
    pub use_graph_text: bool,
}

impl Default for ModalityFlags {
    fn default() -> Self {
        ModalityFlags {
            use_image: true,
            use_graph_text: true,
        }
    }
}

impl ModalityFlags {
    /// Every on/off combination of the two optional modalities.
    pub const ALL: [ModalityFlags; 4] = [
        ModalityFlags {
            use_image: true,
            use_graph_text: true,
        },
        ModalityFlags {
            use_image: false,
            use_graph_text: true,
        },
        ModalityFlags {
            use_image: true,
            use_graph_text: false,
        },
        ModalityFlags {
            use_image: false,
            use_graph_text: false,
        },
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub general_text: String,
    pub dataset_text: String,
    pub smiles: String,
    /// Present iff `flags.use_graph_text`.
    pub edge_text: Option<String>,
    /// PNG bytes; present iff `flags.use_image`.
    pub image: Option<Vec<u8>>,
    pub flags: ModalityFlags,
}

impl Prompt {
    /// The full text part, byte-deterministic.
    pub fn text(&self) -> String {
        let mut out = format!("{}\n\n{}\n\nSMILES: {}", self.general_text, self.dataset_text, self.smiles);
        if let Some(edges) = &self.edge_text {
            out.push_str("\n\nGraph structure (one line per bond):\n");
            out.push_str(if edges.is_empty() { "(no bonds)" } else { edges });
        }
        if self.image.is_some() {
            out.push_str("\n\n");
            out.push_str(IMAGE_NOTE);
        }
        out
    }

    pub fn digest(&self, model: &str) -> String {
        prompt_digest(model, &self.text(), self.image.as_deref())
    }
}

/// SHA-256 over length-prefixed `model`, `text` and image fields; an absent
/// image hashes differently from an empty one.
pub fn prompt_digest(model: &str, text: &str, image: Option<&[u8]>) -> String {
    let mut h = Sha256::new();
    for field in [model.as_bytes(), text.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    match image {
        Some(bytes) => {
            h.update([1u8]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        None => h.update([0u8]),
    }
    hex::encode(h.finalize())
}

pub fn build_prompt(mol: &MolGraph, task: &TaskSpec, flags: ModalityFlags) -> Result<Prompt, RasterError> {
    let image = if flags.use_image {
        Some(depict(mol, &DepictOptions::default()).to_png(IMAGE_SCALE)?)
    } else {
        None
    };
    Ok(Prompt {
        general_text: PREAMBLE.to_string(),
        dataset_text: task.prompt_description.clone(),
        smiles: mol.smiles.clone(),
        edge_text: flags.use_graph_text.then(|| edge_text(mol)),
        image,
        flags,
    })
}
