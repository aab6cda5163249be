//! LLM teacher: prompts, cached chat queries, text embeddings and the
//! prediction head trained on them.

mod client;
mod embed;
mod head;
mod prompt;

pub use client::{CacheEntry, ClientConfig, LlmClient, LlmError, LlmResponse, ResponseCache, TokenUsage};
pub use embed::{
    embedding_input, hashed_trigram_embedding, stack, EmbedError, EmbeddingProvider, RemoteEmbeddingConfig,
    TextEmbedding, HASHED_DIM, SEPARATOR,
};
pub use head::{train_lm_head, LmHead, LmHeadOutcome};
pub use prompt::{build_prompt, prompt_digest, ModalityFlags, Prompt, IMAGE_SCALE, PREAMBLE};
