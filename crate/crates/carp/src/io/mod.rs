//! File formats: binary embedding matrices, decoder and reward-model
//! artifacts, and JSONL records. Round trips are bit-exact; truncated or
//! malformed files are rejected with diagnostics, never silently padded.

mod artifacts;
mod embedding;
mod jsonl;

pub use artifacts::{
    read_decoder, read_reward, write_decoder, write_reward, RewardArtifactMeta, DECODER_MAGIC,
    REWARD_MAGIC,
};
pub use embedding::{read_embedding, write_embedding, EmbeddingMeta, EMBEDDING_MAGIC};
pub use jsonl::{read_jsonl, write_jsonl, write_text, PairRecord, SasRecord};
