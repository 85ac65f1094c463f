//! Causal alignment via response-to-prompt prediction.
//!
//! This crate measures how well a response realizes its prompt's intent and
//! feeds that measurement into reward-model training:
//!
//! - [`causalgen`] draws synthetic worlds where a latent intention drives
//!   both the prompt embedding and the response signal, while an
//!   independent artifact perturbs responses;
//! - [`encoder`] turns response embeddings into TopK sparse codes and
//!   tracks *flip events*, the artifact-induced changes of the selected
//!   index set;
//! - [`decoder`] fits the prompt decoder whose reconstruction error is the
//!   semantic alignment score (SAS), and computes the ideal artifact-free
//!   parameters it should concentrate toward;
//! - [`reward`] trains Bradley-Terry reward models with SAS regularization,
//!   including the curriculum, the safety threshold, and the exact tabular
//!   shift identity;
//! - [`eval`] hosts the selection-accuracy, Best-of-N, histogram, and
//!   correlation protocols;
//! - [`theory`] verifies the flip-probability bound, decoder concentration,
//!   prediction independence, gradient formulas, and the ATE identity on
//!   the synthetic model;
//! - [`io`] defines the binary embedding/artifact formats and JSONL
//!   records shared with the command-line pipeline.
//!
//! Everything is deterministic: given a seed, two runs produce bit
//! identical results on any platform.

pub mod causalgen;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod numkit;
pub mod reward;
pub mod theory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod booktests {
    //! Every fenced Rust block in the guide compiles and runs under
    //! `cargo test --doc`, keeping the book in sync with the library.

    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(synthetic_model, "../../../book/src/synthetic-model.md");
    chapter!(sparse_codes, "../../../book/src/sparse-codes.md");
    chapter!(prompt_decoder, "../../../book/src/prompt-decoder.md");
    chapter!(reward_training, "../../../book/src/reward-training.md");
    chapter!(evaluation, "../../../book/src/evaluation.md");
    chapter!(theory_harness, "../../../book/src/theory-harness.md");
    chapter!(pipeline_cli, "../../../book/src/pipeline-cli.md");
}
