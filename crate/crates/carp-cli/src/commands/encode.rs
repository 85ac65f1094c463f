//! Encoding stage: projects response embeddings into TopK codes and,
//! given the clean signals, fills the flip flag in the ground-truth
//! sidecar.

use anyhow::{bail, Context};

use carp::causalgen::ResponseMeta;
use carp::encoder::{detect_flip, encode};
use carp::io::{read_embedding, read_jsonl, write_embedding, write_jsonl, EmbeddingMeta};
use carp::numkit::Matrix;

use crate::config::EncodeConfig;

pub fn run(config: &EncodeConfig) -> anyhow::Result<()> {
    let (responses, resp_meta) = read_embedding(&config.responses)?;
    let (projection, _) = read_embedding(&config.projection)?;
    if responses.cols() != projection.cols() {
        bail!(
            "response dimension {} does not match projection input dimension {}",
            responses.cols(),
            projection.cols()
        );
    }
    if config.top_k > projection.rows() {
        bail!(
            "top_k {} exceeds projection width {}",
            config.top_k,
            projection.rows()
        );
    }

    let mut codes = Matrix::zeros(responses.rows(), projection.rows());
    for r in 0..responses.rows() {
        let code = encode(&projection, responses.row(r), config.top_k)?;
        codes.row_mut(r).copy_from_slice(&code.dense);
    }
    let mut meta = EmbeddingMeta::new("carp encode");
    meta.ids = resp_meta.ids.clone();
    write_embedding(&config.out, &codes, &meta)?;

    if let (Some(clean_path), Some(gt_path)) = (&config.clean, &config.ground_truth) {
        let m = config
            .n_responses
            .context("flip detection requires n_responses")?;
        let (clean, _) = read_embedding(clean_path)?;
        let mut rows: Vec<ResponseMeta> = read_jsonl(gt_path)?;
        for meta_row in &mut rows {
            let row = meta_row.prompt_id * m + meta_row.response_index;
            if row >= responses.rows() || meta_row.prompt_id >= clean.rows() {
                bail!(
                    "ground-truth row ({}, {}) outside the embedding files",
                    meta_row.prompt_id,
                    meta_row.response_index
                );
            }
            let record = detect_flip(
                &projection,
                clean.row(meta_row.prompt_id),
                responses.row(row),
                config.top_k,
            )?;
            meta_row.flipped = Some(record.flipped);
        }
        let out = config.ground_truth_out.as_ref().unwrap_or(gt_path);
        write_jsonl(out, &rows)?;
    }
    Ok(())
}
