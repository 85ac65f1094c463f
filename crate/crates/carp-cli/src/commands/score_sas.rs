//! SAS scoring stage: decoder + codes + prompt embeddings → per-response
//! scores.

use anyhow::bail;

use carp::decoder::sas;
use carp::io::{read_decoder, read_embedding, write_jsonl, SasRecord};

use crate::commands::fit_decoder::dense_rows_to_codes;
use crate::config::ScoreSasConfig;

pub fn run(config: &ScoreSasConfig) -> anyhow::Result<()> {
    let decoder = read_decoder(&config.decoder)?;
    let (code_matrix, _) = read_embedding(&config.codes)?;
    let (prompts, _) = read_embedding(&config.prompts)?;
    if config.n_responses == 0 {
        bail!("n_responses must be at least 1");
    }
    if code_matrix.rows() != prompts.rows() * config.n_responses {
        bail!(
            "code rows {} do not equal prompts {} × n_responses {}",
            code_matrix.rows(),
            prompts.rows(),
            config.n_responses
        );
    }
    let codes = dense_rows_to_codes(&code_matrix)?;
    let mut records = Vec::with_capacity(codes.len());
    for (row, code) in codes.iter().enumerate() {
        let prompt_id = row / config.n_responses;
        let score = sas(&decoder, code, prompts.row(prompt_id))?;
        records.push(SasRecord {
            prompt_id,
            response_index: row % config.n_responses,
            sas: score,
        });
    }
    write_jsonl(&config.out, &records)?;
    Ok(())
}
