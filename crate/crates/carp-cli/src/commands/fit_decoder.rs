//! Decoder fitting stage.

use anyhow::bail;

use carp::decoder::{default_ridge, fit_closed_form, fit_sgd, FitReport, SgdOptions};
use carp::encoder::{encode_projected, SparseCode};
use carp::io::{read_embedding, write_decoder, write_text};
use carp::numkit::Matrix;

use crate::config::{FitDecoderConfig, FitMethod};

/// Rebuilds sparse codes and per-response targets from the stage files.
pub fn load_training_set(
    codes_path: &std::path::Path,
    prompts_path: &std::path::Path,
    n_responses: usize,
) -> anyhow::Result<(Vec<SparseCode>, Vec<Vec<f64>>)> {
    let (code_matrix, _) = read_embedding(codes_path)?;
    let (prompts, _) = read_embedding(prompts_path)?;
    if n_responses == 0 {
        bail!("n_responses must be at least 1");
    }
    if code_matrix.rows() != prompts.rows() * n_responses {
        bail!(
            "code rows {} do not equal prompts {} × n_responses {}",
            code_matrix.rows(),
            prompts.rows(),
            n_responses
        );
    }
    let codes = dense_rows_to_codes(&code_matrix)?;
    let mut targets = Vec::with_capacity(code_matrix.rows());
    for prompt in 0..prompts.rows() {
        for _ in 0..n_responses {
            targets.push(prompts.row(prompt).to_vec());
        }
    }
    Ok((codes, targets))
}

/// Reinterprets dense stored code rows as sparse codes (nonzero support).
pub fn dense_rows_to_codes(matrix: &Matrix) -> anyhow::Result<Vec<SparseCode>> {
    let mut out = Vec::with_capacity(matrix.rows());
    for r in 0..matrix.rows() {
        let row = matrix.row(r);
        let k = row.iter().filter(|v| **v != 0.0).count();
        out.push(encode_projected(row, k.max(1))?);
    }
    Ok(out)
}

pub fn run(config: &FitDecoderConfig) -> anyhow::Result<()> {
    let (codes, targets) =
        load_training_set(&config.codes, &config.prompts, config.n_responses)?;

    let (params, report) = match config.method {
        FitMethod::ClosedForm => {
            let ridge = config.ridge.unwrap_or_else(|| default_ridge(&codes));
            let params = fit_closed_form(&codes, &targets, ridge)?;
            let report = FitReport {
                nm: codes.len(),
                closed_form_residual: Some(params.meta.train_loss_final),
                sgd_loss_curve: Vec::new(),
                op_distance_to_ideal: None,
            };
            (params, report)
        }
        FitMethod::Sgd => {
            let Some(sgd) = &config.sgd else {
                bail!("method sgd requires an sgd section in the config");
            };
            let opts = SgdOptions {
                lr: sgd.lr,
                epochs: sgd.epochs,
                batch: sgd.batch,
                seed: sgd.seed,
                objective: sgd.objective,
            };
            fit_sgd(&codes, &targets, &opts)?
        }
    };

    write_decoder(&config.out, &params)?;
    if let Some(report_path) = &config.report_out {
        write_text(report_path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
