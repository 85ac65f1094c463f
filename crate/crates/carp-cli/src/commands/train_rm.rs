//! Reward-model training stage: joins pair records with feature rows and
//! SAS scores, trains, and writes the CARPRM1 artifact.

use anyhow::{bail, Context};

use carp::io::{read_embedding, read_jsonl, write_reward, write_text, PairRecord, RewardArtifactMeta};
use carp::numkit::Matrix;
use carp::reward::{train, PreferencePair, RewardMode, TrainConfig};

use crate::config::TrainRmConfig;

/// Builds in-memory pairs from wire records plus the optional feature
/// matrix. SAS fields may be omitted only when the SAS weight is zero.
pub fn assemble_pairs(
    records: &[PairRecord],
    features: Option<&Matrix>,
    mode: RewardMode,
    sas_weight: f64,
) -> anyhow::Result<Vec<PreferencePair>> {
    let mut pairs = Vec::with_capacity(records.len());
    for record in records {
        let (sas_chosen, sas_rejected) = match (record.sas_chosen, record.sas_rejected) {
            (Some(c), Some(r)) => (c, r),
            _ if sas_weight == 0.0 => (0.0, 0.0),
            _ => bail!(
                "pair {} lacks SAS fields but sas_weight is nonzero",
                record.pair_id
            ),
        };
        let (features_chosen, features_rejected) = match mode {
            RewardMode::Linear => {
                let features = features.context("linear mode requires a features file")?;
                if record.chosen_id >= features.rows() || record.rejected_id >= features.rows() {
                    bail!(
                        "pair {} references response ids beyond the feature rows",
                        record.pair_id
                    );
                }
                (
                    features.row(record.chosen_id).to_vec(),
                    features.row(record.rejected_id).to_vec(),
                )
            }
            RewardMode::Tabular => (Vec::new(), Vec::new()),
        };
        pairs.push(PreferencePair {
            pair_id: record.pair_id,
            chosen_id: record.chosen_id,
            rejected_id: record.rejected_id,
            features_chosen,
            features_rejected,
            sas_chosen,
            sas_rejected,
        });
    }
    Ok(pairs)
}

pub fn run(config: &TrainRmConfig) -> anyhow::Result<()> {
    let records: Vec<PairRecord> = read_jsonl(&config.pairs)?;
    if records.is_empty() {
        bail!("no pairs in {}", config.pairs.display());
    }
    let features = match (config.mode, &config.features) {
        (RewardMode::Linear, Some(path)) => Some(read_embedding(path)?.0),
        (RewardMode::Linear, None) => bail!("linear mode requires a features file"),
        (RewardMode::Tabular, _) => None,
    };
    let pairs = assemble_pairs(&records, features.as_ref(), config.mode, config.sas_weight)?;

    let train_config = TrainConfig {
        sas_weight: config.sas_weight,
        safety_threshold: config.safety_threshold.unwrap_or(f64::INFINITY),
        epochs: config.epochs,
        lr: config.lr,
        batch: config.batch.unwrap_or(usize::MAX),
        curriculum: config.curriculum,
        seed: config.seed,
    };
    let (params, curve) = train(&pairs, &train_config, config.mode)?;

    let meta = RewardArtifactMeta {
        sas_weight: config.sas_weight,
        safety_threshold: config.safety_threshold,
        epochs: config.epochs,
        lr: config.lr,
        curriculum: config.curriculum,
        seed: config.seed,
        final_loss: *curve.last().expect("at least one epoch"),
    };
    write_reward(&config.out, &params, &meta)?;

    if let Some(curve_path) = &config.loss_curve_out {
        let mut csv = String::from("epoch,loss\n");
        for (epoch, loss) in curve.iter().enumerate() {
            csv.push_str(&format!("{epoch},{loss}\n"));
        }
        write_text(curve_path, &csv)?;
    }
    Ok(())
}
