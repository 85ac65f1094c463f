//! Best-of-N selection over candidate sets.

use serde::{Deserialize, Serialize};

use carp::eval::{best_of_n, BonCandidateSet};
use carp::io::{read_jsonl, write_jsonl, write_text};

use crate::config::BestOfNConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Selection {
    pub prompt_id: u64,
    pub response_id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonSummary {
    pub sas_weight: f64,
    pub prompts: usize,
    pub mean_reward: f64,
    pub mean_sas: f64,
    /// Mean artifact magnitude of the selections, when candidate sets
    /// carry it.
    pub mean_artifact_magnitude: Option<f64>,
}

pub fn select_all(
    sets: &[BonCandidateSet],
    sas_weight: f64,
) -> anyhow::Result<(Vec<Selection>, BonSummary)> {
    let mut selections = Vec::with_capacity(sets.len());
    let mut reward_sum = 0.0;
    let mut sas_sum = 0.0;
    let mut artifact_sum = 0.0;
    let mut artifact_count = 0usize;
    for set in sets {
        let winner = best_of_n(set, sas_weight)?;
        let candidate = set
            .candidates
            .iter()
            .find(|c| c.response_id == winner)
            .expect("winner comes from the set");
        reward_sum += candidate.reward;
        sas_sum += candidate.sas;
        if let Some(a) = candidate.artifact_magnitude {
            artifact_sum += a;
            artifact_count += 1;
        }
        selections.push(Selection {
            prompt_id: set.prompt_id,
            response_id: winner,
        });
    }
    let n = sets.len().max(1) as f64;
    let summary = BonSummary {
        sas_weight,
        prompts: sets.len(),
        mean_reward: reward_sum / n,
        mean_sas: sas_sum / n,
        mean_artifact_magnitude: (artifact_count == sets.len() && !sets.is_empty())
            .then(|| artifact_sum / n),
    };
    Ok((selections, summary))
}

pub fn run(config: &BestOfNConfig) -> anyhow::Result<()> {
    let sets: Vec<BonCandidateSet> = read_jsonl(&config.candidates)?;
    let (selections, summary) = select_all(&sets, config.sas_weight)?;
    write_jsonl(&config.out, &selections)?;
    if let Some(summary_path) = &config.summary_out {
        write_text(summary_path, &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(())
}
