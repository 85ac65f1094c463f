//! Per-command configuration, loaded from a single JSON file. Unknown keys
//! are rejected. `--seed` and `--out` override the corresponding fields
//! after parsing; nothing else affects numerics.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

use carp::causalgen::GenConfig;
use carp::decoder::SgdObjective;
use carp::eval::SelectionRule;
use carp::reward::RewardMode;
use carp::theory::TheoryScale;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGenConfig {
    pub gen: GenConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeConfig {
    /// Response embedding file to encode.
    pub responses: PathBuf,
    pub projection: PathBuf,
    pub top_k: usize,
    /// Output codes file.
    pub out: PathBuf,
    /// Clean-signal file; with `ground_truth` set, flips are detected and
    /// the sidecar rewritten with the flag filled.
    #[serde(default)]
    pub clean: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth_out: Option<PathBuf>,
    /// Responses per prompt, required for flip detection to map code rows
    /// onto prompts.
    #[serde(default)]
    pub n_responses: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    ClosedForm,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub objective: SgdObjective,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDecoderConfig {
    pub codes: PathBuf,
    /// Prompt embedding file (one row per prompt).
    pub prompts: PathBuf,
    /// Responses per prompt; code row i belongs to prompt i / n_responses.
    pub n_responses: usize,
    #[serde(default)]
    pub method: FitMethod,
    /// Ridge for the closed form; absent means the default trace rule.
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub sgd: Option<SgdSection>,
    pub out: PathBuf,
    #[serde(default)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSasConfig {
    pub decoder: PathBuf,
    pub codes: PathBuf,
    pub prompts: PathBuf,
    pub n_responses: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRmConfig {
    pub pairs: PathBuf,
    /// Embedding file with one feature row per response id; required in
    /// linear mode, ignored in tabular mode.
    #[serde(default)]
    pub features: Option<PathBuf>,
    pub mode: RewardMode,
    pub sas_weight: f64,
    /// Safety threshold τ; absent means +∞ (no clipping).
    #[serde(default)]
    pub safety_threshold: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub curriculum: bool,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub loss_curve_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPairsConfig {
    pub pairs: PathBuf,
    pub rule: SelectionRule,
    pub out: PathBuf,
    #[serde(default)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestOfNConfig {
    pub candidates: PathBuf,
    pub sas_weight: f64,
    pub out: PathBuf,
    #[serde(default)]
    pub summary_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTheoryConfig {
    pub seed: u64,
    #[serde(default)]
    pub scale: Option<TheoryScale>,
    pub out_json: PathBuf,
    pub out_csv: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineRmSection {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default = "default_true")]
    pub curriculum: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub gen: GenConfig,
    pub out_dir: PathBuf,
    /// SAS weight used both in reward training and Best-of-N adjustment;
    /// zero reduces the whole pipeline to the vanilla path.
    pub sas_weight: f64,
    #[serde(default)]
    pub safety_threshold: Option<f64>,
    pub rm: PipelineRmSection,
    /// Candidates per prompt in the Best-of-N stage.
    pub bon_candidates: usize,
    /// Resume from existing stage artifacts instead of recomputing them.
    #[serde(default)]
    pub resume: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotExportConfig {
    /// JSONL of SAS records.
    pub scores: PathBuf,
    pub bins: usize,
    pub hist_out: PathBuf,
    /// Ground-truth sidecar for the covariate join.
    #[serde(default)]
    pub covariate: Option<PathBuf>,
    #[serde(default)]
    pub scatter_out: Option<PathBuf>,
    #[serde(default)]
    pub stats_out: Option<PathBuf>,
}

/// Canonical JSON: object keys sorted recursively, compact separators.
/// The manifest stores the sha256 of this form.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn write(value: &serde_json::Value, out: &mut String) {
        match value {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string"));
                    out.push(':');
                    write(&map[*k], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&serde_json::to_string(other).expect("scalar")),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

pub fn config_sha256(value: &serde_json::Value) -> String {
    let canonical = canonical_json(value);
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
