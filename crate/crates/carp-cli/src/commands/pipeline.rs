//! End-to-end pipeline: generate → encode → fit-decoder → score-sas →
//! build pairs → train vanilla and SAS-regularized reward models → score
//! Best-of-N candidates with both → compare.
//!
//! Every stage reads its inputs from the previous stage's files and writes
//! its own, so an interrupted run resumed from stage artifacts produces
//! byte-identical results, and the whole pipeline is a pure function of
//! the config.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use carp::causalgen::ResponseMeta;
use carp::eval::{BonCandidate, BonCandidateSet};
use carp::io::{
    read_embedding, read_jsonl, read_reward, write_jsonl, PairRecord, SasRecord,
};
use carp::numkit::{dot, norm2, Rng};
use carp::reward::RewardMode;

use crate::commands::best_of_n::{select_all, BonSummary};
use crate::commands::{encode, fit_decoder, score_sas, synth_gen, train_rm};
use crate::config::{
    EncodeConfig, FitDecoderConfig, FitMethod, PipelineConfig, ScoreSasConfig, SynthGenConfig,
    TrainRmConfig,
};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub sas_weight: f64,
    pub decoder_train_residual: f64,
    pub rm_vanilla_final_loss: f64,
    pub rm_carp_final_loss: f64,
    pub bon_vanilla: BonSummary,
    pub bon_carp: BonSummary,
}

struct Stage<'a> {
    name: &'static str,
    outputs: Vec<PathBuf>,
    resume: bool,
    dir: &'a Path,
}

impl<'a> Stage<'a> {
    fn new(name: &'static str, dir: &'a Path, resume: bool, outputs: &[&str]) -> Self {
        Stage {
            name,
            outputs: outputs.iter().map(|f| dir.join(f)).collect(),
            resume,
            dir,
        }
    }

    fn skip(&self) -> bool {
        self.resume && self.outputs.iter().all(|p| p.exists())
    }

    fn run(&self, f: impl FnOnce() -> anyhow::Result<()>) -> anyhow::Result<()> {
        if self.skip() {
            return Ok(());
        }
        std::fs::create_dir_all(self.dir)
            .with_context(|| format!("pipeline stage '{}' failed", self.name))?;
        f().with_context(|| format!("pipeline stage '{}' failed", self.name))
    }
}

/// Unit vector in response space along which preference labels are
/// artifact-driven; derived from the pipeline seed.
fn hack_direction(seed: u64, d: usize) -> Vec<f64> {
    let mut v = Rng::from_seed(seed).substream(0x4841_434b).normal_vec(d, 1.0);
    let n = norm2(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

pub fn run(config: &PipelineConfig) -> anyhow::Result<PipelineReport> {
    config.gen.validate().context("invalid generator config")?;
    if config.gen.n_responses < 2 {
        bail!("the pipeline needs at least 2 responses per prompt to form pairs");
    }
    if config.bon_candidates < 1 {
        bail!("bon_candidates must be at least 1");
    }
    let dir = &config.out_dir;
    let train_dir = dir.join("train");
    let eval_dir = dir.join("eval");
    let resume = config.resume;

    // 1. Generation (train split).
    Stage::new("synth-gen", &train_dir, resume, &[synth_gen::FILE_MANIFEST]).run(|| {
        synth_gen::run(&SynthGenConfig {
            gen: config.gen.clone(),
            out_dir: train_dir.clone(),
        })
    })?;

    // 2. Encoding with flip detection.
    Stage::new("encode", &train_dir, resume, &["codes.carpemb"]).run(|| {
        encode::run(&EncodeConfig {
            responses: train_dir.join(synth_gen::FILE_RESPONSES),
            projection: train_dir.join(synth_gen::FILE_PROJECTION),
            top_k: config.gen.top_k,
            out: train_dir.join("codes.carpemb"),
            clean: Some(train_dir.join(synth_gen::FILE_CLEAN)),
            ground_truth: Some(train_dir.join(synth_gen::FILE_GROUND_TRUTH)),
            ground_truth_out: None,
            n_responses: Some(config.gen.n_responses),
        })
    })?;

    // 3. Decoder fit.
    Stage::new("fit-decoder", &train_dir, resume, &["decoder.carpdec"]).run(|| {
        fit_decoder::run(&FitDecoderConfig {
            codes: train_dir.join("codes.carpemb"),
            prompts: train_dir.join(synth_gen::FILE_PROMPTS),
            n_responses: config.gen.n_responses,
            method: FitMethod::ClosedForm,
            ridge: None,
            sgd: None,
            out: train_dir.join("decoder.carpdec"),
            report_out: Some(train_dir.join("fit_report.json")),
        })
    })?;

    // 4. SAS scores for the training responses.
    Stage::new("score-sas", &train_dir, resume, &["sas.jsonl"]).run(|| {
        score_sas::run(&ScoreSasConfig {
            decoder: train_dir.join("decoder.carpdec"),
            codes: train_dir.join("codes.carpemb"),
            prompts: train_dir.join(synth_gen::FILE_PROMPTS),
            n_responses: config.gen.n_responses,
            out: train_dir.join("sas.jsonl"),
        })
    })?;

    // 5. Preference pairs with artifact-driven labels: within each prompt,
    // the response with the larger artifact component along a fixed
    // direction is marked chosen, simulating hacked preference data.
    Stage::new("make-pairs", &train_dir, resume, &["pairs.jsonl"]).run(|| {
        build_pairs(&train_dir, config)
    })?;

    // 6. Reward models: vanilla (k = 0) and SAS-regularized.
    let rm_common = |sas_weight: f64, out: PathBuf| TrainRmConfig {
        pairs: train_dir.join("pairs.jsonl"),
        features: Some(train_dir.join(synth_gen::FILE_RESPONSES)),
        mode: RewardMode::Linear,
        sas_weight,
        safety_threshold: config.safety_threshold,
        epochs: config.rm.epochs,
        lr: config.rm.lr,
        batch: config.rm.batch,
        curriculum: config.rm.curriculum,
        seed: config.rm.seed,
        out,
        loss_curve_out: None,
    };
    Stage::new("train-rm-vanilla", &train_dir, resume, &["rm_vanilla.carprm"])
        .run(|| train_rm::run(&rm_common(0.0, train_dir.join("rm_vanilla.carprm"))))?;
    Stage::new("train-rm-carp", &train_dir, resume, &["rm_carp.carprm"])
        .run(|| train_rm::run(&rm_common(config.sas_weight, train_dir.join("rm_carp.carprm"))))?;

    // 7. Evaluation split with `bon_candidates` responses per prompt.
    let mut eval_gen = config.gen.clone();
    eval_gen.seed = config.gen.seed ^ 0xe7a1_5eed;
    eval_gen.n_responses = config.bon_candidates;
    Stage::new("synth-gen-eval", &eval_dir, resume, &[synth_gen::FILE_MANIFEST]).run(|| {
        synth_gen::run(&SynthGenConfig {
            gen: eval_gen.clone(),
            out_dir: eval_dir.clone(),
        })
    })?;
    Stage::new("encode-eval", &eval_dir, resume, &["codes.carpemb"]).run(|| {
        encode::run(&EncodeConfig {
            responses: eval_dir.join(synth_gen::FILE_RESPONSES),
            projection: eval_dir.join(synth_gen::FILE_PROJECTION),
            top_k: eval_gen.top_k,
            out: eval_dir.join("codes.carpemb"),
            clean: Some(eval_dir.join(synth_gen::FILE_CLEAN)),
            ground_truth: Some(eval_dir.join(synth_gen::FILE_GROUND_TRUTH)),
            ground_truth_out: None,
            n_responses: Some(eval_gen.n_responses),
        })
    })?;
    Stage::new("score-sas-eval", &eval_dir, resume, &["sas.jsonl"]).run(|| {
        score_sas::run(&ScoreSasConfig {
            decoder: train_dir.join("decoder.carpdec"),
            codes: eval_dir.join("codes.carpemb"),
            prompts: eval_dir.join(synth_gen::FILE_PROMPTS),
            n_responses: eval_gen.n_responses,
            out: eval_dir.join("sas.jsonl"),
        })
    })?;

    // 8. Candidate sets scored by each reward model.
    Stage::new(
        "build-candidates",
        &eval_dir,
        resume,
        &["candidates_vanilla.jsonl", "candidates_carp.jsonl"],
    )
    .run(|| build_candidates(&eval_dir, &train_dir, &eval_gen, config))?;

    // 9. Best-of-N with and without the SAS adjustment, then the report.
    let vanilla_sets: Vec<BonCandidateSet> = read_jsonl(&eval_dir.join("candidates_vanilla.jsonl"))?;
    let carp_sets: Vec<BonCandidateSet> = read_jsonl(&eval_dir.join("candidates_carp.jsonl"))?;
    let (vanilla_selections, bon_vanilla) = select_all(&vanilla_sets, 0.0)?;
    let (carp_selections, bon_carp) = select_all(&carp_sets, config.sas_weight)?;
    write_jsonl(&eval_dir.join("selections_vanilla.jsonl"), &vanilla_selections)?;
    write_jsonl(&eval_dir.join("selections_carp.jsonl"), &carp_selections)?;

    let decoder = carp::io::read_decoder(&train_dir.join("decoder.carpdec"))?;
    let (_, vanilla_meta) = read_reward(&train_dir.join("rm_vanilla.carprm"))?;
    let (_, carp_meta) = read_reward(&train_dir.join("rm_carp.carprm"))?;
    let report = PipelineReport {
        sas_weight: config.sas_weight,
        decoder_train_residual: decoder.meta.train_loss_final,
        rm_vanilla_final_loss: vanilla_meta.final_loss,
        rm_carp_final_loss: carp_meta.final_loss,
        bon_vanilla,
        bon_carp,
    };
    std::fs::write(
        dir.join("pipeline_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Manifest::new(
        "pipeline",
        config.gen.seed,
        serde_json::to_value(config)?,
        vec![
            "train".into(),
            "eval".into(),
            "pipeline_report.json".into(),
        ],
    )
    .write(&dir.join(synth_gen::FILE_MANIFEST))?;
    Ok(report)
}

fn build_pairs(train_dir: &Path, config: &PipelineConfig) -> anyhow::Result<()> {
    let (responses, _) = read_embedding(&train_dir.join(synth_gen::FILE_RESPONSES))?;
    let (clean, _) = read_embedding(&train_dir.join(synth_gen::FILE_CLEAN))?;
    let sas_records: Vec<SasRecord> = read_jsonl(&train_dir.join("sas.jsonl"))?;
    let m = config.gen.n_responses;
    let direction = hack_direction(config.gen.seed, config.gen.d);

    let sas_of = |prompt: usize, j: usize| sas_records[prompt * m + j].sas;
    let hack_of = |prompt: usize, j: usize| {
        let row = responses.row(prompt * m + j);
        let f = clean.row(prompt);
        let artifact: Vec<f64> = row.iter().zip(f).map(|(y, c)| y - c).collect();
        dot(&direction, &artifact)
    };

    let mut pairs = Vec::with_capacity(config.gen.n_prompts);
    for prompt in 0..config.gen.n_prompts {
        let (a, b) = (0usize, 1usize);
        let (chosen, rejected) = if hack_of(prompt, a) >= hack_of(prompt, b) {
            (a, b)
        } else {
            (b, a)
        };
        pairs.push(PairRecord {
            pair_id: prompt as u64,
            chosen_id: prompt * m + chosen,
            rejected_id: prompt * m + rejected,
            sas_chosen: Some(sas_of(prompt, chosen)),
            sas_rejected: Some(sas_of(prompt, rejected)),
        });
    }
    write_jsonl(&train_dir.join("pairs.jsonl"), &pairs)?;
    Ok(())
}

fn build_candidates(
    eval_dir: &Path,
    train_dir: &Path,
    eval_gen: &carp::causalgen::GenConfig,
    config: &PipelineConfig,
) -> anyhow::Result<()> {
    let (responses, _) = read_embedding(&eval_dir.join(synth_gen::FILE_RESPONSES))?;
    let (clean, _) = read_embedding(&eval_dir.join(synth_gen::FILE_CLEAN))?;
    let sas_records: Vec<SasRecord> = read_jsonl(&eval_dir.join("sas.jsonl"))?;
    let meta_rows: Vec<ResponseMeta> = read_jsonl(&eval_dir.join(synth_gen::FILE_GROUND_TRUTH))?;
    let (rm_vanilla, _) = read_reward(&train_dir.join("rm_vanilla.carprm"))?;
    let (rm_carp, _) = read_reward(&train_dir.join("rm_carp.carprm"))?;
    let direction = hack_direction(config.gen.seed, config.gen.d);
    let m = eval_gen.n_responses;

    let mut vanilla_sets = Vec::with_capacity(eval_gen.n_prompts);
    let mut carp_sets = Vec::with_capacity(eval_gen.n_prompts);
    for prompt in 0..eval_gen.n_prompts {
        let mut vanilla_candidates = Vec::with_capacity(m);
        let mut carp_candidates = Vec::with_capacity(m);
        for j in 0..m {
            let row = prompt * m + j;
            debug_assert_eq!(meta_rows[row].prompt_id, prompt);
            let y = responses.row(row);
            let artifact: Vec<f64> = y.iter().zip(clean.row(prompt)).map(|(a, c)| a - c).collect();
            let hack = dot(&direction, &artifact);
            let sas = sas_records[row].sas;
            vanilla_candidates.push(BonCandidate {
                response_id: j as u64,
                reward: rm_vanilla.score(y, row),
                sas,
                artifact_magnitude: Some(hack),
            });
            carp_candidates.push(BonCandidate {
                response_id: j as u64,
                reward: rm_carp.score(y, row),
                sas,
                artifact_magnitude: Some(hack),
            });
        }
        vanilla_sets.push(BonCandidateSet {
            prompt_id: prompt as u64,
            candidates: vanilla_candidates,
        });
        carp_sets.push(BonCandidateSet {
            prompt_id: prompt as u64,
            candidates: carp_candidates,
        });
    }
    write_jsonl(&eval_dir.join("candidates_vanilla.jsonl"), &vanilla_sets)?;
    write_jsonl(&eval_dir.join("candidates_carp.jsonl"), &carp_sets)?;
    Ok(())
}
