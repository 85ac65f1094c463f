//! Dataset generation: world maps, samples, embedding files, ground-truth
//! sidecar, and the run manifest.

use anyhow::Context;
use std::path::Path;

use carp::causalgen::{build_world, dataset_metadata, sample_dataset, GenConfig};
use carp::io::{write_embedding, write_jsonl, EmbeddingMeta, read_embedding};
use carp::numkit::Matrix;

use crate::config::SynthGenConfig;
use crate::manifest::Manifest;

pub const FILE_PROMPTS: &str = "x.carpemb";
pub const FILE_RESPONSES: &str = "y.carpemb";
pub const FILE_CLEAN: &str = "clean.carpemb";
pub const FILE_PROJECTION: &str = "projection.carpemb";
pub const FILE_GROUND_TRUTH: &str = "ground_truth.jsonl";
pub const FILE_MANIFEST: &str = "manifest.json";

pub fn run(config: &SynthGenConfig) -> anyhow::Result<()> {
    config.gen.validate().context("invalid generator config")?;
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("cannot create {}", config.out_dir.display()))?;

    let world = build_world(&config.gen)?;
    let samples = sample_dataset(&world, &config.gen)?;
    let gen = &config.gen;

    let mut prompts = Matrix::zeros(gen.n_prompts, gen.d_x);
    let mut clean = Matrix::zeros(gen.n_prompts, gen.d);
    let mut responses = Matrix::zeros(gen.n_prompts * gen.n_responses, gen.d);
    let mut prompt_ids = Vec::with_capacity(gen.n_prompts);
    let mut response_ids = Vec::with_capacity(gen.n_prompts * gen.n_responses);
    for sample in &samples {
        prompts.row_mut(sample.prompt_id).copy_from_slice(&sample.x);
        clean.row_mut(sample.prompt_id).copy_from_slice(&sample.f_w);
        prompt_ids.push(sample.prompt_id.to_string());
        for (j, resp) in sample.responses.iter().enumerate() {
            let row = sample.prompt_id * gen.n_responses + j;
            responses.row_mut(row).copy_from_slice(&resp.y);
            response_ids.push(format!("{}:{}", sample.prompt_id, j));
        }
    }

    let out = |name: &str| config.out_dir.join(name);
    let mut meta = EmbeddingMeta::new("carp synth-gen");
    meta.ids = prompt_ids;
    write_embedding(&out(FILE_PROMPTS), &prompts, &meta)?;

    let mut meta = EmbeddingMeta::new("carp synth-gen");
    meta.ids = response_ids;
    write_embedding(&out(FILE_RESPONSES), &responses, &meta)?;

    write_embedding(&out(FILE_CLEAN), &clean, &EmbeddingMeta::new("carp synth-gen"))?;
    write_embedding(
        &out(FILE_PROJECTION),
        &world.p,
        &EmbeddingMeta::new("carp synth-gen"),
    )?;
    write_jsonl(&out(FILE_GROUND_TRUTH), &dataset_metadata(&samples))?;

    Manifest::new(
        "synth-gen",
        gen.seed,
        serde_json::to_value(config)?,
        vec![
            FILE_PROMPTS.into(),
            FILE_RESPONSES.into(),
            FILE_CLEAN.into(),
            FILE_PROJECTION.into(),
            FILE_GROUND_TRUTH.into(),
        ],
    )
    .write(&out(FILE_MANIFEST))?;
    Ok(())
}

/// Loads the generated matrices back; shared by downstream stages and
/// tests.
pub fn load_matrix(path: &Path) -> anyhow::Result<Matrix> {
    Ok(read_embedding(path)?.0)
}

/// Shape sanity check used by tests: declared dimensions of the emitted
/// files against the generator config.
pub fn declared_shapes(dir: &Path, gen: &GenConfig) -> anyhow::Result<bool> {
    let (x, _) = read_embedding(&dir.join(FILE_PROMPTS))?;
    let (y, _) = read_embedding(&dir.join(FILE_RESPONSES))?;
    let (c, _) = read_embedding(&dir.join(FILE_CLEAN))?;
    let (p, _) = read_embedding(&dir.join(FILE_PROJECTION))?;
    Ok(x.rows() == gen.n_prompts
        && x.cols() == gen.d_x
        && y.rows() == gen.n_prompts * gen.n_responses
        && y.cols() == gen.d
        && c.rows() == gen.n_prompts
        && c.cols() == gen.d
        && p.rows() == gen.sae_width
        && p.cols() == gen.d)
}
