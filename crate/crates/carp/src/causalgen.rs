//! Synthetic generator for the structural model behind the pipeline.
//!
//! A latent intention `w` drives both the prompt embedding `x = A_xw·w` and
//! the clean response signal `f(w)`; an independent artifact `z` adds
//! `g(z)`, giving the response embedding `y = f(w) + g(z)`. Margin and
//! artifact scale are controllable, so the flip-probability and decoder
//! concentration guarantees can be exercised in regimes where their
//! assumptions hold or deliberately fail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{norm2, Matrix, Rng};

const STREAM_WORLD: u64 = 0x57_4f52_4c44; // namespace for map initialization
const STREAM_DATA: u64 = 0x44_4154_41; // namespace for dataset sampling

/// Minimum TopK margin of the raw clean signal relative to its RMS
/// coordinate size. Margins are enforced by rescaling the whole signal,
/// and the rescale factor is the reciprocal of the raw margin; without a
/// floor that factor is heavy-tailed (adjacent order statistics can be
/// arbitrarily close), which would push code second moments far beyond
/// what the decoder guarantees assume. Draws below the floor are
/// rejected and resampled.
pub const RELATIVE_MARGIN_FLOOR: f64 = 0.05;

const MARGIN_RESAMPLE_LIMIT: usize = 10_000;

/// Elementwise response map applied after the linear maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Linear,
    Tanh,
}

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Prompt embedding dimension.
    pub d_x: usize,
    /// Latent intention dimension.
    pub d_w: usize,
    /// Latent artifact dimension.
    pub d_z: usize,
    /// Response embedding dimension.
    pub d: usize,
    /// Projection width (rows of P).
    pub sae_width: usize,
    /// Number of coordinates kept by TopK selection.
    pub top_k: usize,
    /// Number of prompts N.
    pub n_prompts: usize,
    /// Responses per prompt M.
    pub n_responses: usize,
    /// Artifact scale sigma (the z sampler is Gaussian, so this is also its
    /// exact sub-Gaussian parameter).
    pub sigma_z: f64,
    /// When positive, each prompt's clean signal is rescaled so its TopK
    /// margin equals this value.
    pub margin_target: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    /// Force the signal map to the identity (requires d == d_w).
    #[serde(default)]
    pub force_identity_f: bool,
    /// Force the artifact map to the identity (requires d == d_z).
    #[serde(default)]
    pub force_identity_g: bool,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_x", self.d_x),
            ("d_w", self.d_w),
            ("d_z", self.d_z),
            ("d", self.d),
            ("sae_width", self.sae_width),
            ("top_k", self.top_k),
            ("n_prompts", self.n_prompts),
            ("n_responses", self.n_responses),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument {
                    context: "GenConfig",
                    message: format!("{name} must be at least 1"),
                });
            }
        }
        if self.top_k > self.sae_width {
            return Err(Error::InvalidArgument {
                context: "GenConfig",
                message: format!(
                    "top_k ({}) must not exceed sae_width ({})",
                    self.top_k, self.sae_width
                ),
            });
        }
        if self.top_k == self.sae_width && self.margin_target > 0.0 {
            return Err(Error::InvalidArgument {
                context: "GenConfig",
                message: "a margin target requires top_k < sae_width".to_string(),
            });
        }
        if !(self.sigma_z.is_finite() && self.sigma_z >= 0.0) {
            return Err(Error::InvalidArgument {
                context: "GenConfig",
                message: format!("sigma_z must be finite and nonnegative, got {}", self.sigma_z),
            });
        }
        if !(self.margin_target.is_finite() && self.margin_target >= 0.0) {
            return Err(Error::InvalidArgument {
                context: "GenConfig",
                message: format!(
                    "margin_target must be finite and nonnegative, got {}",
                    self.margin_target
                ),
            });
        }
        if self.force_identity_f && self.d != self.d_w {
            return Err(Error::InvalidArgument {
                context: "GenConfig",
                message: "force_identity_f requires d == d_w".to_string(),
            });
        }
        if self.force_identity_g && self.d != self.d_z {
            return Err(Error::InvalidArgument {
                context: "GenConfig",
                message: "force_identity_g requires d == d_z".to_string(),
            });
        }
        Ok(())
    }
}

/// The fixed maps of one world instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMaps {
    /// Prompt map, d_x × d_w.
    pub a_xw: Matrix,
    /// Signal map, d × d_w.
    pub a_f: Matrix,
    /// Artifact map, d × d_z, columns centered and scaled to unit operator
    /// norm so `sigma_z` bounds the per-coordinate sub-Gaussian parameter
    /// of the projected artifact.
    pub a_g: Matrix,
    /// Projection, sae_width × d, rows of unit Euclidean norm.
    pub p: Matrix,
}

/// One response: artifact draw and the resulting embedding.
#[derive(Debug, Clone)]
pub struct ResponseSample {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

/// One prompt with its ground truth and responses.
#[derive(Debug, Clone)]
pub struct PromptSample {
    pub prompt_id: usize,
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    /// Clean signal f(w); every response satisfies y − f_w = g(z) exactly.
    pub f_w: Vec<f64>,
    /// TopK margin of P·f_w.
    pub margin: f64,
    pub responses: Vec<ResponseSample>,
}

/// Ground-truth sidecar record for one generated response. The flip flag is
/// filled by the encode stage, not at generation time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResponseMeta {
    pub prompt_id: usize,
    pub response_index: usize,
    pub z_norm: f64,
    pub margin: f64,
    #[serde(default)]
    pub flipped: Option<bool>,
}

/// Draws the world maps for `config`, deterministically in the seed.
pub fn build_world(config: &GenConfig) -> Result<WorldMaps> {
    config.validate()?;
    let root = Rng::from_seed(config.seed).substream(STREAM_WORLD);

    let scale_w = 1.0 / (config.d_w as f64).sqrt();
    let a_xw = gaussian_matrix(config.d_x, config.d_w, scale_w, &mut root.substream(0));

    let a_f = if config.force_identity_f {
        Matrix::identity(config.d)
    } else {
        gaussian_matrix(config.d, config.d_w, scale_w, &mut root.substream(1))
    };

    let a_g = if config.force_identity_g {
        Matrix::identity(config.d)
    } else {
        let mut m = gaussian_matrix(config.d, config.d_z, 1.0, &mut root.substream(2));
        center_columns(&mut m);
        let op = crate::numkit::operator_norm_default(&m)?;
        if op > 0.0 {
            m.scale(1.0 / op);
        }
        m
    };

    let mut p = gaussian_matrix(config.sae_width, config.d, 1.0, &mut root.substream(3));
    for r in 0..p.rows() {
        let n = norm2(p.row(r));
        if n > 0.0 {
            for v in p.row_mut(r) {
                *v /= n;
            }
        }
    }

    Ok(WorldMaps { a_xw, a_f, a_g, p })
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols, scale))
        .expect("gaussian entries are finite")
}

fn center_columns(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for c in 0..cols {
        let mean = (0..rows).map(|r| m[(r, c)]).sum::<f64>() / rows as f64;
        for r in 0..rows {
            m[(r, c)] -= mean;
        }
    }
}

/// Gap between the K-th and (K+1)-th largest magnitudes of `s`.
pub fn compute_margin(s: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k >= s.len() {
        return Err(Error::InvalidArgument {
            context: "compute_margin",
            message: format!("need 1 <= K < dim, got K={k} dim={}", s.len()),
        });
    }
    let mut mags: Vec<f64> = s.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(mags[k - 1] - mags[k])
}

fn raw_clean_signal(world: &WorldMaps, config: &GenConfig, w: &[f64]) -> Vec<f64> {
    let mut f_w = if config.force_identity_f {
        w.to_vec()
    } else {
        world.a_f.matvec(w)
    };
    if config.nonlinearity == Nonlinearity::Tanh {
        for v in &mut f_w {
            *v = v.tanh();
        }
    }
    f_w
}

fn prompt_embedding(world: &WorldMaps, config: &GenConfig, w: &[f64]) -> Vec<f64> {
    let mut x = world.a_xw.matvec(w);
    if config.nonlinearity == Nonlinearity::Tanh {
        for v in &mut x {
            *v = v.tanh();
        }
    }
    x
}

/// Intention, prompt embedding, and margin-adjusted clean signal for one
/// prompt, drawn from `rng`. Margin enforcement rescales the whole signal
/// and resamples latents whose raw relative margin falls below
/// [`RELATIVE_MARGIN_FLOOR`].
pub(crate) fn draw_prompt(
    world: &WorldMaps,
    config: &GenConfig,
    prompt_id: usize,
    rng: &mut Rng,
) -> Result<PromptSample> {
    if config.margin_target > 0.0 {
        for _ in 0..MARGIN_RESAMPLE_LIMIT {
            let w = rng.normal_vec(config.d_w, 1.0);
            let mut f_w = raw_clean_signal(world, config, &w);
            let s = world.p.matvec(&f_w);
            let m = compute_margin(&s, config.top_k)?;
            let rms = (crate::numkit::dot(&s, &s) / s.len() as f64).sqrt();
            if m <= 0.0 || m < RELATIVE_MARGIN_FLOOR * rms {
                continue;
            }
            let alpha = config.margin_target / m;
            for v in &mut f_w {
                *v *= alpha;
            }
            let margin = compute_margin(&world.p.matvec(&f_w), config.top_k)?;
            let x = prompt_embedding(world, config, &w);
            return Ok(PromptSample {
                prompt_id,
                w,
                x,
                f_w,
                margin,
                responses: Vec::new(),
            });
        }
        return Err(Error::DegenerateInput {
            context: "sample_dataset",
            message: format!(
                "prompt {prompt_id}: no latent with usable TopK margin after {MARGIN_RESAMPLE_LIMIT} draws (signal has too few distinct magnitudes); cannot rescale to margin_target"
            ),
        });
    }

    let w = rng.normal_vec(config.d_w, 1.0);
    let f_w = raw_clean_signal(world, config, &w);
    let margin = if config.top_k < config.sae_width {
        compute_margin(&world.p.matvec(&f_w), config.top_k)?
    } else {
        // Full-width selection can never drop a coordinate.
        f64::INFINITY
    };
    let x = prompt_embedding(world, config, &w);
    Ok(PromptSample {
        prompt_id,
        w,
        x,
        f_w,
        margin,
        responses: Vec::new(),
    })
}

/// Off-intent variant of a prompt's clean signal: the latent is mixed with
/// a fresh draw by `gamma ∈ [0, 1]`, mapped through the signal path, and
/// scaled back to the clean signal's norm so only the direction carries
/// the corruption. Returns the corrupted clean signal and the latent
/// corruption magnitude ‖w − w_mix‖.
pub fn corrupt_intent(
    world: &WorldMaps,
    config: &GenConfig,
    prompt: &PromptSample,
    gamma: f64,
    rng: &mut Rng,
) -> (Vec<f64>, f64) {
    let w_other = rng.normal_vec(config.d_w, 1.0);
    let w_mix: Vec<f64> = prompt
        .w
        .iter()
        .zip(&w_other)
        .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
        .collect();
    let mut f_mix = raw_clean_signal(world, config, &w_mix);
    let norm_clean = norm2(&prompt.f_w);
    let norm_mix = norm2(&f_mix);
    if norm_mix > 0.0 {
        let scale = norm_clean / norm_mix;
        for v in &mut f_mix {
            *v *= scale;
        }
    }
    let dw: Vec<f64> = prompt.w.iter().zip(&w_mix).map(|(a, b)| a - b).collect();
    (f_mix, norm2(&dw))
}

/// Artifact draw: latent `z` and its mapped contribution `g(z)`.
pub(crate) fn draw_artifact(world: &WorldMaps, config: &GenConfig, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let z = rng.normal_vec(config.d_z, config.sigma_z);
    let mut gz = if config.force_identity_g {
        z.clone()
    } else {
        world.a_g.matvec(&z)
    };
    if config.nonlinearity == Nonlinearity::Tanh {
        for v in &mut gz {
            *v = v.tanh();
        }
    }
    (z, gz)
}

/// Samples the full dataset: N prompts with M responses each, one
/// counter-based substream per prompt.
pub fn sample_dataset(world: &WorldMaps, config: &GenConfig) -> Result<Vec<PromptSample>> {
    config.validate()?;
    let root = Rng::from_seed(config.seed).substream(STREAM_DATA);
    let mut out = Vec::with_capacity(config.n_prompts);
    for i in 0..config.n_prompts {
        let mut rng = root.substream(i as u64);
        let mut prompt = draw_prompt(world, config, i, &mut rng)?;
        prompt.responses = (0..config.n_responses)
            .map(|_| {
                let (z, gz) = draw_artifact(world, config, &mut rng);
                let y = prompt.f_w.iter().zip(&gz).map(|(f, g)| f + g).collect();
                ResponseSample { z, y }
            })
            .collect();
        out.push(prompt);
    }
    Ok(out)
}

/// Sidecar metadata rows for a dataset, with the flip flag left unfilled.
pub fn dataset_metadata(samples: &[PromptSample]) -> Vec<ResponseMeta> {
    samples
        .iter()
        .flat_map(|prompt| {
            prompt.responses.iter().enumerate().map(|(j, resp)| ResponseMeta {
                prompt_id: prompt.prompt_id,
                response_index: j,
                z_norm: norm2(&resp.z),
                margin: prompt.margin,
                flipped: None,
            })
        })
        .collect()
}
