//! Prompt decoder: an affine map (L, b) from sparse response codes back to
//! prompt embeddings, fit by least squares. Its reconstruction error is the
//! semantic alignment score (SAS); lower SAS means the response better
//! realizes the prompt's intent.
//!
//! Besides the empirical fits (closed form and SGD), this module computes
//! the ideal artifact-free parameters (L⁰, b⁰) — the population least
//! squares solution on ideal-index codes of clean signals — which serve as
//! the reference point for the decoder concentration checks.

use serde::{Deserialize, Serialize};

use crate::causalgen::{draw_prompt, GenConfig, WorldMaps};
use crate::encoder::{topk_select, SparseCode};
use crate::error::{Error, Result};
use crate::numkit::{self, axpy, norm2, parallel, solve_spd, sq_dist, Matrix, Rng};

const STREAM_IDEAL: u64 = 0x49_4445_414c;

/// How a decoder was produced; stored in the artifact's metadata trailer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecoderMeta {
    pub fit_method: String,
    pub ridge: f64,
    pub epochs: usize,
    pub lr: f64,
    pub train_loss_final: f64,
}

/// Fitted decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Weight matrix, d_x × sae_width.
    pub l: Matrix,
    /// Bias, length d_x.
    pub b: Vec<f64>,
    pub meta: DecoderMeta,
}

impl DecoderParams {
    /// Decoded prompt embedding `L·u + b` using the sparse support of `u`.
    pub fn decode(&self, u: &SparseCode) -> Vec<f64> {
        let mut out = self.b.clone();
        let width = self.l.cols();
        for &(j, v) in &u.kept {
            if v == 0.0 {
                continue;
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o += v * self.l.data()[r * width + j];
            }
        }
        out
    }
}

/// Fitting diagnostics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitReport {
    /// Effective sample count N·M.
    pub nm: usize,
    pub closed_form_residual: Option<f64>,
    /// Full-data objective after each epoch.
    pub sgd_loss_curve: Vec<f64>,
    pub op_distance_to_ideal: Option<f64>,
}

fn check_training_set(codes: &[SparseCode], targets: &[Vec<f64>]) -> Result<(usize, usize, usize)> {
    if codes.is_empty() {
        return Err(Error::Empty {
            context: "decoder fit",
        });
    }
    if codes.len() != targets.len() {
        return Err(Error::DimMismatch {
            context: "decoder fit: codes vs targets",
            expected: codes.len(),
            actual: targets.len(),
        });
    }
    let width = codes[0].dim;
    let d_x = targets[0].len();
    for code in codes {
        if code.dim != width {
            return Err(Error::DimMismatch {
                context: "decoder fit: code width",
                expected: width,
                actual: code.dim,
            });
        }
    }
    for x in targets {
        if x.len() != d_x {
            return Err(Error::DimMismatch {
                context: "decoder fit: target dim",
                expected: d_x,
                actual: x.len(),
            });
        }
    }
    Ok((codes.len(), width, d_x))
}

/// Exact minimizer of the ridge-regularized reconstruction objective
/// `mean ‖L·u + b − x‖² + ridge·‖L‖_F²`.
///
/// Codes and targets are centered, `L̂ = Σ̂_xu (Σ̂_uu + ridge·I)⁻¹` is solved
/// by Cholesky, and the bias is recovered as `b̂ = x̄ − L̂·ū`.
pub fn fit_closed_form(
    codes: &[SparseCode],
    targets: &[Vec<f64>],
    ridge: f64,
) -> Result<DecoderParams> {
    let (n, width, d_x) = check_training_set(codes, targets)?;
    let nf = n as f64;

    let mut mean_u = vec![0.0; width];
    let mut mean_x = vec![0.0; d_x];
    let mut sigma_uu = Matrix::zeros(width, width);
    let mut sigma_xu = Matrix::zeros(d_x, width);
    for (code, x) in codes.iter().zip(targets) {
        axpy(&mut mean_x, 1.0, x);
        for &(j1, v1) in &code.kept {
            mean_u[j1] += v1;
            for &(j2, v2) in &code.kept {
                sigma_uu[(j1, j2)] += v1 * v2;
            }
            for (r, xv) in x.iter().enumerate() {
                sigma_xu[(r, j1)] += xv * v1;
            }
        }
    }
    for v in &mut mean_u {
        *v /= nf;
    }
    for v in &mut mean_x {
        *v /= nf;
    }
    sigma_uu.scale(1.0 / nf);
    sigma_xu.scale(1.0 / nf);
    sigma_uu.add_outer(-1.0, &mean_u, &mean_u);
    sigma_xu.add_outer(-1.0, &mean_x, &mean_u);

    let l = solve_spd(&sigma_uu, &sigma_xu, ridge)?;
    let mut b = mean_x.clone();
    axpy(&mut b, -1.0, &l.matvec(&mean_u));

    let mut params = DecoderParams {
        l,
        b,
        meta: DecoderMeta {
            fit_method: "closed_form".to_string(),
            ridge,
            epochs: 0,
            lr: 0.0,
            train_loss_final: 0.0,
        },
    };
    params.meta.train_loss_final = mean_reconstruction_loss(&params, codes, targets);
    Ok(params)
}

/// Mean squared reconstruction error over a dataset.
pub fn mean_reconstruction_loss(
    params: &DecoderParams,
    codes: &[SparseCode],
    targets: &[Vec<f64>],
) -> f64 {
    let n = codes.len().max(1);
    codes
        .iter()
        .zip(targets)
        .map(|(u, x)| sq_dist(&params.decode(u), x))
        .sum::<f64>()
        / n as f64
}

/// Objective minimized by SGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SgdObjective {
    /// Mean squared reconstruction error (the default downstream choice).
    #[default]
    Mse,
    /// `mean(1 − cos(L·u + b, x))`; alternative objective kept for
    /// comparison studies.
    Cosine,
}

#[derive(Debug, Clone)]
pub struct SgdOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub objective: SgdObjective,
}

/// Minibatch gradient descent on the reconstruction objective with
/// deterministic shuffling. Aborts when the objective exceeds 1e12.
pub fn fit_sgd(
    codes: &[SparseCode],
    targets: &[Vec<f64>],
    opts: &SgdOptions,
) -> Result<(DecoderParams, FitReport)> {
    let (n, width, d_x) = check_training_set(codes, targets)?;
    if opts.lr < 0.0 {
        return Err(Error::InvalidArgument {
            context: "fit_sgd",
            message: format!("lr must be nonnegative, got {}", opts.lr),
        });
    }
    if opts.epochs == 0 || opts.batch == 0 {
        return Err(Error::InvalidArgument {
            context: "fit_sgd",
            message: "epochs and batch must be at least 1".to_string(),
        });
    }

    let mut l = Matrix::zeros(d_x, width);
    let mut b = vec![0.0; d_x];
    if opts.objective == SgdObjective::Cosine {
        // Cosine loss is undefined at the zero prediction; start from the
        // target mean instead.
        for x in targets {
            axpy(&mut b, 1.0 / n as f64, x);
        }
    }

    let mut rng = Rng::from_seed(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut grad_l = Matrix::zeros(d_x, width);
    let mut grad_b = vec![0.0; d_x];

    for _epoch in 0..opts.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch) {
            grad_l.data_mut().fill(0.0);
            grad_b.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let code = &codes[i];
                let x = &targets[i];
                let pred = decode_with(&l, &b, code);
                match opts.objective {
                    SgdObjective::Mse => {
                        // d/dpred ‖pred − x‖² = 2(pred − x)
                        let mut g: Vec<f64> = pred.iter().zip(x).map(|(p, t)| 2.0 * (p - t)).collect();
                        for v in &mut g {
                            *v *= scale;
                        }
                        accumulate(&mut grad_l, &mut grad_b, &g, code);
                    }
                    SgdObjective::Cosine => {
                        let np = norm2(&pred);
                        let nx = norm2(x);
                        if np < 1e-300 || nx < 1e-300 {
                            continue;
                        }
                        let cos = numkit::dot(&pred, x) / (np * nx);
                        // d(1 − cos)/dpred = cos·p/‖p‖² − x/(‖p‖‖x‖)
                        let mut g: Vec<f64> = pred
                            .iter()
                            .zip(x)
                            .map(|(p, t)| cos * p / (np * np) - t / (np * nx))
                            .collect();
                        for v in &mut g {
                            *v *= scale;
                        }
                        accumulate(&mut grad_l, &mut grad_b, &g, code);
                    }
                }
            }
            for (w, g) in l.data_mut().iter_mut().zip(grad_l.data()) {
                *w -= opts.lr * g;
            }
            axpy(&mut b, -opts.lr, &grad_b);
        }

        let params_view = DecoderParams {
            l: l.clone(),
            b: b.clone(),
            meta: DecoderMeta {
                fit_method: String::new(),
                ridge: 0.0,
                epochs: 0,
                lr: 0.0,
                train_loss_final: 0.0,
            },
        };
        let loss = match opts.objective {
            SgdObjective::Mse => mean_reconstruction_loss(&params_view, codes, targets),
            SgdObjective::Cosine => mean_cosine_loss(&params_view, codes, targets),
        };
        if !loss.is_finite() || loss > 1e12 {
            return Err(Error::Diverged {
                context: "fit_sgd",
                loss,
            });
        }
        curve.push(loss);
    }

    let train_loss_final = *curve.last().expect("epochs >= 1");
    let params = DecoderParams {
        l,
        b,
        meta: DecoderMeta {
            fit_method: match opts.objective {
                SgdObjective::Mse => "sgd_mse".to_string(),
                SgdObjective::Cosine => "sgd_cosine".to_string(),
            },
            ridge: 0.0,
            epochs: opts.epochs,
            lr: opts.lr,
            train_loss_final,
        },
    };
    let report = FitReport {
        nm: n,
        closed_form_residual: None,
        sgd_loss_curve: curve,
        op_distance_to_ideal: None,
    };
    Ok((params, report))
}

fn decode_with(l: &Matrix, b: &[f64], code: &SparseCode) -> Vec<f64> {
    let mut out = b.to_vec();
    let width = l.cols();
    for &(j, v) in &code.kept {
        if v == 0.0 {
            continue;
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o += v * l.data()[r * width + j];
        }
    }
    out
}

fn accumulate(grad_l: &mut Matrix, grad_b: &mut [f64], g: &[f64], code: &SparseCode) {
    let width = grad_l.cols();
    for &(j, v) in &code.kept {
        if v == 0.0 {
            continue;
        }
        for (r, gr) in g.iter().enumerate() {
            grad_l.data_mut()[r * width + j] += gr * v;
        }
    }
    axpy(grad_b, 1.0, g);
}

fn mean_cosine_loss(params: &DecoderParams, codes: &[SparseCode], targets: &[Vec<f64>]) -> f64 {
    let n = codes.len().max(1);
    codes
        .iter()
        .zip(targets)
        .map(|(u, x)| {
            let pred = params.decode(u);
            let np = norm2(&pred);
            let nx = norm2(x);
            if np < 1e-300 || nx < 1e-300 {
                1.0
            } else {
                1.0 - numkit::dot(&pred, x) / (np * nx)
            }
        })
        .sum::<f64>()
        / n as f64
}

/// Semantic alignment score: squared reconstruction error of the prompt
/// embedding from the response code. Lower is better aligned.
pub fn sas(params: &DecoderParams, u: &SparseCode, x: &[f64]) -> Result<f64> {
    if u.dim != params.l.cols() {
        return Err(Error::DimMismatch {
            context: "sas: code width",
            expected: params.l.cols(),
            actual: u.dim,
        });
    }
    if x.len() != params.l.rows() {
        return Err(Error::DimMismatch {
            context: "sas: prompt dim",
            expected: params.l.rows(),
            actual: x.len(),
        });
    }
    Ok(sq_dist(&params.decode(u), x))
}

/// Monte-Carlo estimate of the ideal artifact-free parameters
/// `L⁰ = Σ⁰_xu (Σ⁰_uu)⁻¹`, `b⁰ = E[x] − L⁰·E[I_{J_w}s]`, built from ideal
/// indices on clean signals only.
pub fn ideal_params_oracle(
    world: &WorldMaps,
    config: &GenConfig,
    mc_samples: usize,
    threads: usize,
) -> Result<DecoderParams> {
    if mc_samples < 10_000 {
        return Err(Error::InvalidArgument {
            context: "ideal_params_oracle",
            message: format!("need at least 1e4 Monte-Carlo samples, got {mc_samples}"),
        });
    }
    config.validate()?;
    let width = config.sae_width;
    let d_x = config.d_x;
    let k = config.top_k;
    let root = Rng::from_seed(config.seed).substream(STREAM_IDEAL);

    struct BlockStats {
        sigma_uu: Matrix,
        sigma_xu: Matrix,
        sum_u: Vec<f64>,
        sum_x: Vec<f64>,
        sum_xx: f64,
        err: Option<Error>,
    }

    let blocks = parallel::map_blocks(mc_samples, parallel::DEFAULT_BLOCK, threads, |range| {
        let mut stats = BlockStats {
            sigma_uu: Matrix::zeros(width, width),
            sigma_xu: Matrix::zeros(d_x, width),
            sum_u: vec![0.0; width],
            sum_x: vec![0.0; d_x],
            sum_xx: 0.0,
            err: None,
        };
        for t in range {
            let mut rng = root.substream(t as u64);
            let prompt = match draw_prompt(world, config, t, &mut rng) {
                Ok(p) => p,
                Err(e) => {
                    if stats.err.is_none() {
                        stats.err = Some(e);
                    }
                    continue;
                }
            };
            let s = world.p.matvec(&prompt.f_w);
            let ideal = topk_select(&s, k).expect("validated K <= width");
            for &j1 in &ideal {
                stats.sum_u[j1] += s[j1];
                for &j2 in &ideal {
                    stats.sigma_uu[(j1, j2)] += s[j1] * s[j2];
                }
                for (r, xv) in prompt.x.iter().enumerate() {
                    stats.sigma_xu[(r, j1)] += xv * s[j1];
                }
            }
            axpy(&mut stats.sum_x, 1.0, &prompt.x);
            stats.sum_xx += numkit::dot(&prompt.x, &prompt.x);
        }
        stats
    });

    let mut sigma_uu = Matrix::zeros(width, width);
    let mut sigma_xu = Matrix::zeros(d_x, width);
    let mut mean_u = vec![0.0; width];
    let mut mean_x = vec![0.0; d_x];
    let mut sum_xx = 0.0;
    for block in blocks {
        if let Some(e) = block.err {
            return Err(e);
        }
        for (acc, v) in sigma_uu.data_mut().iter_mut().zip(block.sigma_uu.data()) {
            *acc += v;
        }
        for (acc, v) in sigma_xu.data_mut().iter_mut().zip(block.sigma_xu.data()) {
            *acc += v;
        }
        axpy(&mut mean_u, 1.0, &block.sum_u);
        axpy(&mut mean_x, 1.0, &block.sum_x);
        sum_xx += block.sum_xx;
    }
    let nf = mc_samples as f64;
    sigma_uu.scale(1.0 / nf);
    sigma_xu.scale(1.0 / nf);
    for v in &mut mean_u {
        *v /= nf;
    }
    for v in &mut mean_x {
        *v /= nf;
    }

    let l = solve_spd(&sigma_uu, &sigma_xu, 0.0).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, index } => Error::DegenerateInput {
            context: "ideal_params_oracle",
            message: format!(
                "ideal second-moment matrix numerically singular (pivot {pivot} at {index}); increase mc_samples or add ridge"
            ),
        },
        other => other,
    })?;
    let mut b = mean_x.clone();
    axpy(&mut b, -1.0, &l.matvec(&mean_u));

    // Population residual from the accumulated moments:
    // E‖Lv + b − x‖² = tr(LΣuuLᵀ) + 2bᵀLE[v] + ‖b‖² − 2⟨L, Σxu⟩ − 2bᵀE[x] + E‖x‖².
    let l_suu = l.matmul(&sigma_uu);
    let tr_l_suu_lt: f64 = l_suu.data().iter().zip(l.data()).map(|(a, c)| a * c).sum();
    let cross: f64 = l.data().iter().zip(sigma_xu.data()).map(|(a, c)| a * c).sum();
    let ex_xx = sum_xx / nf;
    let lmu = l.matvec(&mean_u);
    let residual = tr_l_suu_lt + 2.0 * numkit::dot(&b, &lmu) + numkit::dot(&b, &b)
        - 2.0 * cross
        - 2.0 * numkit::dot(&b, &mean_x)
        + ex_xx;

    Ok(DecoderParams {
        l,
        b,
        meta: DecoderMeta {
            fit_method: "ideal_oracle".to_string(),
            ridge: 0.0,
            epochs: 0,
            lr: 0.0,
            train_loss_final: residual.max(0.0),
        },
    })
}

/// Operator-norm distance of the weights and Euclidean distance of the
/// biases between a fitted decoder and the ideal one.
pub fn concentration_report(fitted: &DecoderParams, ideal: &DecoderParams) -> Result<(f64, f64)> {
    if fitted.l.rows() != ideal.l.rows() || fitted.l.cols() != ideal.l.cols() {
        return Err(Error::DimMismatch {
            context: "concentration_report: L",
            expected: ideal.l.rows() * ideal.l.cols(),
            actual: fitted.l.rows() * fitted.l.cols(),
        });
    }
    if fitted.b.len() != ideal.b.len() {
        return Err(Error::DimMismatch {
            context: "concentration_report: b",
            expected: ideal.b.len(),
            actual: fitted.b.len(),
        });
    }
    let dl = fitted.l.sub(&ideal.l);
    let dl_op = if dl.frobenius_norm() == 0.0 {
        0.0
    } else {
        numkit::operator_norm_default(&dl)?
    };
    let db: Vec<f64> = fitted.b.iter().zip(&ideal.b).map(|(a, c)| a - c).collect();
    Ok((dl_op, norm2(&db)))
}

/// Default ridge used by the fitting pipeline:
/// `1e−6 · trace(Σ̂_uu)/sae_width`, computed from the codes.
pub fn default_ridge(codes: &[SparseCode]) -> f64 {
    if codes.is_empty() {
        return 0.0;
    }
    let n = codes.len() as f64;
    let width = codes[0].dim.max(1) as f64;
    let trace: f64 = codes
        .iter()
        .flat_map(|c| c.kept.iter().map(|(_, v)| v * v))
        .sum::<f64>()
        / n;
    1e-6 * trace / width
}
