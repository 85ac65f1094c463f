//! Empirical verification of the pipeline's guarantees on the synthetic
//! causal model: the flip-probability bound, the no-flip sufficient
//! condition, decoder concentration toward the ideal parameters, artifact
//! independence of SAS predictions, reward-gradient correctness, and the
//! ATE identity. Each check reports measured quantities next to the bound
//! or tolerance it is judged against.

use serde::{Deserialize, Serialize};

use crate::causalgen::{build_world, sample_dataset, GenConfig, Nonlinearity};
use crate::decoder::{
    concentration_report, default_ridge, fit_closed_form, ideal_params_oracle, sas,
};
use crate::encoder::{detect_flip, encode, estimate_pflip, pflip_bound};
use crate::error::{Error, Result};
use crate::eval::{correlation_report};
use crate::numkit::{norm2, norm_inf, Rng};
use crate::reward::{
    ate_estimate, batch_grad, batch_loss, fit_converged, PreferencePair, RewardMode, RewardParams,
};

/// Reference operating point: projection width 64, K = 8, margin δ = 2,
/// artifact scale σ = 1, with an identity artifact map so σ is exactly the
/// per-coordinate sub-Gaussian parameter.
pub fn reference_config(seed: u64) -> GenConfig {
    GenConfig {
        d_x: 16,
        d_w: 16,
        d_z: 32,
        d: 32,
        sae_width: 64,
        top_k: 8,
        n_prompts: 1000,
        n_responses: 4,
        sigma_z: 1.0,
        margin_target: 2.0,
        nonlinearity: Nonlinearity::Linear,
        force_identity_f: false,
        force_identity_g: true,
        seed,
    }
}

/// Low-flip variant of the reference world (margin 6σ), used wherever a
/// check assumes flips are rare.
pub fn low_flip_config(seed: u64) -> GenConfig {
    let mut config = reference_config(seed);
    config.margin_target = 6.0;
    config
}

/// Flip frequency of the reference configuration measured by a
/// pre-registered 1e5-trial run (see `tests/data/reference_frozen.json`;
/// reproduce with the ignored `reference_pflip_preregistration_run` test).
pub const FROZEN_REFERENCE_PFLIP: f64 = 0.1235;
/// 95% half-width of the pre-registered estimate.
pub const FROZEN_REFERENCE_PFLIP_CI: f64 = 0.002039226707357473;

/// One (δ/σ, σ) grid point of the bound-dominance check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlipGridPoint {
    pub ratio: f64,
    pub sigma: f64,
    pub delta: f64,
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlipGridReport {
    pub trials_per_point: usize,
    pub points: Vec<FlipGridPoint>,
    pub passed: bool,
}

/// Bound dominance over a 4×4 grid: margin-to-noise ratios {2, 4, 6, 8}
/// at four noise scales. At every point `p_hat − 3·CI ≤ 2k·exp(−δ²/8σ²)`
/// must hold.
pub fn flip_grid_check(trials_per_point: usize, seed: u64, threads: usize) -> Result<FlipGridReport> {
    let ratios = [2.0, 4.0, 6.0, 8.0];
    let sigmas = [0.5, 1.0, 2.0, 4.0];
    let mut points = Vec::with_capacity(16);
    for (i, &ratio) in ratios.iter().enumerate() {
        for (j, &sigma) in sigmas.iter().enumerate() {
            let delta = ratio * sigma;
            let mut config = reference_config(seed.wrapping_add((i * 4 + j) as u64));
            config.sigma_z = sigma;
            config.margin_target = delta;
            let world = build_world(&config)?;
            let (p_hat, ci_halfwidth) = estimate_pflip(&world, &config, trials_per_point, threads)?;
            let bound = pflip_bound(config.sae_width, delta, sigma)?;
            points.push(FlipGridPoint {
                ratio,
                sigma,
                delta,
                p_hat,
                ci_halfwidth,
                bound,
                passed: p_hat - 3.0 * ci_halfwidth <= bound,
            });
        }
    }
    let passed = points.iter().all(|p| p.passed);
    Ok(FlipGridReport {
        trials_per_point,
        points,
        passed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoFlipReport {
    pub trials: usize,
    pub flips: usize,
    pub passed: bool,
}

/// Deterministic no-flip condition: perturbations with `‖Pη‖∞ < δ/2` under
/// an enforced margin δ can never change the TopK set. Exact, not
/// statistical: a single flip fails the check.
pub fn deterministic_no_flip_check(trials: usize, seed: u64) -> Result<NoFlipReport> {
    let config = reference_config(seed);
    let world = build_world(&config)?;
    let root = Rng::from_seed(seed).substream(0x4e_4f46_4c49);
    let mut flips = 0usize;
    for t in 0..trials {
        let mut rng = root.substream(t as u64);
        let prompt = crate::causalgen::draw_prompt(&world, &config, t, &mut rng)?;
        let mut eta = rng.normal_vec(config.d, 1.0);
        let m = norm_inf(&world.p.matvec(&eta));
        if m == 0.0 {
            continue;
        }
        let scale = 0.499 * prompt.margin / m;
        for e in &mut eta {
            *e *= scale;
        }
        let y: Vec<f64> = prompt.f_w.iter().zip(&eta).map(|(f, e)| f + e).collect();
        if detect_flip(&world.p, &prompt.f_w, &y, config.top_k)?.flipped {
            flips += 1;
        }
    }
    Ok(NoFlipReport {
        trials,
        flips,
        passed: flips == 0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationCheckReport {
    pub pflip_hat: f64,
    /// (seed, ‖L̂−L⁰‖_op at small NM, at large NM).
    pub per_seed: Vec<(u64, f64, f64)>,
    pub median_small: f64,
    pub median_large: f64,
    pub ratio: f64,
    pub nm_small: usize,
    pub nm_large: usize,
    pub passed: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Concentration of the fitted decoder toward the ideal parameters: with a
/// fixed low-flip world, the median over seeds of `‖L̂ − L⁰‖_op` at the
/// large sample count must fall below half its small-sample value.
pub fn concentration_check(
    nm_small: usize,
    nm_large: usize,
    n_seeds: u64,
    seed: u64,
    threads: usize,
) -> Result<ConcentrationCheckReport> {
    let base = low_flip_config(seed);
    let world = build_world(&base)?;

    // Regime precondition: flips must be rare for the ideal comparison to
    // be meaningful.
    let (pflip_hat, _) = estimate_pflip(&world, &base, 10_000, threads)?;
    if pflip_hat >= 1e-3 {
        return Err(Error::InvalidArgument {
            context: "concentration_check",
            message: format!("world is not in the low-flip regime: p_hat = {pflip_hat}"),
        });
    }

    let ideal = ideal_params_oracle(&world, &base, 400_000, threads)?;

    let m = base.n_responses;
    let mut per_seed = Vec::new();
    let mut small = Vec::new();
    let mut large = Vec::new();
    for s in 0..n_seeds {
        let mut dl_by_size = [0.0; 2];
        for (slot, nm) in [nm_small, nm_large].into_iter().enumerate() {
            let mut config = base.clone();
            config.n_prompts = nm.div_ceil(m);
            config.seed = seed ^ (0x5eed_0000 + s * 2 + slot as u64);
            let data = sample_dataset(&world, &config)?;
            let mut codes = Vec::with_capacity(nm);
            let mut targets = Vec::with_capacity(nm);
            for prompt in &data {
                for resp in &prompt.responses {
                    codes.push(encode(&world.p, &resp.y, config.top_k)?);
                    targets.push(prompt.x.clone());
                }
            }
            let fitted = fit_closed_form(&codes, &targets, default_ridge(&codes))?;
            let (dl_op, _) = concentration_report(&fitted, &ideal)?;
            dl_by_size[slot] = dl_op;
        }
        per_seed.push((s, dl_by_size[0], dl_by_size[1]));
        small.push(dl_by_size[0]);
        large.push(dl_by_size[1]);
    }
    let median_small = median(&mut small);
    let median_large = median(&mut large);
    let ratio = median_large / median_small;
    Ok(ConcentrationCheckReport {
        pflip_hat,
        per_seed,
        median_small,
        median_large,
        ratio,
        nm_small,
        nm_large,
        passed: ratio < 0.5,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionIndependenceReport {
    pub n: usize,
    pub r_artifact: f64,
    pub p_artifact: f64,
    pub r_corruption: f64,
    pub passed: bool,
}

/// Artifact independence of SAS on fresh samples: correlation with the
/// artifact magnitude ‖z‖ stays inside (−0.1, 0.1) while correlation with
/// an intent-corruption magnitude exceeds 0.5.
pub fn prediction_independence_check(
    n_fresh: usize,
    seed: u64,
    threads: usize,
) -> Result<PredictionIndependenceReport> {
    let _ = threads;
    let config = low_flip_config(seed);
    let world = build_world(&config)?;

    // Train the decoder on an ordinary dataset from this world.
    let data = sample_dataset(&world, &config)?;
    let mut codes = Vec::new();
    let mut targets = Vec::new();
    for prompt in &data {
        for resp in &prompt.responses {
            codes.push(encode(&world.p, &resp.y, config.top_k)?);
            targets.push(prompt.x.clone());
        }
    }
    let params = fit_closed_form(&codes, &targets, default_ridge(&codes))?;

    // Fresh prompts with fresh artifacts.
    let mut fresh = config.clone();
    fresh.seed = seed ^ 0xf4e5;
    fresh.n_prompts = n_fresh;
    fresh.n_responses = 1;
    let fresh_data = sample_dataset(&world, &fresh)?;

    let mut sas_values = Vec::with_capacity(n_fresh);
    let mut z_norms = Vec::with_capacity(n_fresh);
    for prompt in &fresh_data {
        let resp = &prompt.responses[0];
        let code = encode(&world.p, &resp.y, config.top_k)?;
        sas_values.push(sas(&params, &code, &prompt.x)?);
        z_norms.push(norm2(&resp.z));
    }
    let artifact = correlation_report(&sas_values, &z_norms, "z_norm")?;

    // Intent corruption: rebuild each clean signal from a mixed latent
    // while keeping the original prompt embedding as the SAS target. The
    // corrupted response carries an ordinary artifact draw.
    let mut rng = Rng::from_seed(seed ^ 0xc0de);
    let mut sas_corrupt = Vec::with_capacity(n_fresh);
    let mut magnitudes = Vec::with_capacity(n_fresh);
    for prompt in &fresh_data {
        let gamma = rng.uniform();
        let (f_mix, magnitude) =
            crate::causalgen::corrupt_intent(&world, &config, prompt, gamma, &mut rng);
        let (_, gz) = crate::causalgen::draw_artifact(&world, &config, &mut rng);
        let y: Vec<f64> = f_mix.iter().zip(&gz).map(|(f, g)| f + g).collect();
        let code = encode(&world.p, &y, config.top_k)?;
        sas_corrupt.push(sas(&params, &code, &prompt.x)?);
        magnitudes.push(magnitude);
    }
    let corruption = correlation_report(&sas_corrupt, &magnitudes, "corruption")?;

    Ok(PredictionIndependenceReport {
        n: n_fresh,
        r_artifact: artifact.r,
        p_artifact: artifact.p_value,
        r_corruption: corruption.r,
        passed: artifact.r.abs() < 0.1 && corruption.r > 0.5,
    })
}

/// Deterministic generator of preference-pair instances with mixed
/// outcomes over a small response pool, for gradient and identity checks.
pub fn synthetic_preference_pairs(
    n_pairs: usize,
    n_responses: usize,
    d_phi: usize,
    seed: u64,
) -> Vec<PreferencePair> {
    let mut rng = Rng::from_seed(seed);
    let features: Vec<Vec<f64>> = (0..n_responses)
        .map(|_| rng.normal_vec(d_phi, 1.0))
        .collect();
    let sas: Vec<f64> = (0..n_responses).map(|_| rng.uniform()).collect();
    let mut pairs = Vec::with_capacity(n_pairs);
    for pid in 0..n_pairs {
        let a = rng.below(n_responses);
        let mut b = rng.below(n_responses);
        if b == a {
            b = (b + 1) % n_responses;
        }
        let (c, r) = if rng.uniform() < 0.5 { (a, b) } else { (b, a) };
        pairs.push(PreferencePair {
            pair_id: pid as u64,
            chosen_id: c,
            rejected_id: r,
            features_chosen: features[c].clone(),
            features_rejected: features[r].clone(),
            sas_chosen: sas[c],
            sas_rejected: sas[r],
        });
    }
    pairs
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub instances: usize,
    pub max_rel_err_linear: f64,
    pub max_rel_err_tabular: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Analytic gradients against central finite differences (step 1e−6) on
/// random instances in both reward modes.
pub fn gradient_check(instances: usize, seed: u64) -> Result<GradientCheckReport> {
    let step = 1e-6;
    let tolerance = 1e-5;
    let root = Rng::from_seed(seed);
    let mut max_linear = 0.0_f64;
    let mut max_tabular = 0.0_f64;
    for i in 0..instances {
        let mut rng = root.substream(i as u64);
        let pairs = synthetic_preference_pairs(12, 6, 4, seed ^ (i as u64 + 1));
        let k_eff = rng.uniform() * 2.0;
        for mode in [RewardMode::Linear, RewardMode::Tabular] {
            let dim = match mode {
                RewardMode::Linear => 4,
                RewardMode::Tabular => crate::reward::table_size(&pairs),
            };
            let params = RewardParams {
                mode,
                theta: rng.normal_vec(dim, 0.5),
            };
            let analytic = batch_grad(&params, &pairs, k_eff, f64::INFINITY)?;
            let mut numeric = vec![0.0; dim];
            for (j, n) in numeric.iter_mut().enumerate() {
                let mut plus = params.clone();
                plus.theta[j] += step;
                let mut minus = params.clone();
                minus.theta[j] -= step;
                *n = (batch_loss(&plus, &pairs, k_eff, f64::INFINITY)
                    - batch_loss(&minus, &pairs, k_eff, f64::INFINITY))
                    / (2.0 * step);
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let rel = diff / norm2(&numeric).max(1e-12);
            match mode {
                RewardMode::Linear => max_linear = max_linear.max(rel),
                RewardMode::Tabular => max_tabular = max_tabular.max(rel),
            }
        }
    }
    Ok(GradientCheckReport {
        instances,
        max_rel_err_linear: max_linear,
        max_rel_err_tabular: max_tabular,
        tolerance,
        passed: max_linear < tolerance && max_tabular < tolerance,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteCheckReport {
    pub k: f64,
    pub direct: f64,
    pub definitional: f64,
    pub recomputed_from_fits: f64,
    pub passed: bool,
}

/// The ATE identity: the estimator equals `k·mean(s_r − s_c)` exactly, and
/// the difference of mean reward gaps between converged regularized and
/// vanilla tabular fits reproduces it within optimizer tolerance.
pub fn ate_check(seed: u64) -> Result<AteCheckReport> {
    let k = 0.7;
    let pairs = synthetic_preference_pairs(40, 8, 2, seed);
    let direct = ate_estimate(&pairs, k);
    let definitional = k
        * pairs
            .iter()
            .map(|p| p.sas_rejected - p.sas_chosen)
            .sum::<f64>()
        / pairs.len() as f64;

    let vanilla = fit_converged(&pairs, 0.0, f64::INFINITY, RewardMode::Tabular, 1e-10, 2_000_000)?;
    let regularized = fit_converged(&pairs, k, f64::INFINITY, RewardMode::Tabular, 1e-10, 2_000_000)?;
    let mean_gap = |params: &RewardParams| {
        pairs
            .iter()
            .map(|p| params.theta[p.chosen_id] - params.theta[p.rejected_id])
            .sum::<f64>()
            / pairs.len() as f64
    };
    let recomputed = mean_gap(&regularized) - mean_gap(&vanilla);
    let passed = direct == definitional && (recomputed - direct).abs() < 2e-6;
    Ok(AteCheckReport {
        k,
        direct,
        definitional,
        recomputed_from_fits: recomputed,
        passed,
    })
}

/// Everything `verify-theory` runs, with one pass flag per property.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub no_flip: NoFlipReport,
    pub flip_grid: FlipGridReport,
    pub concentration: ConcentrationCheckReport,
    pub prediction_independence: PredictionIndependenceReport,
    pub gradient: GradientCheckReport,
    pub ate: AteCheckReport,
    pub passed: bool,
}

impl TheoryReport {
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.no_flip.passed {
            out.push("no_flip");
        }
        if !self.flip_grid.passed {
            out.push("flip_grid");
        }
        if !self.concentration.passed {
            out.push("concentration");
        }
        if !self.prediction_independence.passed {
            out.push("prediction_independence");
        }
        if !self.gradient.passed {
            out.push("gradient");
        }
        if !self.ate.passed {
            out.push("ate");
        }
        out
    }

    /// One CSV row per property: name, measured, reference, passed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("property,measured,reference,passed\n");
        out.push_str(&format!(
            "no_flip,{} flips,0 flips,{}\n",
            self.no_flip.flips, self.no_flip.passed
        ));
        let worst = self
            .flip_grid
            .points
            .iter()
            .map(|p| p.p_hat - 3.0 * p.ci_halfwidth - p.bound)
            .fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!(
            "flip_grid,max(p_hat-3ci-bound)={worst},<=0,{}\n",
            self.flip_grid.passed
        ));
        out.push_str(&format!(
            "concentration,ratio={},<0.5,{}\n",
            self.concentration.ratio, self.concentration.passed
        ));
        out.push_str(&format!(
            "prediction_independence,r_artifact={} r_corruption={},|r|<0.1 and r>0.5,{}\n",
            self.prediction_independence.r_artifact,
            self.prediction_independence.r_corruption,
            self.prediction_independence.passed
        ));
        out.push_str(&format!(
            "gradient,max_rel_err={},<1e-5,{}\n",
            self.gradient
                .max_rel_err_linear
                .max(self.gradient.max_rel_err_tabular),
            self.gradient.passed
        ));
        out.push_str(&format!(
            "ate,|recomputed-direct|={},<2e-6,{}\n",
            (self.ate.recomputed_from_fits - self.ate.direct).abs(),
            self.ate.passed
        ));
        out
    }
}

/// Scale knobs for [`verify_all`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryScale {
    pub no_flip_trials: usize,
    pub grid_trials: usize,
    pub nm_small: usize,
    pub nm_large: usize,
    pub n_seeds: u64,
    pub fresh_samples: usize,
    pub gradient_instances: usize,
}

impl Default for TheoryScale {
    fn default() -> Self {
        TheoryScale {
            no_flip_trials: 10_000,
            grid_trials: 10_000,
            nm_small: 1_000,
            nm_large: 100_000,
            n_seeds: 5,
            fresh_samples: 1_000,
            gradient_instances: 20,
        }
    }
}

/// Runs every theory check at the given scale.
pub fn verify_all(scale: &TheoryScale, seed: u64, threads: usize) -> Result<TheoryReport> {
    let no_flip = deterministic_no_flip_check(scale.no_flip_trials, seed)?;
    let flip_grid = flip_grid_check(scale.grid_trials, seed, threads)?;
    let concentration =
        concentration_check(scale.nm_small, scale.nm_large, scale.n_seeds, seed, threads)?;
    let prediction_independence =
        prediction_independence_check(scale.fresh_samples, seed, threads)?;
    let gradient = gradient_check(scale.gradient_instances, seed)?;
    let ate = ate_check(seed)?;
    let passed = no_flip.passed
        && flip_grid.passed
        && concentration.passed
        && prediction_independence.passed
        && gradient.passed
        && ate.passed;
    Ok(TheoryReport {
        no_flip,
        flip_grid,
        concentration,
        prediction_independence,
        gradient,
        ate,
        passed,
    })
}
