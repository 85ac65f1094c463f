//! Evaluation protocols: pairwise selection accuracy, Best-of-N selection,
//! histogram export, and score-vs-covariate correlation reports.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numkit::pearson;

/// Which side of an [`EvalPair`] the label prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preferred {
    APreferred,
    BPreferred,
}

/// One scored comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub pair_id: u64,
    pub score_a: f64,
    pub score_b: f64,
    pub label: Preferred,
    #[serde(default)]
    pub domain_tag: String,
}

/// Whether the lower or the higher score wins a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// SAS-style scores: lower is better.
    LowerWins,
    /// Reward-style scores: higher is better.
    HigherWins,
}

/// Accuracy report with a per-domain breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub total: usize,
    pub correct: usize,
    pub per_domain: BTreeMap<String, (usize, usize)>,
}

/// Fraction of pairs whose labeled-preferred item wins under `rule`. Exact
/// ties count as incorrect, keeping the number a lower bound.
pub fn selection_accuracy(pairs: &[EvalPair], rule: SelectionRule) -> Result<AccuracyReport> {
    if pairs.is_empty() {
        return Err(Error::Empty {
            context: "selection_accuracy",
        });
    }
    let mut correct = 0usize;
    let mut per_domain: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for pair in pairs {
        let (preferred, other) = match pair.label {
            Preferred::APreferred => (pair.score_a, pair.score_b),
            Preferred::BPreferred => (pair.score_b, pair.score_a),
        };
        let won = match rule {
            SelectionRule::LowerWins => preferred < other,
            SelectionRule::HigherWins => preferred > other,
        };
        let entry = per_domain.entry(pair.domain_tag.clone()).or_insert((0, 0));
        entry.1 += 1;
        if won {
            correct += 1;
            entry.0 += 1;
        }
    }
    Ok(AccuracyReport {
        accuracy: correct as f64 / pairs.len() as f64,
        total: pairs.len(),
        correct,
        per_domain,
    })
}

/// One Best-of-N candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonCandidate {
    pub response_id: u64,
    pub reward: f64,
    pub sas: f64,
    #[serde(default)]
    pub artifact_magnitude: Option<f64>,
}

/// All candidates sampled for one prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonCandidateSet {
    pub prompt_id: u64,
    pub candidates: Vec<BonCandidate>,
}

/// Selects `argmax(reward − sas_weight·sas)`; ties go to the lowest
/// response id. `sas_weight = 0` reproduces plain reward selection.
pub fn best_of_n(set: &BonCandidateSet, sas_weight: f64) -> Result<u64> {
    if set.candidates.is_empty() {
        return Err(Error::Empty { context: "best_of_n" });
    }
    let mut best: Option<(&BonCandidate, f64)> = None;
    for cand in &set.candidates {
        let combined = cand.reward - sas_weight * cand.sas;
        best = match best {
            None => Some((cand, combined)),
            Some((bc, bs)) => {
                if combined > bs || (combined == bs && cand.response_id < bc.response_id) {
                    Some((cand, combined))
                } else {
                    Some((bc, bs))
                }
            }
        };
    }
    Ok(best.expect("nonempty").0.response_id)
}

/// Equal-width histogram over `[min, max]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// CSV rows: bin_lo,bin_hi,count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        let w = self.bin_width();
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * w;
            out.push_str(&format!("{lo},{hi},{c}\n", hi = lo + w));
        }
        out
    }
}

/// Equal-width histogram of `values` with counts summing to the input
/// length. A constant input collapses into a single occupied bin.
pub fn distribution_report(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Empty {
            context: "distribution_report",
        });
    }
    if bins == 0 {
        return Err(Error::InvalidArgument {
            context: "distribution_report",
            message: "bins must be at least 1".to_string(),
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    if lo == hi {
        counts[0] = values.len();
        return Ok(Histogram { lo, hi, counts });
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let mut idx = ((v - lo) / width) as usize;
        if idx >= bins {
            idx = bins - 1; // the maximum lands in the last bin
        }
        counts[idx] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

/// Correlation between scores and a covariate, plus scatter data for
/// plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub covariate_name: String,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

impl CorrelationReport {
    pub fn scatter_csv(&self, sas: &[f64], covariate: &[f64]) -> String {
        let mut out = format!("sas,{}\n", self.covariate_name);
        for (s, c) in sas.iter().zip(covariate) {
            out.push_str(&format!("{s},{c}\n"));
        }
        out
    }
}

/// Pearson correlation between SAS values and a covariate.
pub fn correlation_report(
    sas: &[f64],
    covariate: &[f64],
    covariate_name: &str,
) -> Result<CorrelationReport> {
    let (r, p_value) = pearson(sas, covariate)?;
    Ok(CorrelationReport {
        covariate_name: covariate_name.to_string(),
        r,
        p_value,
        n: sas.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use proptest::prelude::*;

    fn pair(id: u64, a: f64, b: f64, label: Preferred, tag: &str) -> EvalPair {
        EvalPair {
            pair_id: id,
            score_a: a,
            score_b: b,
            label,
            domain_tag: tag.to_string(),
        }
    }

    #[test]
    fn perfect_separation_scores_one() {
        let pairs: Vec<EvalPair> = (0..10)
            .map(|i| pair(i, 0.1, 0.9, Preferred::APreferred, "helpful"))
            .collect();
        let report = selection_accuracy(&pairs, SelectionRule::LowerWins).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.per_domain["helpful"], (10, 10));
    }

    #[test]
    fn exact_ties_count_as_incorrect() {
        let pairs = vec![pair(0, 0.5, 0.5, Preferred::APreferred, "math")];
        let report = selection_accuracy(&pairs, SelectionRule::LowerWins).unwrap();
        assert_eq!(report.accuracy, 0.0);
        let report = selection_accuracy(&pairs, SelectionRule::HigherWins).unwrap();
        assert_eq!(report.accuracy, 0.0);
    }

    #[test]
    fn per_domain_breakdown_partitions_totals() {
        let pairs = vec![
            pair(0, 0.1, 0.2, Preferred::APreferred, "math"),
            pair(1, 0.3, 0.2, Preferred::APreferred, "math"),
            pair(2, 0.1, 0.9, Preferred::BPreferred, "safety"),
        ];
        let report = selection_accuracy(&pairs, SelectionRule::LowerWins).unwrap();
        assert_eq!(report.per_domain["math"], (1, 2));
        assert_eq!(report.per_domain["safety"], (0, 1));
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn label_randomized_accuracy_is_near_half() {
        let mut rng = Rng::from_seed(606);
        let n = 2000;
        let pairs: Vec<EvalPair> = (0..n)
            .map(|i| {
                let label = if rng.uniform() < 0.5 {
                    Preferred::APreferred
                } else {
                    Preferred::BPreferred
                };
                pair(i, rng.uniform(), rng.uniform(), label, "")
            })
            .collect();
        let report = selection_accuracy(&pairs, SelectionRule::LowerWins).unwrap();
        let band = 3.0 / (n as f64).sqrt();
        assert!(
            (report.accuracy - 0.5).abs() < band,
            "accuracy {} outside 0.5 ± {band}",
            report.accuracy
        );
    }

    #[test]
    fn best_of_n_singleton_and_ties() {
        let set = BonCandidateSet {
            prompt_id: 0,
            candidates: vec![BonCandidate {
                response_id: 42,
                reward: 1.0,
                sas: 0.5,
                artifact_magnitude: None,
            }],
        };
        assert_eq!(best_of_n(&set, 1.0).unwrap(), 42);

        let tie = BonCandidateSet {
            prompt_id: 1,
            candidates: vec![
                BonCandidate {
                    response_id: 7,
                    reward: 2.0,
                    sas: 1.0,
                    artifact_magnitude: None,
                },
                BonCandidate {
                    response_id: 3,
                    reward: 1.0,
                    sas: 0.0,
                    artifact_magnitude: None,
                },
            ],
        };
        // Combined scores tie at weight 1: 2−1 = 1−0; lowest id wins.
        assert_eq!(best_of_n(&tie, 1.0).unwrap(), 3);
        // Weight 0 is plain reward argmax.
        assert_eq!(best_of_n(&tie, 0.0).unwrap(), 7);
    }

    #[test]
    fn sas_weighted_selection_reduces_artifact_magnitude() {
        // Candidates whose reward rises with artifact magnitude while SAS
        // flags the heavy artifacts: the weighted choice must carry
        // strictly less artifact on average.
        let mut rng = Rng::from_seed(707);
        let n_prompts = 500;
        let mut vanilla_total = 0.0;
        let mut weighted_total = 0.0;
        for pid in 0..n_prompts {
            let candidates: Vec<BonCandidate> = (0..8)
                .map(|rid| {
                    let artifact = rng.uniform() * 3.0;
                    let reward = artifact + 0.3 * rng.standard_normal();
                    let sas = 0.2 + artifact * artifact * 0.5 + 0.05 * rng.standard_normal();
                    BonCandidate {
                        response_id: rid,
                        reward,
                        sas,
                        artifact_magnitude: Some(artifact),
                    }
                })
                .collect();
            let set = BonCandidateSet {
                prompt_id: pid,
                candidates,
            };
            let pick = |weight: f64| {
                let id = best_of_n(&set, weight).unwrap();
                set.candidates
                    .iter()
                    .find(|c| c.response_id == id)
                    .unwrap()
                    .artifact_magnitude
                    .unwrap()
            };
            vanilla_total += pick(0.0);
            weighted_total += pick(1.0);
        }
        assert!(
            weighted_total < vanilla_total,
            "weighted {weighted_total} not below vanilla {vanilla_total}"
        );
    }

    #[test]
    fn histogram_conserves_counts() {
        let values = [1.0, 2.0, 2.5, 3.0, 10.0];
        let hist = distribution_report(&values, 4).unwrap();
        assert_eq!(hist.counts.iter().sum::<usize>(), values.len());
    }

    #[test]
    fn constant_input_single_occupied_bin() {
        let hist = distribution_report(&[3.3; 17], 5).unwrap();
        assert_eq!(hist.counts[0], 17);
        assert_eq!(hist.counts[1..].iter().sum::<usize>(), 0);
    }

    #[test]
    fn histogram_matches_recount_oracle() {
        let mut rng = Rng::from_seed(808);
        let values = rng.normal_vec(5000, 1.0);
        let bins = 12;
        let hist = distribution_report(&values, bins).unwrap();
        // Independent recount with explicit interval membership.
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = (hi - lo) / bins as f64;
        for (i, &count) in hist.counts.iter().enumerate() {
            let bin_lo = lo + i as f64 * w;
            let bin_hi = bin_lo + w;
            let recount = values
                .iter()
                .filter(|&&v| {
                    if i == bins - 1 {
                        v >= bin_lo && v <= hi
                    } else {
                        v >= bin_lo && v < bin_hi
                    }
                })
                .count();
            assert_eq!(count, recount, "bin {i}");
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(distribution_report(&[], 4).is_err());
        assert!(selection_accuracy(&[], SelectionRule::LowerWins).is_err());
    }

    #[test]
    fn correlation_of_identical_series_is_one() {
        let v = [1.0, 2.0, 5.0, 3.0];
        let report = correlation_report(&v, &v, "self").unwrap();
        assert_eq!(report.r, 1.0);
        let csv = report.scatter_csv(&v, &v);
        assert!(csv.starts_with("sas,self\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    proptest! {
        #[test]
        fn accuracy_invariant_under_monotone_transform(
            scores in proptest::collection::vec((0.0_f64..1.0, 0.0_f64..1.0), 4..40),
        ) {
            let pairs: Vec<EvalPair> = scores
                .iter()
                .enumerate()
                .map(|(i, (a, b))| pair(i as u64, *a, *b, Preferred::APreferred, ""))
                .collect();
            let transformed: Vec<EvalPair> = pairs
                .iter()
                .cloned()
                .map(|mut p| {
                    // Strictly increasing map.
                    p.score_a = (3.0 * p.score_a + 1.0).exp();
                    p.score_b = (3.0 * p.score_b + 1.0).exp();
                    p
                })
                .collect();
            for rule in [SelectionRule::LowerWins, SelectionRule::HigherWins] {
                let r0 = selection_accuracy(&pairs, rule).unwrap().accuracy;
                let r1 = selection_accuracy(&transformed, rule).unwrap().accuracy;
                prop_assert_eq!(r0, r1);
            }
        }

        #[test]
        fn histogram_is_permutation_invariant(
            mut values in proptest::collection::vec(-100.0_f64..100.0, 2..60),
            bins in 1_usize..10,
        ) {
            let h1 = distribution_report(&values, bins).unwrap();
            values.reverse();
            let h2 = distribution_report(&values, bins).unwrap();
            prop_assert_eq!(h1.counts, h2.counts);
        }
    }
}
