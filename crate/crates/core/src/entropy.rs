//! Test-time risk quantification via ranking entropy.
//!
//! For each stock, M perturbations are sampled from the prior path (no labels
//! or gradients needed), the stock is re-ranked against its unperturbed peers
//! for each sample, and the Shannon entropy (natural log) of the resulting
//! rank distribution is the risk score: the more a stock's rank moves under
//! perturbation, the riskier it is.
//!
//! Each (day, stock) task draws from its own ChaCha stream derived from the
//! seed, so results are independent of evaluation order.

use crate::data::DayBatch;
use crate::error::{Result, SvatError};
use crate::model::Model;
use crate::ranker;
use crate::tape::Tape;
use crate::vpg;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntropyConfig {
    /// Monte-Carlo sample count M.
    pub samples: usize,
    pub seed: u64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            samples: 50,
            seed: 0,
        }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(SvatError::Usage("sample count M must be at least 1".into()));
        }
        Ok(())
    }
}

/// The M sampled ranks of one stock, each in `[1, N]`.
#[derive(Debug, Clone)]
pub struct RankSample {
    pub stock_index: usize,
    pub ranks: Vec<usize>,
}

/// Rank of stock `i` when its score is replaced by `perturbed` while every
/// other stock keeps its clean score. Rank 1 is best; on ties the lower stock
/// index ranks first.
pub fn rank_of_perturbed(clean_scores: &[f64], i: usize, perturbed: f64) -> Result<usize> {
    if i >= clean_scores.len() {
        return Err(SvatError::Usage(format!(
            "stock index {i} out of range 0..{}",
            clean_scores.len()
        )));
    }
    let mut ahead = 0usize;
    for (j, &s) in clean_scores.iter().enumerate() {
        if j == i {
            continue;
        }
        if s > perturbed || (s == perturbed && j < i) {
            ahead += 1;
        }
    }
    Ok(1 + ahead)
}

/// Shannon entropy (natural log) of the empirical rank distribution;
/// `0 ln 0 = 0`.
pub fn ranking_entropy(sample: &RankSample) -> f64 {
    let m = sample.ranks.len();
    if m == 0 {
        return 0.0;
    }
    let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &r in &sample.ranks {
        *counts.entry(r).or_insert(0) += 1;
    }
    let mut h = 0.0;
    for &c in counts.values() {
        let p = c as f64 / m as f64;
        h -= p * p.ln();
    }
    h
}

/// Score stock `i` on `x_i + delta` with all peers clean and return its rank.
pub fn rank_under_perturbation(
    batch: &DayBatch,
    model: &Model,
    i: usize,
    delta: &[f64],
) -> Result<usize> {
    if i >= batch.examples.len() {
        return Err(SvatError::Usage(format!(
            "stock index {i} out of range 0..{}",
            batch.examples.len()
        )));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let mut clean = Vec::with_capacity(batch.examples.len());
    let mut x_i = None;
    for (j, ex) in batch.examples.iter().enumerate() {
        let emb = ranker::embed(model, &mut tape, &bound, &ex.window, false)?;
        let s = ranker::score(model, &mut tape, &bound, emb.x)?;
        clean.push(tape.scalar_value(s)?);
        if j == i {
            x_i = Some(emb.x);
        }
    }
    let x_i = x_i.expect("checked index");
    let delta_id = tape.constant(crate::tensor::Tensor::vector(delta.to_vec())?);
    let adv = ranker::score_perturbed(
        model,
        &mut tape,
        &bound,
        x_i,
        delta_id,
        model.config.vpg.epsilon,
    )?;
    let perturbed = tape.scalar_value(adv)?;
    rank_of_perturbed(&clean, i, perturbed)
}

/// Per-stock risk table for one day.
#[derive(Debug, Clone)]
pub struct StockRisk {
    pub stock_index: usize,
    pub entropy: f64,
    pub clean_rank: usize,
    pub realized_return: f64,
}

/// Quantify every stock of a day-batch: M prior-path perturbations, M ranks,
/// one entropy per stock, alongside the clean rank and the realized return.
pub fn quantify_day(
    batch: &DayBatch,
    model: &Model,
    config: &EntropyConfig,
) -> Result<Vec<StockRisk>> {
    config.validate()?;
    let n = batch.examples.len();
    if n == 0 {
        return Err(SvatError::Usage("empty day batch".into()));
    }
    let latent = model.config.vpg.latent_dim;
    let epsilon = model.config.vpg.epsilon;

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let mut clean = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut priors = Vec::with_capacity(n);
    for ex in &batch.examples {
        let emb = ranker::embed(model, &mut tape, &bound, &ex.window, false)?;
        let s = ranker::score(model, &mut tape, &bound, emb.x)?;
        clean.push(tape.scalar_value(s)?);
        priors.push(vpg::encode_prior(model, &mut tape, &bound, emb.x)?);
        xs.push(emb.x);
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(((batch.target_day as u64) << 32) | i as u64);
        let mut ranks = Vec::with_capacity(config.samples);
        for _ in 0..config.samples {
            let noise: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = vpg::sample_z(&mut tape, &priors[i], &noise)?;
            let delta = vpg::decode_delta(model, &mut tape, &bound, z, xs[i], epsilon)?;
            let adv = ranker::score_perturbed(model, &mut tape, &bound, xs[i], delta, epsilon)?;
            ranks.push(rank_of_perturbed(&clean, i, tape.scalar_value(adv)?)?);
        }
        let sample = RankSample {
            stock_index: i,
            ranks,
        };
        out.push(StockRisk {
            stock_index: i,
            entropy: ranking_entropy(&sample),
            clean_rank: rank_of_perturbed(&clean, i, clean[i])?,
            realized_return: batch.examples[i].label,
        });
    }
    Ok(out)
}

/// The documented risk-table CSV: one row per (day, stock).
pub fn quantify_csv(rows: &[(chrono::NaiveDate, &str, &StockRisk)]) -> String {
    let mut out = String::from("date,symbol,entropy,clean_rank,realized_return\n");
    for (date, symbol, risk) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            date.format("%Y-%m-%d"),
            symbol,
            risk.entropy,
            risk.clean_rank,
            risk.realized_return
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rank_examples() {
        // delta = 0 keeps the clean rank.
        let clean = [0.5, 0.2, 0.1];
        assert_eq!(rank_of_perturbed(&clean, 0, 0.5).unwrap(), 1);
        assert_eq!(rank_of_perturbed(&clean, 1, 0.2).unwrap(), 2);
        // Perturbed to the top.
        assert_eq!(rank_of_perturbed(&clean, 2, 0.9).unwrap(), 1);
        // Perturbed score 0.15 for stock 0: only 0.2 stays ahead.
        assert_eq!(rank_of_perturbed(&clean, 0, 0.15).unwrap(), 2);
        assert!(rank_of_perturbed(&clean, 7, 0.0).is_err());
    }

    #[test]
    fn tied_scores_rank_lower_index_first() {
        let clean = [0.3, 0.3, 0.3];
        assert_eq!(rank_of_perturbed(&clean, 0, 0.3).unwrap(), 1);
        assert_eq!(rank_of_perturbed(&clean, 1, 0.3).unwrap(), 2);
        assert_eq!(rank_of_perturbed(&clean, 2, 0.3).unwrap(), 3);
    }

    #[test]
    fn entropy_degenerate_and_uniform_cases() {
        let same = RankSample {
            stock_index: 0,
            ranks: vec![4; 32],
        };
        assert_eq!(ranking_entropy(&same), 0.0);

        let distinct = RankSample {
            stock_index: 0,
            ranks: (1..=16).collect(),
        };
        assert!((ranking_entropy(&distinct) - (16.0_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_worked_fixture() {
        let sample = RankSample {
            stock_index: 0,
            ranks: vec![3, 3, 7, 9],
        };
        let expected = 0.5 * 2.0_f64.ln() + 0.5 * 4.0_f64.ln();
        assert!((ranking_entropy(&sample) - expected).abs() < 1e-12);
        assert!((ranking_entropy(&sample) - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn entropy_bounded_by_log_min_m_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = 2 + (rng.random::<u32>() % 30) as usize;
            let m = 1 + (rng.random::<u32>() % 80) as usize;
            let ranks: Vec<usize> = (0..m)
                .map(|_| 1 + (rng.random::<u32>() as usize % n))
                .collect();
            let h = ranking_entropy(&RankSample {
                stock_index: 0,
                ranks,
            });
            let bound = (m.min(n) as f64).ln();
            assert!((0.0..=bound + 1e-12).contains(&h), "h = {h}, bound = {bound}");
        }
    }

    #[test]
    fn entropy_converges_with_sample_count() {
        // Fixed categorical rank distribution; the empirical entropy is
        // Cauchy in M.
        let probs = [0.4, 0.25, 0.15, 0.1, 0.05, 0.05];
        let draw = |m: usize, rng: &mut ChaCha8Rng| -> f64 {
            let ranks: Vec<usize> = (0..m)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut rank = probs.len();
                    for (idx, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            rank = idx + 1;
                            break;
                        }
                    }
                    rank
                })
                .collect();
            ranking_entropy(&RankSample {
                stock_index: 0,
                ranks,
            })
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h500 = draw(500, &mut rng);
        let h1000 = draw(1000, &mut rng);
        assert!(
            (h500 - h1000).abs() < 0.05,
            "H(500) = {h500}, H(1000) = {h1000}"
        );
    }

    #[test]
    fn rank_invariant_under_monotone_score_transform() {
        let clean = [0.5, -0.2, 0.1, 0.4];
        let pert = 0.05;
        let transform = |x: f64| (3.0 * x).exp() + 1.0;
        let mapped: Vec<f64> = clean.iter().map(|&x| transform(x)).collect();
        for i in 0..clean.len() {
            assert_eq!(
                rank_of_perturbed(&clean, i, pert).unwrap(),
                rank_of_perturbed(&mapped, i, transform(pert)).unwrap()
            );
        }
    }
}
