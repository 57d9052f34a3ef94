//! Ranking losses: pointwise regression plus pairwise hinge, the
//! return-weighted adversarial variant, and the combined objective.
//!
//! Each loss exists twice with identical arithmetic: a plain-value function
//! (the reference semantics, also used by tests and logging) and a tape
//! builder used during training. Both evaluate the regression sum first, then
//! the ordered pairs in lexicographic `(i, j)` order, then
//! `regression + alpha * pairs`, so their results agree bit for bit.

use crate::error::{Result, SvatError};
use crate::tape::{Tape, ValueId};

/// Clean and (optionally) adversarial scores of one day-batch plus labels.
#[derive(Debug, Clone)]
pub struct ScoreBatch {
    pub clean_scores: Vec<f64>,
    pub adv_scores: Option<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl ScoreBatch {
    pub fn validate(&self) -> Result<()> {
        if self.clean_scores.is_empty() {
            return Err(SvatError::Usage("empty score batch".into()));
        }
        if self.clean_scores.len() != self.labels.len() {
            return Err(SvatError::Usage(format!(
                "{} scores vs {} labels",
                self.clean_scores.len(),
                self.labels.len()
            )));
        }
        if let Some(adv) = &self.adv_scores {
            if adv.len() != self.labels.len() {
                return Err(SvatError::Usage(format!(
                    "{} adversarial scores vs {} labels",
                    adv.len(),
                    self.labels.len()
                )));
            }
        }
        Ok(())
    }
}

/// Pointwise squared error plus `alpha`-weighted pairwise hinge over all
/// ordered pairs (the diagonal contributes zero).
pub fn clean_loss(scores: &ScoreBatch, alpha: f64) -> Result<f64> {
    scores.validate()?;
    Ok(pair_ranking_loss(
        &scores.clean_scores,
        &scores.clean_scores,
        &scores.labels,
        alpha,
    ))
}

/// Per-stock adversarial loss of stock `i`: its regression error on the
/// adversarial score plus the pairwise hinge of its adversarial score against
/// every other stock's adversarial score.
pub fn per_stock_adv_loss(i: usize, adv_scores: &[f64], labels: &[f64], alpha: f64) -> f64 {
    let mut pairs = 0.0;
    for j in 0..adv_scores.len() {
        pairs += hinge_term(adv_scores[i], adv_scores[j], labels[i], labels[j]);
    }
    let d = adv_scores[i] - labels[i];
    d * d + alpha * pairs
}

/// Split adversarial loss: per-stock adversarial losses weighted by the
/// realized return ratios. Positive returns pull toward robustness, negative
/// returns push toward sensitivity; the total may be negative.
pub fn adv_loss(adv_scores: &[f64], labels: &[f64], returns: &[f64], alpha: f64) -> Result<f64> {
    if adv_scores.is_empty() {
        return Err(SvatError::Usage("empty score batch".into()));
    }
    if adv_scores.len() != labels.len() || labels.len() != returns.len() {
        return Err(SvatError::Usage(format!(
            "length mismatch: {} scores, {} labels, {} returns",
            adv_scores.len(),
            labels.len(),
            returns.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..adv_scores.len() {
        total += returns[i] * per_stock_adv_loss(i, adv_scores, labels, alpha);
    }
    Ok(total)
}

/// `L + lambda * (L_adv + L_kl)`. `lambda = 0` disables the adversarial and
/// KL terms entirely (the ablation switch).
pub fn combined_loss(l: f64, l_adv: f64, l_kl: f64, lambda: f64) -> Result<f64> {
    for (name, v) in [("L", l), ("L_adv", l_adv), ("L_KL", l_kl)] {
        if !v.is_finite() {
            return Err(SvatError::Numeric(format!("{name} is not finite: {v}")));
        }
    }
    Ok(l + lambda * (l_adv + l_kl))
}

fn hinge_term(si: f64, sj: f64, yi: f64, yj: f64) -> f64 {
    ((-(yi - yj)) * (si - sj)).max(0.0)
}

fn pair_ranking_loss(reg_scores: &[f64], pair_scores: &[f64], labels: &[f64], alpha: f64) -> f64 {
    let n = labels.len();
    let mut reg = 0.0;
    for i in 0..n {
        let d = reg_scores[i] - labels[i];
        reg += d * d;
    }
    let mut pairs = 0.0;
    for i in 0..n {
        for j in 0..n {
            pairs += hinge_term(pair_scores[i], pair_scores[j], labels[i], labels[j]);
        }
    }
    reg + alpha * pairs
}

/// All ordered pairs in lexicographic order; the exact reference pair set.
pub fn all_ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push((i, j));
        }
    }
    out
}

/// Tape version of [`clean_loss`]. `pairs` defaults to all ordered pairs;
/// a subsampled list changes the pairwise term accordingly.
pub fn build_clean_loss(
    tape: &mut Tape,
    scores: &[ValueId],
    labels: &[f64],
    alpha: f64,
    pairs: Option<&[(usize, usize)]>,
) -> Result<ValueId> {
    if scores.is_empty() {
        return Err(SvatError::Usage("empty score batch".into()));
    }
    if scores.len() != labels.len() {
        return Err(SvatError::Usage(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut reg_terms = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let y_id = tape.constant_scalar(y)?;
        let d = tape.sub(s, y_id)?;
        reg_terms.push(tape.square(d)?);
    }
    let reg_cat = tape.concat(&reg_terms)?;
    let reg = tape.sum(reg_cat)?;

    let default_pairs;
    let pair_list = match pairs {
        Some(p) => p,
        None => {
            default_pairs = all_ordered_pairs(scores.len());
            &default_pairs
        }
    };
    let pair_sum = build_pair_hinge_sum(tape, scores, labels, pair_list)?;
    let weighted = tape.scale(pair_sum, alpha)?;
    tape.add(reg, weighted)
}

fn build_pair_hinge_sum(
    tape: &mut Tape,
    scores: &[ValueId],
    labels: &[f64],
    pairs: &[(usize, usize)],
) -> Result<ValueId> {
    let mut terms = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let d = tape.sub(scores[i], scores[j])?;
        let scaled = tape.scale(d, -(labels[i] - labels[j]))?;
        terms.push(tape.max0(scaled)?);
    }
    if terms.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let cat = tape.concat(&terms)?;
    tape.sum(cat)
}

/// Tape version of [`adv_loss`]. `pairs_of` yields the pair partners `j` used
/// for anchor `i`; `None` means every stock.
pub fn build_adv_loss(
    tape: &mut Tape,
    adv_scores: &[ValueId],
    labels: &[f64],
    returns: &[f64],
    alpha: f64,
    partners: Option<&[Vec<usize>]>,
) -> Result<ValueId> {
    let n = adv_scores.len();
    if n == 0 {
        return Err(SvatError::Usage("empty score batch".into()));
    }
    if labels.len() != n || returns.len() != n {
        return Err(SvatError::Usage(format!(
            "length mismatch: {} scores, {} labels, {} returns",
            n,
            labels.len(),
            returns.len()
        )));
    }
    let mut weighted = Vec::with_capacity(n);
    for i in 0..n {
        let y_id = tape.constant_scalar(labels[i])?;
        let d = tape.sub(adv_scores[i], y_id)?;
        let reg = tape.square(d)?;

        let all: Vec<usize>;
        let js = match partners {
            Some(lists) => lists[i].as_slice(),
            None => {
                all = (0..n).collect();
                all.as_slice()
            }
        };
        let pair_list: Vec<(usize, usize)> = js.iter().map(|&j| (i, j)).collect();
        let pair_sum = build_pair_hinge_sum(tape, adv_scores, labels, &pair_list)?;
        let pair_weighted = tape.scale(pair_sum, alpha)?;
        let per_stock = tape.add(reg, pair_weighted)?;
        weighted.push(tape.scale(per_stock, returns[i])?);
    }
    let cat = tape.concat(&weighted)?;
    tape.sum(cat)
}
