//! The training loop: clean forward, gradient-extracted perturbations,
//! variational generation, the split adversarial objective and one shared
//! Adam step per batch over both parameter groups.
//!
//! Per day-batch with `lambda > 0`:
//! 1. clean forward and clean loss L;
//! 2. backward pass restricted to L yields per-stock embedding gradients,
//!    which are normalized onto the epsilon-sphere and frozen as constants
//!    (no gradient flows through the extraction);
//! 3. posterior encoding, one reparameterized latent sample per stock,
//!    decoding into perturbations, adversarial scores;
//! 4. return-weighted adversarial loss, prior encoding and the KL term;
//! 5. one backward pass on `L + lambda * (L_adv + L_KL)` and a single Adam
//!    invocation updating backbone and generator with the shared step size.
//!
//! With `lambda == 0` steps 2-4 are skipped entirely: the update equals plain
//! clean training bit for bit and no generator noise is drawn, which makes
//! `lambda = 0` the exact no-adversarial baseline.

use crate::adam::{adam_step, AdamState};
use crate::backtest::{select_topk, series_metrics};
use crate::checkpoint::Checkpoint;
use crate::data::{build_examples, DayBatch, SplitSpec, StockPanel};
use crate::error::{Result, SvatError};
use crate::losses::{build_adv_loss, build_clean_loss};
use crate::model::{Model, ModelConfig};
use crate::tape::Tape;
use crate::{ranker, vpg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Pairwise loss weight.
    pub alpha: f64,
    /// Weight of the adversarial + KL block; 0 disables it (baseline).
    pub lambda: f64,
    /// Perturbation radius.
    pub epsilon: f64,
    /// Adam step size.
    pub lr: f64,
    pub epochs: usize,
    pub lookback: usize,
    pub seed: u64,
    /// Optional cap on pairwise partners per anchor; `None` keeps the exact
    /// O(N^2) reference semantics.
    pub pair_subsample: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            lambda: 0.5,
            epsilon: 0.05,
            lr: 5e-3,
            epochs: 100,
            lookback: 8,
            seed: 42,
            pair_subsample: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(SvatError::Usage(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.lambda < 0.0 {
            return Err(SvatError::Usage(format!(
                "lambda must be >= 0 (0 disables the adversarial block), got {}",
                self.lambda
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(SvatError::Usage(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.lr <= 0.0 {
            return Err(SvatError::Usage(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(SvatError::Usage("epochs must be at least 1".into()));
        }
        if self.lookback == 0 {
            return Err(SvatError::Usage("lookback must be at least 1".into()));
        }
        if let Some(0) = self.pair_subsample {
            return Err(SvatError::Usage("pair_subsample cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub l: f64,
    pub l_adv: f64,
    pub l_kl: f64,
    pub l_com: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub l: f64,
    pub l_adv: f64,
    pub l_kl: f64,
    pub l_com: f64,
    pub valid_irr: f64,
    pub valid_sr: Option<f64>,
    pub valid_mdd: f64,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Epoch log lines as the documented CSV.
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,L,L_adv,L_KL,L_com,valid_IRR,valid_SR,valid_MDD\n");
    for e in log {
        let sr = e
            .valid_sr
            .map(|v| v.to_string())
            .unwrap_or_else(|| "undefined".into());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.epoch, e.l, e.l_adv, e.l_kl, e.l_com, e.valid_irr, sr, e.valid_mdd
        ));
    }
    out
}

/// Train a fresh model on the panel's training range, monitoring validation
/// Sharpe ratio for model selection. Returns the best-SR checkpoint, the
/// final checkpoint and the per-epoch log.
pub fn train(
    panel: &StockPanel,
    split: &SplitSpec,
    mut model_config: ModelConfig,
    config: TrainConfig,
    valid_k: usize,
    r_f: f64,
) -> Result<TrainOutcome> {
    config.validate()?;
    // The trainer's radius is authoritative for the generator.
    model_config.vpg.epsilon = config.epsilon;
    model_config.lookback = config.lookback;
    model_config.validate()?;

    let train_batches = build_examples(panel, config.lookback, &split.train)?;
    if train_batches.is_empty() {
        return Err(SvatError::Usage(
            "training range yields no day batches".into(),
        ));
    }
    let valid_batches = build_examples(panel, config.lookback, &split.valid)?;
    if valid_k == 0 || valid_k > panel.n_stocks() {
        return Err(SvatError::Usage(format!(
            "validation k = {valid_k} outside 1..={}",
            panel.n_stocks()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(model_config, &mut rng)?;
    let mut adam = AdamState::new(&model.params);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in 1..=config.epochs {
        let mut sums = StepLosses {
            l: 0.0,
            l_adv: 0.0,
            l_kl: 0.0,
            l_com: 0.0,
        };
        for batch in &train_batches {
            let losses = train_step(&mut model, &mut adam, batch, &config, &mut rng)
                .map_err(|e| annotate_epoch(e, epoch, batch.target_day))?;
            sums.l += losses.l;
            sums.l_adv += losses.l_adv;
            sums.l_kl += losses.l_kl;
            sums.l_com += losses.l_com;
        }
        let nb = train_batches.len() as f64;
        let (valid_irr, valid_sr, valid_mdd) = validation_metrics(&model, &valid_batches, valid_k, r_f)?;
        log.push(EpochLog {
            epoch,
            l: sums.l / nb,
            l_adv: sums.l_adv / nb,
            l_kl: sums.l_kl / nb,
            l_com: sums.l_com / nb,
            valid_irr,
            valid_sr,
            valid_mdd,
        });

        if let Some(sr) = valid_sr {
            let improved = match &best {
                Some((best_sr, _)) => sr > *best_sr,
                None => true,
            };
            if improved {
                best = Some((sr, Checkpoint::snapshot(&model, &adam, &rng, &config, split, epoch, Some(sr))));
            }
        }
    }

    let last = Checkpoint::snapshot(&model, &adam, &rng, &config, split, config.epochs, log.last().and_then(|e| e.valid_sr));
    let best = match best {
        Some((_, ck)) => ck,
        None => {
            log::warn!("no epoch produced a defined validation SR; best = final checkpoint");
            last.clone()
        }
    };
    Ok(TrainOutcome { best, last, log })
}

fn annotate_epoch(e: SvatError, epoch: usize, day: usize) -> SvatError {
    match e {
        SvatError::Numeric(msg) => SvatError::Numeric(format!(
            "epoch {epoch}, day-batch {day}: {msg}"
        )),
        other => other,
    }
}

/// One optimizer step on one day-batch; exposed for tests that probe the
/// update semantics directly.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &DayBatch,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let n = batch.examples.len();
    if n == 0 {
        return Err(SvatError::Usage("empty day batch".into()));
    }
    let embed_dim = model.config.backbone.embed_dim;
    let latent = model.config.vpg.latent_dim;

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);

    let mut x_ids = Vec::with_capacity(n);
    let mut score_ids = Vec::with_capacity(n);
    for ex in &batch.examples {
        let emb = ranker::embed(model, &mut tape, &bound, &ex.window, true)?;
        score_ids.push(ranker::score(model, &mut tape, &bound, emb.x)?);
        x_ids.push(emb.x);
    }
    let labels: Vec<f64> = batch.examples.iter().map(|e| e.label).collect();

    // Optional pairwise subsampling: one partner list per anchor, drawn
    // before any generator noise so the stream layout is stable.
    let partners: Option<Vec<Vec<usize>>> = config.pair_subsample.map(|cap| {
        (0..n)
            .map(|_| {
                if cap >= n {
                    (0..n).collect()
                } else {
                    let mut js: Vec<usize> = Vec::with_capacity(cap);
                    while js.len() < cap {
                        let j = (rng.random::<u64>() % n as u64) as usize;
                        if !js.contains(&j) {
                            js.push(j);
                        }
                    }
                    js.sort_unstable();
                    js
                }
            })
            .collect()
    });
    let clean_pairs: Option<Vec<(usize, usize)>> = partners.as_ref().map(|lists| {
        let mut pairs = Vec::new();
        for (i, js) in lists.iter().enumerate() {
            for &j in js {
                pairs.push((i, j));
            }
        }
        pairs
    });

    let loss_node = build_clean_loss(
        &mut tape,
        &score_ids,
        &labels,
        config.alpha,
        clean_pairs.as_deref(),
    )
    .map_err(|e| term_context("L", e))?;
    let l = tape.scalar_value(loss_node)?;

    if config.lambda == 0.0 {
        let grads = tape.backward(loss_node)?;
        let grad_vecs: Vec<Vec<f64>> = model
            .params
            .iter()
            .map(|(pid, p)| grads.wrt_or_zeros(bound.id(pid), p.tensor.numel()))
            .collect();
        adam_step(&mut model.params, &grad_vecs, adam, config.lr)?;
        return Ok(StepLosses {
            l,
            l_adv: 0.0,
            l_kl: 0.0,
            l_com: l,
        });
    }

    // Embedding gradients of the clean loss; frozen before the generator runs.
    let clean_grads = tape.backward(loss_node)?;
    let mut adv_ids = Vec::with_capacity(n);
    let mut kl_ids = Vec::with_capacity(n);
    for i in 0..n {
        let grad_x = clean_grads.wrt_or_zeros(x_ids[i], embed_dim);
        let delta_post = vpg::extract_posterior_delta(&grad_x, config.epsilon);
        let delta_post_id = tape.constant(crate::tensor::Tensor::vector(delta_post)?);

        let post = vpg::encode_posterior(model, &mut tape, &bound, delta_post_id, x_ids[i])
            .map_err(|e| term_context("posterior", e))?;
        let noise: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(rng)).collect();
        let z = vpg::sample_z(&mut tape, &post, &noise)?;
        let delta = vpg::decode_delta(model, &mut tape, &bound, z, x_ids[i], config.epsilon)
            .map_err(|e| term_context("decoder", e))?;
        adv_ids.push(
            ranker::score_perturbed(model, &mut tape, &bound, x_ids[i], delta, config.epsilon)
                .map_err(|e| term_context("adversarial score", e))?,
        );

        let prior = vpg::encode_prior(model, &mut tape, &bound, x_ids[i])
            .map_err(|e| term_context("prior", e))?;
        kl_ids.push(
            vpg::kl_divergence_node(&mut tape, &post, &prior)
                .map_err(|e| term_context("L_KL", e))?,
        );
    }

    let adv_node = build_adv_loss(
        &mut tape,
        &adv_ids,
        &labels,
        &labels,
        config.alpha,
        partners.as_deref(),
    )
    .map_err(|e| term_context("L_adv", e))?;
    let kl_cat = tape.concat(&kl_ids)?;
    let kl_node = tape.sum(kl_cat).map_err(|e| term_context("L_KL", e))?;

    let svat = tape.add(adv_node, kl_node)?;
    let svat_scaled = tape.scale(svat, config.lambda)?;
    let com_node = tape
        .add(loss_node, svat_scaled)
        .map_err(|e| term_context("L_com", e))?;

    let l_adv = tape.scalar_value(adv_node)?;
    let l_kl = tape.scalar_value(kl_node)?;
    let l_com = tape.scalar_value(com_node)?;

    let grads = tape.backward(com_node)?;
    let grad_vecs: Vec<Vec<f64>> = model
        .params
        .iter()
        .map(|(pid, p)| grads.wrt_or_zeros(bound.id(pid), p.tensor.numel()))
        .collect();
    adam_step(&mut model.params, &grad_vecs, adam, config.lr)?;

    Ok(StepLosses {
        l,
        l_adv,
        l_kl,
        l_com,
    })
}

fn term_context(term: &str, e: SvatError) -> SvatError {
    match e {
        SvatError::Numeric(msg) => SvatError::Numeric(format!("{term}: {msg}")),
        other => other,
    }
}

/// Clean scores of every stock for one day-batch on the current parameters.
pub fn score_day_batch(model: &Model, batch: &DayBatch) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let mut out = Vec::with_capacity(batch.examples.len());
    for ex in &batch.examples {
        let emb = ranker::embed(model, &mut tape, &bound, &ex.window, false)?;
        let s = ranker::score(model, &mut tape, &bound, emb.x)?;
        out.push(tape.scalar_value(s)?);
    }
    Ok(out)
}

/// IRR/SR/MDD of top-k selections over a batch list (labels are the realized
/// returns of each batch's target day).
pub fn validation_metrics(
    model: &Model,
    batches: &[DayBatch],
    k: usize,
    r_f: f64,
) -> Result<(f64, Option<f64>, f64)> {
    if batches.is_empty() {
        return Ok((0.0, None, 0.0));
    }
    let mut daily = Vec::with_capacity(batches.len());
    for batch in batches {
        let scores = score_day_batch(model, batch)?;
        let picks = select_topk(&scores, k)?;
        let mut irr = 0.0;
        for &i in &picks {
            irr += batch.examples[i].label;
        }
        daily.push(irr);
    }
    Ok(series_metrics(&daily, r_f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_market, DateRange, RegimeSpec};
    use crate::ranker::{BackboneConfig, PsiKind};
    use crate::vpg::VpgConfig;

    pub(crate) fn tiny_model_config(psi: PsiKind, lookback: usize, embed: usize) -> ModelConfig {
        ModelConfig {
            lookback,
            feature_dim: crate::data::FEATURE_DIM,
            backbone: BackboneConfig {
                psi_kind: psi,
                embed_dim: embed,
                head_hidden: vec![6],
            },
            vpg: VpgConfig {
                epsilon: 0.05,
                latent_dim: 3,
                encoder_hidden: vec![6, 6],
                prior_hidden: vec![6, 6],
                decoder_hidden: vec![6, 6],
            },
        }
    }

    fn tiny_setup() -> (StockPanel, SplitSpec) {
        let panel = synth_market(5, 4, 40, &RegimeSpec::default()).unwrap();
        let split = SplitSpec::by_day_counts(&panel, 24, 8).unwrap();
        (panel, split)
    }

    fn tiny_train_config(lambda: f64) -> TrainConfig {
        TrainConfig {
            alpha: 0.5,
            lambda,
            epsilon: 0.05,
            lr: 5e-3,
            epochs: 2,
            lookback: 4,
            seed: 9,
            pair_subsample: None,
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.epsilon = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambda = -0.1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambda = 0.0;
        assert!(c.validate().is_ok());
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let (panel, split) = tiny_setup();
        let mc = tiny_model_config(PsiKind::Recurrent, 4, 5);
        let tc = tiny_train_config(0.5);
        let a = train(&panel, &split, mc.clone(), tc, 2, 0.0).unwrap();
        let b = train(&panel, &split, mc, tc, 2, 0.0).unwrap();
        assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());
        assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    }

    #[test]
    fn lambda_zero_matches_independent_clean_training() {
        // An independently composed clean-training loop (no generator
        // machinery at all) must reproduce the lambda = 0 trajectory bit for
        // bit: same init draws, same batches, same loss, same Adam updates.
        let (panel, split) = tiny_setup();
        let mc = tiny_model_config(PsiKind::Recurrent, 4, 5);
        let tc = tiny_train_config(0.0);
        let outcome = train(&panel, &split, mc.clone(), tc, 2, 0.0).unwrap();

        let mut oracle_cfg = mc.clone();
        oracle_cfg.vpg.epsilon = tc.epsilon;
        oracle_cfg.lookback = tc.lookback;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut model = Model::init(oracle_cfg, &mut rng).unwrap();
        let mut adam = AdamState::new(&model.params);
        let batches = build_examples(&panel, tc.lookback, &split.train).unwrap();
        for _epoch in 0..tc.epochs {
            for batch in &batches {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, true);
                let mut score_ids = Vec::new();
                for ex in &batch.examples {
                    let emb = ranker::embed(&model, &mut tape, &bound, &ex.window, true).unwrap();
                    score_ids.push(ranker::score(&model, &mut tape, &bound, emb.x).unwrap());
                }
                let labels: Vec<f64> = batch.examples.iter().map(|e| e.label).collect();
                let loss =
                    build_clean_loss(&mut tape, &score_ids, &labels, tc.alpha, None).unwrap();
                let grads = tape.backward(loss).unwrap();
                let gv: Vec<Vec<f64>> = model
                    .params
                    .iter()
                    .map(|(pid, p)| grads.wrt_or_zeros(bound.id(pid), p.tensor.numel()))
                    .collect();
                adam_step(&mut model.params, &gv, &mut adam, tc.lr).unwrap();
            }
        }

        let trained = Checkpoint::load_bytes(&outcome.last.to_bytes().unwrap()).unwrap();
        for (pid, p) in model.params.iter() {
            let got = trained.model.params.get(pid);
            assert_eq!(got.name, p.name);
            let a: Vec<u64> = got.tensor.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = p.tensor.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "parameter {} diverged", p.name);
        }
    }

    #[test]
    fn svat_step_descends_on_positive_return_adv_loss() {
        // Single stock with a positive return, generator frozen, concat
        // transformation so the embedding is constant. A small combined-loss
        // step on the backbone alone must not increase this stock's
        // adversarial loss to first order.
        let panel = synth_market(3, 2, 30, &RegimeSpec::default()).unwrap();
        let mc = tiny_model_config(PsiKind::Concat, 2, 2 * crate::data::FEATURE_DIM);
        let (alpha, lambda, epsilon, lr) = (0.5, 1.0, 0.01, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::init(mc, &mut rng).unwrap();
        let mut adam = AdamState::new(&model.params);

        // One-stock batch with a positive label.
        let range = DateRange::new(panel.date(0), panel.date(panel.n_days() - 1)).unwrap();
        let batches = build_examples(&panel, 2, &range).unwrap();
        let mut batch = batches
            .iter()
            .find(|b| b.examples[0].label > 0.0)
            .expect("some positive day")
            .clone();
        batch.examples.truncate(1);
        let noise = vec![0.3, -0.5, 0.7];

        // Build the exact training graph with frozen noise; returns the
        // stock's adversarial loss value and the full gradient set.
        let graph = |model: &Model| -> (f64, f64, Vec<Vec<f64>>) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let ex = &batch.examples[0];
            let emb = ranker::embed(model, &mut tape, &bound, &ex.window, true).unwrap();
            let s = ranker::score(model, &mut tape, &bound, emb.x).unwrap();
            let loss = build_clean_loss(&mut tape, &[s], &[ex.label], alpha, None).unwrap();
            let grads = tape.backward(loss).unwrap();
            let gx = grads.wrt_or_zeros(emb.x, model.config.backbone.embed_dim);
            let dpost = vpg::extract_posterior_delta(&gx, epsilon);
            let dpost_id = tape.constant(crate::tensor::Tensor::vector(dpost).unwrap());
            let post = vpg::encode_posterior(model, &mut tape, &bound, dpost_id, emb.x).unwrap();
            let z = vpg::sample_z(&mut tape, &post, &noise).unwrap();
            let delta = vpg::decode_delta(model, &mut tape, &bound, z, emb.x, epsilon).unwrap();
            let s_adv =
                ranker::score_perturbed(model, &mut tape, &bound, emb.x, delta, epsilon).unwrap();
            let adv =
                build_adv_loss(&mut tape, &[s_adv], &[ex.label], &[ex.label], alpha, None).unwrap();
            let prior = vpg::encode_prior(model, &mut tape, &bound, emb.x).unwrap();
            let kl = vpg::kl_divergence_node(&mut tape, &post, &prior).unwrap();
            let svat = tape.add(adv, kl).unwrap();
            let scaled = tape.scale(svat, lambda).unwrap();
            let com = tape.add(loss, scaled).unwrap();
            let g = tape.backward(com).unwrap();
            let grad_vecs = model
                .params
                .iter()
                .map(|(pid, p)| g.wrt_or_zeros(bound.id(pid), p.tensor.numel()))
                .collect();
            let sv = tape.scalar_value(s_adv).unwrap();
            let per_stock = crate::losses::per_stock_adv_loss(0, &[sv], &[ex.label], alpha);
            (per_stock, tape.scalar_value(com).unwrap(), grad_vecs)
        };

        let (adv_before, _, mut grads) = graph(&model);
        // Freeze the generator: zero its gradients before the step.
        for (pid, p) in model.params.iter() {
            if p.group == crate::params::ParamGroup::Generator {
                grads[pid.0] = vec![0.0; p.tensor.numel()];
            }
        }
        adam_step(&mut model.params, &grads, &mut adam, lr).unwrap();
        let (adv_after, _, _) = graph(&model);
        assert!(
            adv_after <= adv_before + 1e-9,
            "adversarial loss rose from {adv_before} to {adv_after}"
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_term_diagnostic() {
        let (panel, split) = tiny_setup();
        let mc = tiny_model_config(PsiKind::Recurrent, 4, 5);
        let tc = TrainConfig {
            lr: 1e6, // blow up the parameters
            epochs: 8,
            ..tiny_train_config(0.5)
        };
        let err = match train(&panel, &split, mc, tc, 2, 0.0) {
            Err(e) => e,
            Ok(_) => panic!("expected the training to abort"),
        };
        match err {
            SvatError::Numeric(msg) => {
                assert!(msg.contains("epoch"), "missing context: {msg}")
            }
            other => panic!("expected numeric abort, got {other}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_validation_metrics() {
        // The final epoch's logged metrics came from the live model; a
        // save/load cycle must reproduce them exactly.
        let (panel, split) = tiny_setup();
        let mc = tiny_model_config(PsiKind::Recurrent, 4, 5);
        let tc = tiny_train_config(0.5);
        let outcome = train(&panel, &split, mc, tc, 2, 0.0).unwrap();
        let live = *outcome.log.last().unwrap();

        let valid = build_examples(&panel, tc.lookback, &split.valid).unwrap();
        let loaded = Checkpoint::load_bytes(&outcome.last.to_bytes().unwrap()).unwrap();
        let (irr, sr, mdd) = validation_metrics(&loaded.model, &valid, 2, 0.0).unwrap();
        assert_eq!(irr.to_bits(), live.valid_irr.to_bits());
        assert_eq!(sr.map(f64::to_bits), live.valid_sr.map(f64::to_bits));
        assert_eq!(mdd.to_bits(), live.valid_mdd.to_bits());
    }
}
