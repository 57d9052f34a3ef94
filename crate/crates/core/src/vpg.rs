//! Variational perturbation generator.
//!
//! Four pieces around a latent risk vector z:
//! a gradient-based extractor producing the primitive perturbation, a
//! posterior encoder over [delta, x], a prior network over x alone, and a
//! generative decoder emitting a perturbation scaled onto the epsilon-sphere.
//! Posterior and prior are diagonal Gaussians; their KL divergence is the
//! regularizer that lets the prior stand in for the posterior at test time,
//! when labels (and hence gradients) are unavailable.

use crate::error::{Result, SvatError};
use crate::model::{affine, mlp_tanh, BoundParams, Model};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VpgConfig {
    /// Perturbation radius (l2).
    pub epsilon: f64,
    /// Latent dimension H. The experiments behind the method do not pin this;
    /// 16 is this crate's default.
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Default for VpgConfig {
    fn default() -> Self {
        VpgConfig {
            epsilon: 0.05,
            latent_dim: 16,
            encoder_hidden: vec![128, 128],
            prior_hidden: vec![128, 128],
            decoder_hidden: vec![128, 128],
        }
    }
}

impl VpgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(SvatError::Usage(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.latent_dim == 0 {
            return Err(SvatError::Usage("latent_dim must be at least 1".into()));
        }
        for (name, widths) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("prior_hidden", &self.prior_hidden),
            ("decoder_hidden", &self.decoder_hidden),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return Err(SvatError::Usage(format!(
                    "{name} needs at least one non-empty layer"
                )));
            }
        }
        Ok(())
    }
}

/// Mean/scale of a diagonal Gaussian as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(SvatError::Dimension(format!(
                "mu has {} dims, sigma {}",
                mu.len(),
                sigma.len()
            )));
        }
        if !sigma.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(SvatError::Contract(
                "sigma must be strictly positive and finite".into(),
            ));
        }
        Ok(GaussianParams { mu, sigma })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Tape nodes of a diagonal Gaussian's mean and scale.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNodes {
    pub mu: ValueId,
    pub sigma: ValueId,
}

impl GaussianNodes {
    /// Read the forward values out of the tape.
    pub fn values(&self, tape: &Tape) -> Result<GaussianParams> {
        GaussianParams::new(
            tape.value(self.mu).values().to_vec(),
            tape.value(self.sigma).values().to_vec(),
        )
    }
}

/// Fast-gradient extraction of the primitive perturbation:
/// `epsilon * g / |g|_2`, zero when the gradient vanishes. The result is a
/// constant with respect to later differentiation.
pub fn extract_posterior_delta(grad_x: &[f64], epsilon: f64) -> Vec<f64> {
    let norm: f64 = grad_x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; grad_x.len()];
    }
    grad_x.iter().map(|v| epsilon * v / norm).collect()
}

fn gauss_head(
    tape: &mut Tape,
    bound: &BoundParams,
    head: &crate::model::GaussHeadLayout,
    hidden: ValueId,
) -> Result<GaussianNodes> {
    let mu = affine(tape, bound, &head.mu, hidden)?;
    let sigma_pre = affine(tape, bound, &head.sigma, hidden)?;
    let sigma = tape.softplus(sigma_pre)?;
    Ok(GaussianNodes { mu, sigma })
}

/// Posterior encoder over the concatenated `[delta_post, x]`.
pub fn encode_posterior(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundParams,
    delta_post: ValueId,
    x: ValueId,
) -> Result<GaussianNodes> {
    let joint = tape.concat(&[delta_post, x])?;
    let hidden = mlp_tanh(tape, bound, &model.vpg.posterior, joint)?;
    gauss_head(tape, bound, &model.vpg.posterior_gauss, hidden)
}

/// Prior network conditioned on the embedding alone.
pub fn encode_prior(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundParams,
    x: ValueId,
) -> Result<GaussianNodes> {
    let hidden = mlp_tanh(tape, bound, &model.vpg.prior, x)?;
    gauss_head(tape, bound, &model.vpg.prior_gauss, hidden)
}

/// Location-scale reparameterization `z = mu + sigma * noise`; the caller
/// supplies standard-normal noise so gradients flow through mu and sigma.
pub fn sample_z(tape: &mut Tape, gauss: &GaussianNodes, noise: &[f64]) -> Result<ValueId> {
    if noise.len() != tape.value(gauss.mu).numel() {
        return Err(SvatError::Dimension(format!(
            "noise has {} dims, latent has {}",
            noise.len(),
            tape.value(gauss.mu).numel()
        )));
    }
    let noise_id = tape.constant(Tensor::vector(noise.to_vec())?);
    let scaled = tape.mul(gauss.sigma, noise_id)?;
    tape.add(gauss.mu, scaled)
}

/// Decode `[z, x]` into a perturbation on the epsilon-sphere:
/// `delta = epsilon * g / |g|_2`, or exactly zero if the decoder output
/// vanishes.
pub fn decode_delta(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundParams,
    z: ValueId,
    x: ValueId,
    epsilon: f64,
) -> Result<ValueId> {
    let joint = tape.concat(&[z, x])?;
    let hidden = mlp_tanh(tape, bound, &model.vpg.decoder, joint)?;
    let g = affine(tape, bound, &model.vpg.decoder_out, hidden)?;
    let norm = tape.l2_norm(g)?;
    if tape.scalar_value(norm)? == 0.0 {
        let dim = tape.value(g).numel();
        return Ok(tape.constant(Tensor::zeros(vec![dim])));
    }
    // 1 / |g| as exp(-log |g|) keeps the whole graph in the primitive set.
    let log_norm = tape.log(norm)?;
    let neg_log = tape.scale(log_norm, -1.0)?;
    let recip = tape.exp(neg_log)?;
    let dim = tape.value(g).numel();
    let recip_vec = tape.concat(&vec![recip; dim])?;
    let unit = tape.mul(g, recip_vec)?;
    tape.scale(unit, epsilon)
}

/// Closed-form KL divergence between two diagonal Gaussians,
/// KL(post || prior), summed over dimensions.
pub fn kl_divergence(post: &GaussianParams, prior: &GaussianParams) -> Result<f64> {
    if post.dim() != prior.dim() {
        return Err(SvatError::Dimension(format!(
            "posterior has {} dims, prior {}",
            post.dim(),
            prior.dim()
        )));
    }
    let mut total = 0.0;
    for h in 0..post.dim() {
        let (mp, sp) = (post.mu[h], post.sigma[h]);
        let (mq, sq) = (prior.mu[h], prior.sigma[h]);
        total += (sq / sp).ln() + (sp * sp + (mp - mq) * (mp - mq)) / (2.0 * sq * sq) - 0.5;
    }
    Ok(total)
}

/// Same KL as [`kl_divergence`] but built on the tape for training.
pub fn kl_divergence_node(
    tape: &mut Tape,
    post: &GaussianNodes,
    prior: &GaussianNodes,
) -> Result<ValueId> {
    let dim = tape.value(post.mu).numel();
    if tape.value(prior.mu).numel() != dim {
        return Err(SvatError::Dimension(format!(
            "posterior has {} dims, prior {}",
            dim,
            tape.value(prior.mu).numel()
        )));
    }
    let log_sp = tape.log(post.sigma)?;
    let log_sq = tape.log(prior.sigma)?;
    let ratio_term = tape.sub(log_sq, log_sp)?;

    let sp2 = tape.square(post.sigma)?;
    let mu_diff = tape.sub(post.mu, prior.mu)?;
    let mu_diff2 = tape.square(mu_diff)?;
    let numer = tape.add(sp2, mu_diff2)?;
    // 1 / sigma_prior^2 as exp(-2 log sigma_prior).
    let neg2_log_sq = tape.scale(log_sq, -2.0)?;
    let inv_sq2 = tape.exp(neg2_log_sq)?;
    let frac = tape.mul(numer, inv_sq2)?;
    let half_frac = tape.scale(frac, 0.5)?;

    let partial = tape.add(ratio_term, half_frac)?;
    let halves = tape.constant(Tensor::from_parts_unchecked(vec![dim], vec![0.5; dim]));
    let per_dim = tape.sub(partial, halves)?;
    tape.sum(per_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::ranker::{BackboneConfig, PsiKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn test_model(seed: u64) -> Model {
        let config = ModelConfig {
            lookback: 2,
            feature_dim: crate::data::FEATURE_DIM,
            backbone: BackboneConfig {
                psi_kind: PsiKind::Recurrent,
                embed_dim: 4,
                head_hidden: vec![5],
            },
            vpg: VpgConfig {
                epsilon: 0.05,
                latent_dim: 3,
                encoder_hidden: vec![6, 6],
                prior_hidden: vec![6, 6],
                decoder_hidden: vec![6, 6],
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::init(config, &mut rng).unwrap()
    }

    fn zeroed(mut m: Model) -> Model {
        let zeros: Vec<(String, Tensor)> = m
            .params
            .iter()
            .map(|(_, p)| (p.name.clone(), Tensor::zeros(p.tensor.shape().to_vec())))
            .collect();
        m.load_values(&zeros).unwrap();
        m
    }

    #[test]
    fn extractor_normalizes_and_scales() {
        let delta = extract_posterior_delta(&[3.0, 4.0], 0.1);
        assert!((delta[0] - 0.06).abs() < 1e-15);
        assert!((delta[1] - 0.08).abs() < 1e-15);
        let norm: f64 = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 0.1).abs() < 1e-15);
    }

    #[test]
    fn extractor_zero_gradient_gives_zero() {
        assert_eq!(extract_posterior_delta(&[0.0, 0.0, 0.0], 0.1), vec![0.0; 3]);
    }

    #[test]
    fn zeroed_encoder_outputs_standard_softplus_gaussian() {
        let m = zeroed(test_model(1));
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.9, 0.0]).unwrap());
        let d = tape.constant(Tensor::vector(vec![0.01, 0.0, 0.0, 0.0]).unwrap());
        let post = encode_posterior(&m, &mut tape, &bound, d, x).unwrap();
        let vals = post.values(&tape).unwrap();
        let ln2 = 2.0_f64.ln();
        assert!(vals.mu().iter().all(|&v| v == 0.0));
        assert!(vals.sigma().iter().all(|&s| (s - ln2).abs() < 1e-15));
    }

    #[test]
    fn sigma_strictly_positive_for_random_inputs() {
        let m = test_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape, false);
            let xv: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let dv: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 0.1).collect();
            let x = tape.constant(Tensor::vector(xv).unwrap());
            let d = tape.constant(Tensor::vector(dv).unwrap());
            let post = encode_posterior(&m, &mut tape, &bound, d, x).unwrap();
            assert!(post.values(&tape).is_ok());
        }
    }

    #[test]
    fn prior_depends_only_on_embedding() {
        let m = test_model(3);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.9, 0.0]).unwrap());
        let a = encode_prior(&m, &mut tape, &bound, x).unwrap();
        let b = encode_prior(&m, &mut tape, &bound, x).unwrap();
        assert_eq!(
            tape.value(a.mu).values(),
            tape.value(b.mu).values()
        );

        let y = tape.constant(Tensor::vector(vec![-1.0, 0.4, 0.2, 0.8]).unwrap());
        let c = encode_prior(&m, &mut tape, &bound, y).unwrap();
        assert_ne!(tape.value(a.mu).values(), tape.value(c.mu).values());
    }

    #[test]
    fn reparameterization_with_zero_noise_returns_mu() {
        let m = test_model(4);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.5, 0.5, -0.5, 1.0]).unwrap());
        let prior = encode_prior(&m, &mut tape, &bound, x).unwrap();
        let z = sample_z(&mut tape, &prior, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(tape.value(z).values(), tape.value(prior.mu).values());
    }

    #[test]
    fn reparameterized_mean_converges_to_mu() {
        let m = test_model(5);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.5, 0.5, -0.5, 1.0]).unwrap());
        let prior = encode_prior(&m, &mut tape, &bound, x).unwrap();
        let gauss = prior.values(&tape).unwrap();

        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut mean = vec![0.0; 3];
        for _ in 0..n {
            let noise: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = sample_z(&mut tape, &prior, &noise).unwrap();
            for (acc, v) in mean.iter_mut().zip(tape.value(z).values()) {
                *acc += v;
            }
        }
        for h in 0..3 {
            let emp = mean[h] / n as f64;
            let tol = 3.0 * gauss.sigma()[h] / (n as f64).sqrt();
            assert!(
                (emp - gauss.mu()[h]).abs() < tol,
                "dim {h}: {emp} vs {} (tol {tol})",
                gauss.mu()[h]
            );
        }
    }

    #[test]
    fn decoded_delta_sits_on_the_epsilon_sphere() {
        let m = test_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &eps in &[0.001, 0.01, 0.1] {
            for _ in 0..20 {
                let mut tape = Tape::new();
                let bound = m.bind(&mut tape, false);
                let xv: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let zv: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
                let x = tape.constant(Tensor::vector(xv).unwrap());
                let z = tape.constant(Tensor::vector(zv).unwrap());
                let delta = decode_delta(&m, &mut tape, &bound, z, x, eps).unwrap();
                let norm: f64 = tape
                    .value(delta)
                    .values()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                assert!((norm - eps).abs() < 1e-9, "norm {norm} vs eps {eps}");
            }
        }
    }

    #[test]
    fn zero_decoder_output_gives_zero_delta() {
        let m = zeroed(test_model(7));
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let z = tape.constant(Tensor::vector(vec![1.0, -1.0, 0.5]).unwrap());
        let delta = decode_delta(&m, &mut tape, &bound, z, x, 0.05).unwrap();
        assert_eq!(tape.value(delta).values(), &[0.0; 4]);
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let g = GaussianParams::new(vec![0.4, -1.0], vec![0.7, 2.0]).unwrap();
        assert!(kl_divergence(&g, &g).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn kl_standard_case_is_half() {
        let post = GaussianParams::new(vec![1.0], vec![1.0]).unwrap();
        let prior = GaussianParams::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(kl_divergence(&post, &prior).unwrap(), 0.5);
    }

    #[test]
    fn kl_nonnegative_over_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let dim = 1 + (rng.random::<u32>() % 4) as usize;
            let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
                let mu = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let sigma = (0..dim).map(|_| rng.random::<f64>() * 3.0 + 0.01).collect();
                (mu, sigma)
            };
            let (mp, sp) = draw(&mut rng);
            let (mq, sq) = draw(&mut rng);
            let post = GaussianParams::new(mp, sp).unwrap();
            let prior = GaussianParams::new(mq, sq).unwrap();
            assert!(kl_divergence(&post, &prior).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn kl_node_matches_closed_form() {
        let m = test_model(8);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.5, -0.25, 0.75, 0.1]).unwrap());
        let d = tape.constant(Tensor::vector(vec![0.01, 0.02, -0.01, 0.0]).unwrap());
        let post = encode_posterior(&m, &mut tape, &bound, d, x).unwrap();
        let prior = encode_prior(&m, &mut tape, &bound, x).unwrap();
        let node = kl_divergence_node(&mut tape, &post, &prior).unwrap();
        let direct = kl_divergence(
            &post.values(&tape).unwrap(),
            &prior.values(&tape).unwrap(),
        )
        .unwrap();
        assert!((tape.scalar_value(node).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn posterior_and_prior_deltas_are_shape_compatible() {
        // Swapping the latent source must be a drop-in change.
        let m = test_model(9);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(vec![0.5, -0.25, 0.75, 0.1]).unwrap());
        let d = tape.constant(Tensor::vector(vec![0.01, 0.02, -0.01, 0.0]).unwrap());
        let post = encode_posterior(&m, &mut tape, &bound, d, x).unwrap();
        let prior = encode_prior(&m, &mut tape, &bound, x).unwrap();
        let noise = [0.3, -0.6, 0.2];
        let z_post = sample_z(&mut tape, &post, &noise).unwrap();
        let z_prior = sample_z(&mut tape, &prior, &noise).unwrap();
        let d_post = decode_delta(&m, &mut tape, &bound, z_post, x, 0.05).unwrap();
        let d_prior = decode_delta(&m, &mut tape, &bound, z_prior, x, 0.05).unwrap();
        assert_eq!(tape.value(d_post).shape(), tape.value(d_prior).shape());
    }
}
