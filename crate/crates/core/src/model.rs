//! Model assembly: configuration, parameter layout and initialization for the
//! ranking backbone and the perturbation generator.
//!
//! Parameters are registered in a fixed order with stable names, so a seed
//! pins the whole initialization and checkpoints can restore by name.

use crate::data::FEATURE_DIM;
use crate::error::{Result, SvatError};
use crate::params::{glorot_matrix, zero_vector, ParamGroup, ParamId, ParameterStore};
use crate::ranker::{BackboneConfig, PsiKind};
use crate::tape::{Tape, ValueId};
use crate::vpg::VpgConfig;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::params::BoundParams;

#[derive(Debug, Clone, Copy)]
pub struct AffineLayout {
    pub w: ParamId,
    pub b: ParamId,
}

/// A stack of tanh-activated affine layers.
#[derive(Debug, Clone)]
pub struct MlpLayout {
    pub layers: Vec<AffineLayout>,
}

/// Minimal gated recurrent cell: update gate plus candidate state.
#[derive(Debug, Clone, Copy)]
pub struct MguLayout {
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub b_update: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
}

#[derive(Debug, Clone)]
pub enum PsiLayout {
    Concat,
    Recurrent(MguLayout),
}

#[derive(Debug, Clone)]
pub struct BackboneLayout {
    pub psi: PsiLayout,
    pub head_hidden: MlpLayout,
    pub head_out: AffineLayout,
}

#[derive(Debug, Clone)]
pub struct GaussHeadLayout {
    pub mu: AffineLayout,
    pub sigma: AffineLayout,
}

#[derive(Debug, Clone)]
pub struct VpgLayout {
    pub posterior: MlpLayout,
    pub posterior_gauss: GaussHeadLayout,
    pub prior: MlpLayout,
    pub prior_gauss: GaussHeadLayout,
    pub decoder: MlpLayout,
    pub decoder_out: AffineLayout,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub lookback: usize,
    /// Features per window row; panels always carry [`FEATURE_DIM`].
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    pub backbone: BackboneConfig,
    pub vpg: VpgConfig,
}

fn default_feature_dim() -> usize {
    FEATURE_DIM
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(SvatError::Usage("lookback must be at least 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(SvatError::Usage("feature_dim must be at least 1".into()));
        }
        self.backbone.validate(self.lookback, self.feature_dim)?;
        self.vpg.validate()?;
        Ok(())
    }
}

/// The full set of learnable state plus its wiring.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub backbone: BackboneLayout,
    pub vpg: VpgLayout,
}

impl Model {
    /// Initialize all parameters from `rng`: Glorot-uniform weights, zero
    /// biases. Registration order is fixed, so one seed determines every
    /// value.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Model> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let d_in = config.feature_dim;
        let embed = config.backbone.embed_dim;
        let latent = config.vpg.latent_dim;

        let psi = match config.backbone.psi_kind {
            PsiKind::Concat => PsiLayout::Concat,
            PsiKind::Recurrent => PsiLayout::Recurrent(MguLayout {
                w_update: register_matrix(&mut params, rng, "psi.w_update", ParamGroup::Backbone, embed, d_in)?,
                u_update: register_matrix(&mut params, rng, "psi.u_update", ParamGroup::Backbone, embed, embed)?,
                b_update: register_bias(&mut params, "psi.b_update", ParamGroup::Backbone, embed)?,
                w_cand: register_matrix(&mut params, rng, "psi.w_cand", ParamGroup::Backbone, embed, d_in)?,
                u_cand: register_matrix(&mut params, rng, "psi.u_cand", ParamGroup::Backbone, embed, embed)?,
                b_cand: register_bias(&mut params, "psi.b_cand", ParamGroup::Backbone, embed)?,
            }),
        };

        let head_hidden = register_mlp(
            &mut params,
            rng,
            "head",
            ParamGroup::Backbone,
            embed,
            &config.backbone.head_hidden,
        )?;
        let head_last = *config.backbone.head_hidden.last().expect("validated");
        let head_out = AffineLayout {
            w: register_matrix(&mut params, rng, "head.out.w", ParamGroup::Backbone, 1, head_last)?,
            b: register_bias(&mut params, "head.out.b", ParamGroup::Backbone, 1)?,
        };

        let posterior = register_mlp(
            &mut params,
            rng,
            "vpg.post",
            ParamGroup::Generator,
            2 * embed,
            &config.vpg.encoder_hidden,
        )?;
        let posterior_gauss = register_gauss_head(
            &mut params,
            rng,
            "vpg.post",
            *config.vpg.encoder_hidden.last().expect("validated"),
            latent,
        )?;
        let prior = register_mlp(
            &mut params,
            rng,
            "vpg.prior",
            ParamGroup::Generator,
            embed,
            &config.vpg.prior_hidden,
        )?;
        let prior_gauss = register_gauss_head(
            &mut params,
            rng,
            "vpg.prior",
            *config.vpg.prior_hidden.last().expect("validated"),
            latent,
        )?;
        let decoder = register_mlp(
            &mut params,
            rng,
            "vpg.gen",
            ParamGroup::Generator,
            latent + embed,
            &config.vpg.decoder_hidden,
        )?;
        let dec_last = *config.vpg.decoder_hidden.last().expect("validated");
        let decoder_out = AffineLayout {
            w: register_matrix(&mut params, rng, "vpg.gen.out.w", ParamGroup::Generator, embed, dec_last)?,
            b: register_bias(&mut params, "vpg.gen.out.b", ParamGroup::Generator, embed)?,
        };

        Ok(Model {
            config,
            params,
            backbone: BackboneLayout {
                psi,
                head_hidden,
                head_out,
            },
            vpg: VpgLayout {
                posterior,
                posterior_gauss,
                prior,
                prior_gauss,
                decoder,
                decoder_out,
            },
        })
    }

    /// Overwrite parameter values by name, e.g. from a checkpoint. Every
    /// registered parameter must be supplied with a matching shape.
    pub fn load_values(&mut self, named: &[(String, crate::tensor::Tensor)]) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(SvatError::CheckpointFormat(format!(
                "checkpoint carries {} parameters, model has {}",
                named.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in named {
            let (id, current) = self.params.by_name(name).ok_or_else(|| {
                SvatError::CheckpointFormat(format!("unknown parameter {name}"))
            })?;
            if current.tensor.shape() != tensor.shape() {
                return Err(SvatError::CheckpointFormat(format!(
                    "parameter {name} has shape {:?}, checkpoint holds {:?}",
                    current.tensor.shape(),
                    tensor.shape()
                )));
            }
            self.params
                .values_mut(id)
                .copy_from_slice(tensor.values());
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        self.params.bind(tape, trainable)
    }
}

fn register_matrix<R: Rng>(
    params: &mut ParameterStore,
    rng: &mut R,
    name: &str,
    group: ParamGroup,
    rows: usize,
    cols: usize,
) -> Result<ParamId> {
    params.register(name, group, glorot_matrix(rng, rows, cols))
}

fn register_bias(
    params: &mut ParameterStore,
    name: &str,
    group: ParamGroup,
    n: usize,
) -> Result<ParamId> {
    params.register(name, group, zero_vector(n))
}

fn register_mlp<R: Rng>(
    params: &mut ParameterStore,
    rng: &mut R,
    prefix: &str,
    group: ParamGroup,
    input_dim: usize,
    widths: &[usize],
) -> Result<MlpLayout> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = input_dim;
    for (i, &width) in widths.iter().enumerate() {
        layers.push(AffineLayout {
            w: register_matrix(params, rng, &format!("{prefix}.l{i}.w"), group, width, fan_in)?,
            b: register_bias(params, &format!("{prefix}.l{i}.b"), group, width)?,
        });
        fan_in = width;
    }
    Ok(MlpLayout { layers })
}

fn register_gauss_head<R: Rng>(
    params: &mut ParameterStore,
    rng: &mut R,
    prefix: &str,
    input_dim: usize,
    latent: usize,
) -> Result<GaussHeadLayout> {
    Ok(GaussHeadLayout {
        mu: AffineLayout {
            w: register_matrix(params, rng, &format!("{prefix}.mu.w"), ParamGroup::Generator, latent, input_dim)?,
            b: register_bias(params, &format!("{prefix}.mu.b"), ParamGroup::Generator, latent)?,
        },
        sigma: AffineLayout {
            w: register_matrix(params, rng, &format!("{prefix}.sigma.w"), ParamGroup::Generator, latent, input_dim)?,
            b: register_bias(params, &format!("{prefix}.sigma.b"), ParamGroup::Generator, latent)?,
        },
    })
}

/// `w x + b` on the tape.
pub(crate) fn affine(
    tape: &mut Tape,
    bound: &BoundParams,
    layout: &AffineLayout,
    x: ValueId,
) -> Result<ValueId> {
    let wx = tape.matmul(bound.id(layout.w), x)?;
    tape.add(wx, bound.id(layout.b))
}

/// Tanh MLP over the tape.
pub(crate) fn mlp_tanh(
    tape: &mut Tape,
    bound: &BoundParams,
    layout: &MlpLayout,
    mut x: ValueId,
) -> Result<ValueId> {
    for layer in &layout.layers {
        let a = affine(tape, bound, layer, x)?;
        x = tape.tanh(a)?;
    }
    Ok(x)
}
