//! The backbone stock model: a transformation turning a lookback window into
//! an embedding, plus a scoring head shared by every stock.
//!
//! Two transformations are supported. `Concat` flattens the window row-major.
//! `Recurrent` runs a minimal gated cell over the rows
//!
//! ```text
//! u_t = sigmoid(W_u x_t + U_u h_{t-1} + b_u)
//! c_t = tanh   (W_c x_t + U_c h_{t-1} + b_c)
//! h_t = u_t * h_{t-1} + (1 - u_t) * c_t
//! ```
//!
//! starting from h_0 = 0 and returning the final hidden state. The sigmoid is
//! composed from primitives as `exp(x - softplus(x))`, which keeps the whole
//! graph inside the differentiable op set.

use crate::error::{Result, SvatError};
use crate::model::{affine, mlp_tanh, BoundParams, Model, PsiLayout};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiKind {
    Concat,
    Recurrent,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneConfig {
    pub psi_kind: PsiKind,
    /// Embedding dimension D. For `Concat` this must equal `lookback *
    /// feature_dim`; for `Recurrent` it is the hidden size.
    pub embed_dim: usize,
    /// Hidden widths of the scoring head (tanh), followed by a scalar linear
    /// output.
    pub head_hidden: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            psi_kind: PsiKind::Recurrent,
            embed_dim: 64,
            head_hidden: vec![64],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self, lookback: usize, feature_dim: usize) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(SvatError::Usage("embed_dim must be at least 1".into()));
        }
        if self.head_hidden.is_empty() || self.head_hidden.contains(&0) {
            return Err(SvatError::Usage(
                "head needs at least one non-empty hidden layer".into(),
            ));
        }
        if self.psi_kind == PsiKind::Concat && self.embed_dim != lookback * feature_dim {
            return Err(SvatError::Usage(format!(
                "concat transformation needs embed_dim = lookback * {feature_dim} = {}, got {}",
                lookback * feature_dim,
                self.embed_dim
            )));
        }
        Ok(())
    }
}

/// The embedding node plus the per-row input leaves it was built from.
pub struct EmbedOut {
    pub x: ValueId,
    /// One leaf per window row, in time order; gradient targets when
    /// `track_input` was set.
    pub input_rows: Vec<ValueId>,
}

/// Transform a `[lookback, feature_dim]` window into the embedding x.
pub fn embed(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundParams,
    window: &Tensor,
    track_input: bool,
) -> Result<EmbedOut> {
    let d = model.config.feature_dim;
    let expected = [model.config.lookback, d];
    if window.shape() != expected {
        return Err(SvatError::Dimension(format!(
            "window shape {:?}, expected {:?}",
            window.shape(),
            expected
        )));
    }
    let rows: Vec<ValueId> = window
        .values()
        .chunks(d)
        .map(|row| {
            tape.leaf(
                Tensor::from_parts_unchecked(vec![d], row.to_vec()),
                track_input,
            )
        })
        .collect();

    let x = match &model.backbone.psi {
        PsiLayout::Concat => tape.concat(&rows)?,
        PsiLayout::Recurrent(cell) => {
            let dim = model.config.backbone.embed_dim;
            let ones = tape.constant(Tensor::from_parts_unchecked(vec![dim], vec![1.0; dim]));
            let mut h = tape.constant(Tensor::zeros(vec![dim]));
            for &row in &rows {
                let wu = affine(tape, bound, &crate::model::AffineLayout { w: cell.w_update, b: cell.b_update }, row)?;
                let uu = tape.matmul(bound.id(cell.u_update), h)?;
                let pre_u = tape.add(wu, uu)?;
                let u = sigmoid_node(tape, pre_u)?;

                let wc = affine(tape, bound, &crate::model::AffineLayout { w: cell.w_cand, b: cell.b_cand }, row)?;
                let uc = tape.matmul(bound.id(cell.u_cand), h)?;
                let pre_c = tape.add(wc, uc)?;
                let c = tape.tanh(pre_c)?;

                let keep = tape.mul(u, h)?;
                let gate_rest = tape.sub(ones, u)?;
                let take = tape.mul(gate_rest, c)?;
                h = tape.add(keep, take)?;
            }
            h
        }
    };
    Ok(EmbedOut {
        x,
        input_rows: rows,
    })
}

/// Logistic sigmoid from primitives: `exp(x - softplus(x))`.
fn sigmoid_node(tape: &mut Tape, x: ValueId) -> Result<ValueId> {
    let sp = tape.softplus(x)?;
    let diff = tape.sub(x, sp)?;
    tape.exp(diff)
}

/// Score an embedding with the shared head; returns a `[1]` node.
pub fn score(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundParams,
    x: ValueId,
) -> Result<ValueId> {
    let expected = model.config.backbone.embed_dim;
    if tape.value(x).shape() != [expected] {
        return Err(SvatError::Dimension(format!(
            "embedding shape {:?}, expected [{expected}]",
            tape.value(x).shape()
        )));
    }
    let h = mlp_tanh(tape, bound, &model.backbone.head_hidden, x)?;
    affine(tape, bound, &model.backbone.head_out, h)
}

/// Score `x + delta` on the same parameters. The perturbation must respect
/// the norm budget `|delta|_2 <= epsilon + 1e-9`.
pub fn score_perturbed(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundParams,
    x: ValueId,
    delta: ValueId,
    epsilon: f64,
) -> Result<ValueId> {
    if tape.value(delta).shape() != tape.value(x).shape() {
        return Err(SvatError::Dimension(format!(
            "perturbation shape {:?} vs embedding {:?}",
            tape.value(delta).shape(),
            tape.value(x).shape()
        )));
    }
    let norm: f64 = tape
        .value(delta)
        .values()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > epsilon + 1e-9 {
        return Err(SvatError::Contract(format!(
            "perturbation norm {norm} exceeds budget {epsilon}"
        )));
    }
    let x_adv = tape.add(x, delta)?;
    score(model, tape, bound, x_adv)
}
