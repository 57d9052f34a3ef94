//! Named, shaped, checkpointable learnable parameters.
//!
//! Parameters are split into two groups: the backbone (transformation plus
//! scoring head) and the perturbation generator. Both are updated from the
//! same combined objective, but ablations and checkpoints need to tell them
//! apart.

use crate::error::{Result, SvatError};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Ranking model parameters (transformation + scoring head).
    Backbone,
    /// Perturbation generator parameters (encoders + decoder).
    Generator,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Index of a parameter inside its store; stable across binds and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn register(&mut self, name: &str, group: ParamGroup, tensor: Tensor) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(SvatError::Usage(format!("duplicate parameter {name}")));
        }
        self.params.push(Param {
            name: name.to_string(),
            group,
            tensor,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn by_name(&self, name: &str) -> Option<(ParamId, &Param)> {
        self.params
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].tensor.values_mut()
    }

    /// Register every parameter on a tape. `trainable` decides whether the
    /// leaves are gradient-tracked (training) or constants (inference).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let ids = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), trainable))
            .collect();
        BoundParams { ids }
    }
}

/// Tape handles for one bind of a [`ParameterStore`], aligned by [`ParamId`].
pub struct BoundParams {
    ids: Vec<ValueId>,
}

impl BoundParams {
    pub fn id(&self, param: ParamId) -> ValueId {
        self.ids[param.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, ValueId)> + '_ {
        self.ids.iter().enumerate().map(|(i, &v)| (ParamId(i), v))
    }
}

/// Uniform Glorot initialization for a weight matrix of shape `[rows, cols]`.
pub fn glorot_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
        .collect();
    Tensor::from_parts_unchecked(vec![rows, cols], values)
}

pub fn zero_vector(n: usize) -> Tensor {
    Tensor::zeros(vec![n])
}
