//! Triple-symmetry graph network: message passing over node neighborhoods
//! with channel pooling across feature and label columns, plus
//! least-squares feature/label mixers.
//!
//! Node state is a pair of tensors `feat: [N, F, K]` and `lab: [N, C, K]`.
//! All weights are `K_out × K_in`, so a model applies to any `(N, F, C)`.

mod baseline;
mod checkpoint;
mod layer;
mod mixers;

pub use baseline::MeanGnn;
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_VERSION};
pub use layer::{
    aggregate, attention_scores, pool_channels, tsgnn_forward, tsgnn_layer_forward, NodeState,
};
pub use mixers::{solve_mixers, Mixers};

use rand::Rng;
use thiserror::Error;

use crate::eqlayers::Nonlinearity;
use crate::graphdata::Graph;
use crate::ndarr::{DenseArray, NdError, ReduceKind, Tape, Var};

/// Number of weight matrices per layer.
pub const WEIGHTS_PER_LAYER: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Node aggregation ψ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    #[default]
    Mean,
    Attention,
}

/// Channel pooling ν across feature or label columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Sum,
    #[default]
    Mean,
}

impl Pooling {
    pub fn reduce_kind(self) -> ReduceKind {
        match self {
            Self::Sum => ReduceKind::Sum,
            Self::Mean => ReduceKind::Mean,
        }
    }
}

/// Architecture of a [`TsGnnModel`]. `widths` has one entry per layer
/// boundary and starts and ends with 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    pub widths: Vec<usize>,
    pub aggregator: Aggregator,
    pub pooling: Pooling,
    /// Dimensionless ridge strength of the mixers.
    pub ridge: f64,
    pub nonlinearity: Nonlinearity,
    /// Whether the least-squares mixer terms are active.
    pub mixers: bool,
}

impl Arch {
    /// `layers` layers with `hidden` channels between them.
    pub fn new(layers: usize, hidden: usize, aggregator: Aggregator, pooling: Pooling) -> Self {
        let mut widths = vec![1];
        widths.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        widths.push(1);
        Self {
            widths,
            aggregator,
            pooling,
            ridge: 1e-4,
            nonlinearity: Nonlinearity::Relu,
            mixers: true,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.len() < 2 {
            return Err(ModelError::Arch("need at least one layer".into()));
        }
        if self.widths[0] != 1 || *self.widths.last().unwrap() != 1 {
            return Err(ModelError::Arch(format!(
                "first and last widths must be 1, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(ModelError::Arch("widths must be positive".into()));
        }
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(ModelError::Arch(format!(
                "ridge must be positive and finite, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Weights of one layer: `w[j]` is `W_{j+1}` with shape `K_out × K_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: Vec<DenseArray>,
    /// Present iff the aggregator is attention; length `K_out`.
    pub a_self: Option<DenseArray>,
    pub a_nbr: Option<DenseArray>,
}

impl LayerParams {
    pub fn zeros(k_in: usize, k_out: usize, attention: bool) -> Self {
        let att = attention.then(|| DenseArray::zeros(&[k_out]));
        Self {
            w: vec![DenseArray::zeros(&[k_out, k_in]); WEIGHTS_PER_LAYER],
            a_self: att.clone(),
            a_nbr: att,
        }
    }

    pub fn k_in(&self) -> usize {
        self.w[0].shape()[1]
    }

    pub fn k_out(&self) -> usize {
        self.w[0].shape()[0]
    }

    /// 1-based weight accessor matching `W_1 ..= W_16`.
    pub fn weight(&self, j: usize) -> &DenseArray {
        &self.w[j - 1]
    }

    pub fn weight_mut(&mut self, j: usize) -> &mut DenseArray {
        &mut self.w[j - 1]
    }
}

/// A trained or freshly initialized triple-symmetry GNN.
#[derive(Debug, Clone, PartialEq)]
pub struct TsGnnModel {
    pub arch: Arch,
    pub layers: Vec<LayerParams>,
}

impl TsGnnModel {
    pub fn zeros(arch: Arch) -> Result<Self, ModelError> {
        arch.validate()?;
        let attention = arch.aggregator == Aggregator::Attention;
        let layers = arch
            .widths
            .windows(2)
            .map(|w| LayerParams::zeros(w[0], w[1], attention))
            .collect();
        Ok(Self { arch, layers })
    }

    /// Uniform init in `[−s, s]`: `s = 1/sqrt(4·K_in)` for weights, since
    /// each block output sums four terms of the same input, and
    /// `s = 1/sqrt(K_out)` for attention vectors.
    pub fn init(arch: Arch, rng: &mut impl Rng) -> Result<Self, ModelError> {
        let mut m = Self::zeros(arch)?;
        for lp in &mut m.layers {
            let s = 1.0 / (4.0 * lp.k_in() as f64).sqrt();
            for w in &mut lp.w {
                w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-s..=s));
            }
            let sa = 1.0 / (lp.k_out() as f64).sqrt();
            for a in [&mut lp.a_self, &mut lp.a_nbr].into_iter().flatten() {
                a.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-sa..=sa));
            }
        }
        Ok(m)
    }

    /// Parameter names in the canonical flat order used by
    /// [`NodeModel::parameters`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, lp) in self.layers.iter().enumerate() {
            for j in 1..=WEIGHTS_PER_LAYER {
                names.push(format!("layer{i}.W{j}"));
            }
            if lp.a_self.is_some() {
                names.push(format!("layer{i}.a_self"));
                names.push(format!("layer{i}.a_nbr"));
            }
        }
        names
    }
}

/// A node classifier trainable with masked label inpainting.
pub trait NodeModel {
    /// Learnable tensors in a fixed order.
    fn parameters(&self) -> Vec<&DenseArray>;

    fn parameters_mut(&mut self) -> Vec<&mut DenseArray>;

    /// Records the forward pass on `tape` with `params` bound to the
    /// tensors of [`Self::parameters`], returning `N×C` logits.
    fn logits_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        graph: &Graph,
        y_visible: &DenseArray,
        visible: &[usize],
    ) -> Result<Var, ModelError>;
}

impl NodeModel for TsGnnModel {
    fn parameters(&self) -> Vec<&DenseArray> {
        let mut out = Vec::new();
        for lp in &self.layers {
            out.extend(lp.w.iter());
            out.extend(lp.a_self.iter());
            out.extend(lp.a_nbr.iter());
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut out = Vec::new();
        for lp in &mut self.layers {
            out.extend(lp.w.iter_mut());
            out.extend(lp.a_self.iter_mut());
            out.extend(lp.a_nbr.iter_mut());
        }
        out
    }

    fn logits_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        graph: &Graph,
        y_visible: &DenseArray,
        visible: &[usize],
    ) -> Result<Var, ModelError> {
        layer::forward_on_tape(tape, self, params, graph, y_visible, visible)
    }
}
