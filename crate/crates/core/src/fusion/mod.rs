//! The fusion network: a projection head mapping concatenated modality
//! features to `n` sub-embeddings of dimension `d`, trained with a
//! contrastive term plus block-wise covariance and variance regularizers.
//!
//! Layout: `Linear(input → hidden) → BatchNorm → ReLU → Linear(hidden → n·d) → LayerNorm`.

mod file;
pub mod loss;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::optim::OptimizerKind;

pub use loss::{
    contrastive_batch, contrastive_loss, covariance_loss, covariance_loss_with_grad, total_loss,
    variance_loss, variance_loss_with_grad, LossBreakdown, PairBatch,
};
pub use network::{BatchStats, FusionGrads, FusionModel, Mode};
pub use train::{embed_catalog, train_fusion, FusionEpoch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Euclidean distance on the flattened `n·d` embedding.
    Plain,
    /// Euclidean distance divided by `sqrt(n·d)`.
    DimNormalized,
}

/// Axis of the output layer normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerNormMode {
    /// One normalization over all `n·d` outputs.
    Full,
    /// Each sub-embedding normalized on its own.
    PerSubEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Width of the concatenated features; inferred from the data when unset.
    pub input_dim: Option<usize>,
    pub hidden_dim: usize,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub distance_mode: DistanceMode,
    pub layer_norm: LayerNormMode,
    pub optimizer: OptimizerKind,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            input_dim: None,
            hidden_dim: 2048,
            n: 5,
            d: 128,
            alpha: 0.2,
            gamma: 1.0,
            eps: 1e-4,
            batch_size: 128,
            lr: 5e-4,
            epochs: 10,
            distance_mode: DistanceMode::DimNormalized,
            layer_norm: LayerNormMode::Full,
            optimizer: OptimizerKind::Sgd,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::FusidError::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 || self.n == 0 || self.d == 0 || self.input_dim == Some(0) {
            return bad("fusion dimensions must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if !(self.gamma > 0.0) || !(self.eps > 0.0) {
            return bad("gamma and eps must be > 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        Ok(())
    }
}
