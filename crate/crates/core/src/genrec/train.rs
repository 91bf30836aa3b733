//! Next-token training over windowed playlist sequences.

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::RecModel;
use super::{training_windows, GenrecConfig, TokenVocab};
use crate::corpus::Playlist;
use crate::error::{FusidError, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::pq::SemanticId;
use crate::{rng, TrackId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecEpoch {
    pub epoch: usize,
    /// Mean next-token cross-entropy over the epoch's target tokens.
    pub mean_token_loss: f64,
}

/// Trains with Adam on batches of windows, each batch's loss being the mean
/// cross-entropy over its target tokens. Single-threaded and deterministic.
pub fn train_recmodel(
    playlists: &[&Playlist],
    sids: &BTreeMap<TrackId, SemanticId>,
    vocab: &TokenVocab,
    cfg: &GenrecConfig,
    seed: u64,
) -> Result<(RecModel, Vec<RecEpoch>)> {
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.ff_mult == 0 {
        return Err(FusidError::InvalidConfig("genrec batch_size, epochs and ff_mult must be >= 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(FusidError::InvalidConfig(format!("genrec lr must be positive, got {}", cfg.lr)));
    }
    let mut windows = Vec::new();
    for p in playlists {
        windows.extend(training_windows(&p.tracks, sids, vocab, cfg.max_len)?);
    }
    windows.retain(|w| w.len() >= 2);
    if windows.is_empty() {
        return Err(FusidError::EmptyInput("no training sequences for the recommender".into()));
    }

    let mut rng = rng::seeded(seed);
    let mut model = RecModel::init(cfg.dims(vocab), &mut rng)?;
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.lr);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut token_count) = (0.0, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let targets: usize = batch.iter().map(|&i| windows[i].len() - 1).sum();
            let scale = 1.0 / targets as f64;
            let mut grads = RecModel::zeros(model.dims);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.loss_and_grad(&windows[i], scale, &mut grads)?;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(FusidError::NonFinite(format!(
                    "recommender loss or gradient at epoch {epoch}, batch {}",
                    bi + 1
                )));
            }
            opt.step(model.params_mut(), grads.params());
            loss_sum += batch_loss;
            token_count += targets;
        }
        if !model.is_finite() {
            return Err(FusidError::NonFinite(format!("recommender parameters after epoch {epoch}")));
        }
        let mean = loss_sum / token_count as f64;
        info!("genrec epoch {epoch}: mean token loss {mean:.4}");
        history.push(RecEpoch { epoch, mean_token_loss: mean });
    }
    Ok((model, history))
}
