use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossBreakdown, PairBatch};
use super::network::{FusionModel, Mode};
use super::FusionConfig;
use crate::error::{FusidError, Result};
use crate::optim::Optimizer;
use crate::pairmine::{LabeledPair, PairSet};
use crate::tensor::Matrix;
use crate::{rng, TrackId};

/// Per-epoch means over mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionEpoch {
    pub epoch: usize,
    pub cont: f64,
    pub cov: f64,
    pub var: f64,
    pub total: f64,
}

/// Splits positives and negatives into the same number of batches so every
/// batch holds at least one of each.
fn stratified_batches(
    pos: &[LabeledPair],
    neg: &[LabeledPair],
    batch_size: usize,
) -> Vec<Vec<LabeledPair>> {
    let half_pos = batch_size.div_ceil(2);
    let half_neg = (batch_size - half_pos).max(1);
    let wanted = pos.len().div_ceil(half_pos).max(neg.len().div_ceil(half_neg));
    let n_batches = wanted.min(pos.len()).min(neg.len()).max(1);
    let chunk = |items: &[LabeledPair], b: usize| {
        let lo = b * items.len() / n_batches;
        let hi = (b + 1) * items.len() / n_batches;
        items[lo..hi].to_vec()
    };
    (0..n_batches)
        .map(|b| {
            let mut batch = chunk(pos, b);
            batch.extend(chunk(neg, b));
            batch
        })
        .collect()
}

/// Mini-batch training of the fusion head on labeled pairs.
///
/// `features` maps every track to its concatenated modality vector.
pub fn train_fusion(
    features: &BTreeMap<TrackId, Vec<f64>>,
    pairs: &PairSet,
    cfg: &FusionConfig,
    seed: u64,
) -> Result<(FusionModel, Vec<FusionEpoch>)> {
    cfg.validate()?;
    for id in pairs.track_ids() {
        if !features.contains_key(&id) {
            return Err(FusidError::MissingFeature(id));
        }
    }
    let input_dim = features
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| FusidError::EmptyInput("no features for fusion training".into()))?;
    if let Some(declared) = cfg.input_dim {
        if declared != input_dim {
            return Err(FusidError::DimensionMismatch {
                what: "fusion input_dim".into(),
                expected: declared,
                actual: input_dim,
            });
        }
    }
    let mut pos: Vec<LabeledPair> = pairs.positives().copied().collect();
    let mut neg: Vec<LabeledPair> = pairs.negatives().copied().collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(FusidError::DegenerateBatch(
            "pair set needs both positives and negatives".into(),
        ));
    }

    let mut rng = rng::seeded(seed);
    let mut model = FusionModel::init(input_dim, cfg, &mut rng);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let batches = stratified_batches(&pos, &neg, cfg.batch_size);
        let mut sum = LossBreakdown::default();
        for (b_idx, pairs) in batches.iter().enumerate() {
            let batch = PairBatch::from_pairs(pairs, features)?;
            let (losses, grads, stats) = total_loss(&model, &batch, cfg)?;
            if !losses.total.is_finite() || !grads.is_finite() {
                return Err(FusidError::NonFinite(format!(
                    "fusion loss at epoch {epoch}, batch {b_idx} ({} pairs, {} items): \
                     cont={} cov={} var={}",
                    batch.pairs.len(),
                    batch.ids.len(),
                    losses.cont,
                    losses.cov,
                    losses.var
                )));
            }
            optimizer.step(model.trainable_mut(), grads.blocks());
            model.update_running_stats(&stats);
            sum.cont += losses.cont;
            sum.cov += losses.cov;
            sum.var += losses.var;
            sum.total += losses.total;
        }
        let k = batches.len() as f64;
        let record = FusionEpoch {
            epoch,
            cont: sum.cont / k,
            cov: sum.cov / k,
            var: sum.var / k,
            total: sum.total / k,
        };
        log::info!(
            "fusion epoch {epoch}: total {:.5} (cont {:.5}, cov {:.5}, var {:.5})",
            record.total,
            record.cont,
            record.cov,
            record.var
        );
        history.push(record);
    }
    if !model.is_finite() {
        return Err(FusidError::NonFinite("fusion parameters after training".into()));
    }
    Ok((model, history))
}

/// Eval-mode embeddings (flattened `n·d`) for every track in `features`.
pub fn embed_catalog(
    model: &FusionModel,
    features: &BTreeMap<TrackId, Vec<f64>>,
) -> Result<BTreeMap<TrackId, Vec<f64>>> {
    const CHUNK: usize = 512;
    let ids: Vec<TrackId> = features.keys().copied().collect();
    let mut out = BTreeMap::new();
    for chunk in ids.chunks(CHUNK) {
        let mut x = Matrix::zeros(chunk.len(), model.input_dim());
        for (r, id) in chunk.iter().enumerate() {
            let f = &features[id];
            if f.len() != model.input_dim() {
                return Err(FusidError::DimensionMismatch {
                    what: format!("features of track {id}"),
                    expected: model.input_dim(),
                    actual: f.len(),
                });
            }
            x.row_mut(r).copy_from_slice(f);
        }
        let e = model.forward(&x, Mode::Eval)?;
        for (r, id) in chunk.iter().enumerate() {
            out.insert(*id, e.row(r).to_vec());
        }
    }
    Ok(out)
}
