//! Playlist co-occurrence embeddings: skip-gram with negative sampling where
//! tracks play the role of words and playlists the role of documents.

use std::collections::{BTreeSet, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Playlist;
use crate::error::{FusidError, Result};
use crate::io::TrackVectors;
use crate::{rng, TrackId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlayvecConfig {
    pub dim: usize,
    pub window: usize,
    pub neg_k: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for PlayvecConfig {
    fn default() -> Self {
        PlayvecConfig {
            dim: 128,
            window: 5,
            neg_k: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayvecModel {
    dim: usize,
    ids: Vec<TrackId>,
    index: HashMap<TrackId, usize>,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl PlayvecModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Track ids covered by the model, ascending.
    pub fn ids(&self) -> &[TrackId] {
        &self.ids
    }

    pub fn input_vector(&self, id: TrackId) -> Option<&[f64]> {
        self.index
            .get(&id)
            .map(|&i| &self.input[i * self.dim..(i + 1) * self.dim])
    }

    pub fn output_vector(&self, id: TrackId) -> Option<&[f64]> {
        self.index
            .get(&id)
            .map(|&i| &self.output[i * self.dim..(i + 1) * self.dim])
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|v| v.is_finite())
    }

    pub fn to_track_vectors(&self) -> TrackVectors {
        TrackVectors {
            dim: self.dim,
            ids: self.ids.clone(),
            values: self.input.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// The playlist feature of a track: its input vector.
pub fn playlist_feature(model: &PlayvecModel, id: TrackId) -> Result<&[f64]> {
    model.input_vector(id).ok_or(FusidError::ColdStart(id))
}

/// Loss and gradients of one positive pair plus its negatives:
/// `-ln σ(c·p) - Σ ln σ(-c·n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub center: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pair_objective(center: &[f64], positive: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let dim = center.len();
    let mut g_center = vec![0.0; dim];

    let s = dot(center, positive);
    let mut loss = -log_sigmoid(s);
    let coef = sigmoid(s) - 1.0;
    let g_positive: Vec<f64> = center.iter().map(|c| coef * c).collect();
    for (g, p) in g_center.iter_mut().zip(positive) {
        *g += coef * p;
    }

    let g_negatives = negatives
        .iter()
        .map(|neg| {
            let s = dot(center, neg);
            loss -= log_sigmoid(-s);
            let coef = sigmoid(s);
            for (g, n) in g_center.iter_mut().zip(neg.iter()) {
                *g += coef * n;
            }
            center.iter().map(|c| coef * c).collect()
        })
        .collect();

    PairGradient {
        loss,
        center: g_center,
        positive: g_positive,
        negatives: g_negatives,
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayvecEpoch {
    pub epoch: usize,
    pub mean_pair_loss: f64,
    pub updates: u64,
}

/// Trains skip-gram embeddings over `playlists`.
///
/// Every (center, context) pair within `window` positions gets one positive
/// update and `neg_k` negative updates drawn from the unigram distribution
/// raised to 0.75. The learning rate decays linearly to `1e-4 · lr`.
pub fn train_playvec(
    playlists: &[&Playlist],
    cfg: &PlayvecConfig,
    seed: u64,
) -> Result<(PlayvecModel, Vec<PlayvecEpoch>)> {
    if cfg.dim == 0 || cfg.window == 0 || cfg.neg_k == 0 {
        return Err(FusidError::InvalidConfig(
            "playvec dim, window and neg_k must be >= 1".into(),
        ));
    }
    let vocab: BTreeSet<TrackId> = playlists.iter().flat_map(|p| p.tracks.iter().copied()).collect();
    if vocab.is_empty() {
        return Err(FusidError::EmptyInput("no training playlists for playvec".into()));
    }
    let ids: Vec<TrackId> = vocab.into_iter().collect();
    let index: HashMap<TrackId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut counts = vec![0u64; ids.len()];
    for p in playlists {
        for t in &p.tracks {
            counts[index[t]] += 1;
        }
    }
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .expect("positive unigram weights");

    let mut rng = rng::seeded(seed);
    let dim = cfg.dim;
    let bound = 0.5 / dim as f64;
    let mut model = PlayvecModel {
        dim,
        input: (0..ids.len() * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect(),
        output: vec![0.0; ids.len() * dim],
        ids,
        index,
    };

    let sequences: Vec<Vec<usize>> = playlists
        .iter()
        .map(|p| p.tracks.iter().map(|t| model.index[t]).collect())
        .collect();
    let positions_per_epoch: usize = sequences.iter().map(Vec::len).sum();
    let total_positions = (positions_per_epoch * cfg.epochs).max(1) as f64;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut processed = 0usize;
    let mut negs = vec![0usize; cfg.neg_k];
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut updates) = (0.0, 0u64);
        for seq in &sequences {
            for (pos, &center) in seq.iter().enumerate() {
                let lr = cfg.lr * (1.0 - processed as f64 / total_positions).max(1e-4);
                processed += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(seq.len());
                for ctx_pos in lo..hi {
                    let context = seq[ctx_pos];
                    if ctx_pos == pos || context == center {
                        continue;
                    }
                    let mut n_negs = 0;
                    for _ in 0..cfg.neg_k {
                        let candidate = noise.sample(&mut rng);
                        if candidate != context {
                            negs[n_negs] = candidate;
                            n_negs += 1;
                        }
                    }
                    loss_sum += sgd_step(&mut model, center, context, &negs[..n_negs], lr);
                    updates += 1;
                }
            }
        }
        if !model.is_finite() {
            return Err(FusidError::NonFinite(format!(
                "playvec parameters after epoch {}",
                epoch + 1
            )));
        }
        history.push(PlayvecEpoch {
            epoch: epoch + 1,
            mean_pair_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            updates,
        });
    }
    Ok((model, history))
}

fn sgd_step(model: &mut PlayvecModel, center: usize, context: usize, negs: &[usize], lr: f64) -> f64 {
    let dim = model.dim;
    let row = |buf: &[f64], i: usize| buf[i * dim..(i + 1) * dim].to_vec();
    let c = row(&model.input, center);
    let p = row(&model.output, context);
    let neg_rows: Vec<Vec<f64>> = negs.iter().map(|&n| row(&model.output, n)).collect();
    let neg_refs: Vec<&[f64]> = neg_rows.iter().map(Vec::as_slice).collect();
    let grad = pair_objective(&c, &p, &neg_refs);

    let apply = |buf: &mut [f64], i: usize, g: &[f64]| {
        for (w, gi) in buf[i * dim..(i + 1) * dim].iter_mut().zip(g) {
            *w -= lr * gi;
        }
    };
    apply(&mut model.output, context, &grad.positive);
    for (&n, g) in negs.iter().zip(&grad.negatives) {
        apply(&mut model.output, n, g);
    }
    apply(&mut model.input, center, &grad.center);
    grad.loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(id: u64, tracks: &[TrackId]) -> Playlist {
        Playlist {
            playlist_id: id,
            tracks: tracks.to_vec(),
        }
    }

    #[test]
    fn zero_vectors_give_ln2_per_term() {
        let z = vec![0.0; 4];
        let g = pair_objective(&z, &z, &[]);
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let g = pair_objective(&z, &z, &[&z, &z]);
        assert!((g.loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let mut rng = rng::seeded(5);
        for _ in 0..20 {
            let dim = 6;
            let mut params: Vec<f64> = (0..dim * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |p: &[f64]| {
                pair_objective(&p[..dim], &p[dim..2 * dim], &[&p[2 * dim..3 * dim], &p[3 * dim..]]).loss
            };
            let g = pair_objective(
                &params[..dim],
                &params[dim..2 * dim],
                &[&params[2 * dim..3 * dim], &params[3 * dim..]],
            );
            let analytic: Vec<f64> = g
                .center
                .iter()
                .chain(&g.positive)
                .chain(g.negatives.iter().flatten())
                .copied()
                .collect();
            let h = 1e-5;
            for i in 0..params.len() {
                let orig = params[i];
                params[i] = orig + h;
                let up = loss(&params);
                params[i] = orig - h;
                let down = loss(&params);
                params[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "param {i}: numeric {numeric} analytic {}", analytic[i]);
            }
        }
    }

    #[test]
    fn cliques_separate() {
        let mut rng = rng::seeded(1);
        let mut playlists = Vec::new();
        for i in 0..200u64 {
            let base = if i % 2 == 0 { 0 } else { 10 };
            let tracks: Vec<TrackId> = (0..8).map(|_| base + rng.random_range(0..10)).collect();
            playlists.push(pl(i, &tracks));
        }
        let refs: Vec<&Playlist> = playlists.iter().collect();
        let cfg = PlayvecConfig {
            dim: 16,
            window: 3,
            neg_k: 5,
            epochs: 5,
            lr: 0.05,
        };
        let (model, history) = train_playvec(&refs, &cfg, 9).unwrap();
        assert_eq!(history.len(), 5);
        let cos = |a: TrackId, b: TrackId| {
            let (x, y) = (model.input_vector(a).unwrap(), model.input_vector(b).unwrap());
            dot(x, y) / (dot(x, x).sqrt() * dot(y, y).sqrt())
        };
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
        for a in 0..20 {
            for b in a + 1..20 {
                if (a < 10) == (b < 10) {
                    within += cos(a, b);
                    nw += 1;
                } else {
                    cross += cos(a, b);
                    nc += 1;
                }
            }
        }
        assert!(within / nw as f64 > cross / nc as f64);
    }

    #[test]
    fn training_is_deterministic() {
        let playlists = [pl(0, &[1, 2, 3, 4]), pl(1, &[3, 4, 5, 1]), pl(2, &[2, 5, 1])];
        let refs: Vec<&Playlist> = playlists.iter().collect();
        let cfg = PlayvecConfig {
            dim: 8,
            ..PlayvecConfig::default()
        };
        let a = train_playvec(&refs, &cfg, 3).unwrap();
        let b = train_playvec(&refs, &cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn features_and_cold_start() {
        let playlists = [pl(0, &[1, 2, 3])];
        let refs: Vec<&Playlist> = playlists.iter().collect();
        let (model, _) = train_playvec(&refs, &PlayvecConfig::default(), 0).unwrap();
        assert_eq!(playlist_feature(&model, 2).unwrap().len(), 128);
        assert!(matches!(playlist_feature(&model, 42), Err(FusidError::ColdStart(42))));
        assert_eq!(model.ids(), &[1, 2, 3]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train_playvec(&[], &PlayvecConfig::default(), 0),
            Err(FusidError::EmptyInput(_))
        ));
    }
}
