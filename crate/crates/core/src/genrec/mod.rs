//! Generative retrieval over semantic IDs: a decoder-only model trained on
//! playlists written as SID token sequences, exact full-catalog scoring for
//! playlist continuation, ranking metrics and two reference baselines.

mod file;
mod model;
mod score;
mod train;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Playlist;
use crate::error::{FusidError, Result};
use crate::pq::SemanticId;
use crate::{rng, TrackId};

pub use file::{read_rec_model, write_rec_model};
pub use model::{Block, KvCache, RecDims, RecModel};
pub use score::{score_candidates, score_candidates_naive, Catalog};
pub use train::{train_recmodel, RecEpoch};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
const N_SPECIAL: u32 = 3;

/// Longest playlist prefix used as evaluation context, in tracks.
pub const MAX_CONTEXT_TRACKS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenrecConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ff_mult: usize,
    pub max_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for GenrecConfig {
    fn default() -> Self {
        GenrecConfig {
            layers: 2,
            heads: 4,
            dim: 128,
            ff_mult: 4,
            max_len: 256,
            lr: 1e-3,
            batch_size: 16,
            epochs: 2,
        }
    }
}

impl GenrecConfig {
    pub fn dims(&self, vocab: &TokenVocab) -> RecDims {
        RecDims {
            vocab: vocab.size(),
            max_len: self.max_len,
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            ff_dim: self.ff_mult * self.dim,
        }
    }
}

/// Token ids: the three specials, then one id per (position, code) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub n: usize,
    pub k: usize,
}

impl TokenVocab {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(FusidError::InvalidConfig("vocabulary needs n >= 1 and k >= 1".into()));
        }
        if (N_SPECIAL as usize).saturating_add(n.saturating_mul(k)) > u32::MAX as usize {
            return Err(FusidError::InvalidConfig("vocabulary does not fit in u32 token ids".into()));
        }
        Ok(TokenVocab { n, k })
    }

    pub fn size(&self) -> usize {
        N_SPECIAL as usize + self.n * self.k
    }

    /// Token of `code` at zero-based SID position `position`.
    pub fn token(&self, position: usize, code: u32) -> u32 {
        debug_assert!(position < self.n && (code as usize) < self.k);
        N_SPECIAL + (position * self.k) as u32 + code
    }

    /// Inverse of [`TokenVocab::token`]; `None` for special or out-of-range tokens.
    pub fn decode(&self, token: u32) -> Option<(usize, u32)> {
        let t = token.checked_sub(N_SPECIAL)? as usize;
        (t < self.n * self.k).then(|| (t / self.k, (t % self.k) as u32))
    }

    pub fn encode_sid(&self, sid: &SemanticId) -> Result<Vec<u32>> {
        if sid.len() != self.n {
            return Err(FusidError::DimensionMismatch {
                what: "semantic id length".into(),
                expected: self.n,
                actual: sid.len(),
            });
        }
        sid.codes()
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if (c as usize) < self.k {
                    Ok(self.token(i, c))
                } else {
                    Err(FusidError::InvalidConfig(format!("code {c} out of range for k={}", self.k)))
                }
            })
            .collect()
    }
}

fn push_tracks(out: &mut Vec<u32>, tracks: &[TrackId], sids: &BTreeMap<TrackId, SemanticId>, vocab: &TokenVocab) -> Result<()> {
    for t in tracks {
        let sid = sids.get(t).ok_or(FusidError::MissingSid(*t))?;
        out.extend(vocab.encode_sid(sid)?);
    }
    Ok(())
}

/// `BOS`, then each track's `n` tokens in order, then `EOS` if requested.
pub fn encode_playlist(
    tracks: &[TrackId],
    sids: &BTreeMap<TrackId, SemanticId>,
    vocab: &TokenVocab,
    append_eos: bool,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(2 + tracks.len() * vocab.n);
    out.push(BOS);
    push_tracks(&mut out, tracks, sids, vocab)?;
    if append_eos {
        out.push(EOS);
    }
    Ok(out)
}

/// Recovers the SIDs of an encoded sequence, skipping `BOS`/`EOS`/`PAD`.
pub fn decode_sequence(tokens: &[u32], vocab: &TokenVocab) -> Result<Vec<SemanticId>> {
    let body: Vec<u32> = tokens.iter().copied().filter(|&t| t >= N_SPECIAL).collect();
    if !body.len().is_multiple_of(vocab.n) {
        return Err(FusidError::InvalidConfig(format!(
            "{} code tokens is not a multiple of n={}",
            body.len(),
            vocab.n
        )));
    }
    body.chunks(vocab.n)
        .map(|group| {
            let mut codes = Vec::with_capacity(vocab.n);
            for (i, &tok) in group.iter().enumerate() {
                match vocab.decode(tok) {
                    Some((pos, code)) if pos == i => codes.push(code),
                    _ => {
                        return Err(FusidError::InvalidConfig(format!(
                            "token {tok} is not a position-{i} code"
                        )))
                    }
                }
            }
            Ok(SemanticId(codes))
        })
        .collect()
}

/// Splits a playlist into training sequences of at most `max_len` tokens.
///
/// Short playlists give one `BOS … EOS` sequence. Longer ones give chunks of
/// whole tracks overlapping by half a chunk; each starts with `BOS` and only
/// the chunk holding the final track ends with `EOS`.
pub fn training_windows(
    tracks: &[TrackId],
    sids: &BTreeMap<TrackId, SemanticId>,
    vocab: &TokenVocab,
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    let n = vocab.n;
    if 2 + tracks.len() * n <= max_len {
        return Ok(vec![encode_playlist(tracks, sids, vocab, true)?]);
    }
    let per_chunk = max_len.saturating_sub(2) / n;
    if per_chunk == 0 {
        return Err(FusidError::InvalidConfig(format!(
            "max_len {max_len} cannot hold one {n}-token track plus BOS and EOS"
        )));
    }
    let stride = (per_chunk / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|s| s + per_chunk < tracks.len()).collect();
    starts.push(tracks.len() - per_chunk);
    starts
        .into_iter()
        .map(|s| {
            let end = s + per_chunk;
            let mut out = Vec::with_capacity(2 + per_chunk * n);
            out.push(BOS);
            push_tracks(&mut out, &tracks[s..end], sids, vocab)?;
            if end == tracks.len() {
                out.push(EOS);
            }
            Ok(out)
        })
        .collect()
}

/// One continuation query: a playlist prefix and the track that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub playlist_id: u64,
    pub context: Vec<TrackId>,
    pub target: TrackId,
}

impl EvalInstance {
    /// Context is the first `min(l − 1, 30)` tracks; the target is the next one.
    pub fn from_playlist(playlist: &Playlist) -> Result<Self> {
        let l = playlist.tracks.len();
        if l < 2 {
            return Err(FusidError::TooFewItems { required: 2, actual: l });
        }
        let c = (l - 1).min(MAX_CONTEXT_TRACKS);
        Ok(EvalInstance {
            playlist_id: playlist.playlist_id,
            context: playlist.tracks[..c].to_vec(),
            target: playlist.tracks[c],
        })
    }

    pub fn context_tokens(&self, sids: &BTreeMap<TrackId, SemanticId>, vocab: &TokenVocab) -> Result<Vec<u32>> {
        encode_playlist(&self.context, sids, vocab, false)
    }
}

pub fn eval_instances(playlists: &[&Playlist]) -> Result<Vec<EvalInstance>> {
    playlists.iter().map(|p| EvalInstance::from_playlist(p)).collect()
}

/// One-based rank of `target` when `scores` is sorted descending, ties going
/// to the lower track id. `scores` must be aligned with ascending `ids`.
pub fn rank_of(ids: &[TrackId], scores: &[f64], target: TrackId) -> Result<usize> {
    let t = ids.binary_search(&target).map_err(|_| FusidError::MissingSid(target))?;
    let st = scores[t];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > st || (s == st && i < t))
        .count();
    Ok(ahead + 1)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(FusidError::UndefinedMetric("MRR of an empty test set".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn recall_at(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(FusidError::UndefinedMetric("recall of an empty test set".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Ranking metrics as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecMetrics {
    pub mrr: f64,
    pub recall: BTreeMap<usize, f64>,
    pub n_instances: usize,
}

impl RecMetrics {
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Result<Self> {
        Ok(RecMetrics {
            mrr: 100.0 * mrr(ranks)?,
            recall: ks
                .iter()
                .map(|&k| Ok((k, 100.0 * recall_at(ranks, k)?)))
                .collect::<Result<_>>()?,
            n_instances: ranks.len(),
        })
    }
}

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

/// Target ranks of the recommender over the full catalog, one per instance.
pub fn model_ranks(
    model: &RecModel,
    vocab: &TokenVocab,
    instances: &[EvalInstance],
    catalog: &Catalog,
) -> Result<Vec<usize>> {
    instances
        .par_iter()
        .map(|inst| {
            let ctx = inst.context_tokens(catalog.sid_map(), vocab)?;
            let scores = catalog.score(model, vocab, &ctx)?;
            rank_of(catalog.ids(), &scores, inst.target)
        })
        .collect()
}

pub fn evaluate(
    model: &RecModel,
    vocab: &TokenVocab,
    instances: &[EvalInstance],
    catalog: &Catalog,
    ks: &[usize],
) -> Result<RecMetrics> {
    if instances.is_empty() {
        return Err(FusidError::UndefinedMetric("empty test set".into()));
    }
    RecMetrics::from_ranks(&model_ranks(model, vocab, instances, catalog)?, ks)
}

/// Ranks tracks by how many training playlists contain them, independent of context.
#[derive(Debug, Clone)]
pub struct PopularityRanker {
    counts: HashMap<TrackId, u64>,
}

impl PopularityRanker {
    pub fn fit(train: &[&Playlist]) -> Self {
        let mut counts = HashMap::new();
        for p in train {
            for &t in &p.tracks {
                *counts.entry(t).or_insert(0u64) += 1;
            }
        }
        PopularityRanker { counts }
    }

    pub fn scores(&self, ids: &[TrackId]) -> Vec<f64> {
        ids.iter().map(|t| self.counts.get(t).copied().unwrap_or(0) as f64).collect()
    }

    pub fn ranks(&self, instances: &[EvalInstance], ids: &[TrackId]) -> Result<Vec<usize>> {
        let scores = self.scores(ids);
        instances.iter().map(|i| rank_of(ids, &scores, i.target)).collect()
    }
}

/// Ranks the catalog by a shuffle seeded from `seed` and the playlist id.
pub fn random_rank(ids: &[TrackId], instance: &EvalInstance, seed: u64) -> Result<usize> {
    let t = ids.binary_search(&instance.target).map_err(|_| FusidError::MissingSid(instance.target))?;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(seed, &format!("random-{}", instance.playlist_id))));
    Ok(order.iter().position(|&i| i == t).expect("target in permutation") + 1)
}

pub fn random_ranks(instances: &[EvalInstance], ids: &[TrackId], seed: u64) -> Result<Vec<usize>> {
    instances.iter().map(|i| random_rank(ids, i, seed)).collect()
}

/// Expected MRR of a uniformly random ranking of `c` items: `(1/c) Σ_{r≤c} 1/r`.
pub fn expected_random_mrr(c: usize) -> f64 {
    (1..=c).map(|r| 1.0 / r as f64).sum::<f64>() / c as f64
}
