//! Normalized co-occurrence over training playlists and contrastive pair mining.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Playlist;
use crate::error::{FusidError, Result};
use crate::{rng, TrackId};

/// Playlist counts per track and per co-occurring unordered pair.
///
/// Only pairs that actually co-occur are stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoocStats {
    track_count: BTreeMap<TrackId, u32>,
    pair_count: HashMap<(TrackId, TrackId), u32>,
}

fn key(i: TrackId, j: TrackId) -> (TrackId, TrackId) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

impl CoocStats {
    pub fn track_count(&self, id: TrackId) -> u32 {
        self.track_count.get(&id).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, i: TrackId, j: TrackId) -> u32 {
        self.pair_count.get(&key(i, j)).copied().unwrap_or(0)
    }

    pub fn tracks(&self) -> impl Iterator<Item = (TrackId, u32)> + '_ {
        self.track_count.iter().map(|(&k, &v)| (k, v))
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_count.len()
    }

    fn merge(mut self, other: CoocStats) -> CoocStats {
        for (k, v) in other.track_count {
            *self.track_count.entry(k).or_default() += v;
        }
        for (k, v) in other.pair_count {
            *self.pair_count.entry(k).or_default() += v;
        }
        self
    }
}

fn count_shard(playlists: &[&Playlist]) -> CoocStats {
    let mut stats = CoocStats::default();
    for p in playlists {
        let distinct: Vec<TrackId> = p
            .tracks
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for (i, &a) in distinct.iter().enumerate() {
            *stats.track_count.entry(a).or_default() += 1;
            for &b in &distinct[i + 1..] {
                *stats.pair_count.entry((a, b)).or_default() += 1;
            }
        }
    }
    stats
}

/// Counts, per track and per pair, the number of playlists containing them.
/// A track repeated within one playlist counts once for that playlist.
pub fn count_cooccurrence(playlists: &[&Playlist]) -> CoocStats {
    const SHARD: usize = 256;
    // Counts are integer sums, so the merge order cannot change the result.
    playlists
        .par_chunks(SHARD)
        .map(count_shard)
        .reduce(CoocStats::default, CoocStats::merge)
}

/// `C(i∩j) / min(C(i), C(j))`
pub fn normalized_cooc(stats: &CoocStats, i: TrackId, j: TrackId) -> Result<f64> {
    let denom = stats.track_count(i).min(stats.track_count(j));
    if denom == 0 {
        return Err(FusidError::UndefinedScore(i, j));
    }
    if i == j {
        return Ok(1.0);
    }
    Ok(stats.pair_count(i, j) as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MineConfig {
    pub min_count: u32,
    pub pos_per_anchor: usize,
    pub neg_quantile: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            min_count: 3,
            pos_per_anchor: 5,
            neg_quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: TrackId,
    pub b: TrackId,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub pairs: Vec<LabeledPair>,
}

impl PairSet {
    pub fn positives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.pairs.iter().filter(|p| p.y == 1)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.pairs.iter().filter(|p| p.y == 0)
    }

    pub fn track_ids(&self) -> BTreeSet<TrackId> {
        self.pairs.iter().flat_map(|p| [p.a, p.b]).collect()
    }
}

/// Mines labeled pairs anchor by anchor.
///
/// Anchors and partners are the tracks with at least `min_count` playlists.
/// Each anchor's `pos_per_anchor` best-scoring partners with a positive score
/// become positives (ties by lower id); an equal number of negatives is drawn
/// uniformly from the partners in the bottom `neg_quantile` of the anchor's
/// score distribution. A pair labeled positive anywhere is never used as a
/// negative.
pub fn mine_pairs(stats: &CoocStats, cfg: &MineConfig, seed: u64) -> Result<PairSet> {
    if cfg.min_count < 1 {
        return Err(FusidError::InvalidConfig("min_count must be >= 1".into()));
    }
    if !(cfg.neg_quantile > 0.0 && cfg.neg_quantile < 1.0) {
        return Err(FusidError::InvalidConfig(
            "neg_quantile must lie strictly between 0 and 1".into(),
        ));
    }
    let eligible: Vec<TrackId> = stats
        .tracks()
        .filter(|&(_, c)| c >= cfg.min_count)
        .map(|(id, _)| id)
        .collect();

    // Scores for every (anchor, partner), sorted descending with ties by lower id.
    let ranked: Vec<(TrackId, Vec<(TrackId, f64)>)> = eligible
        .par_iter()
        .map(|&anchor| {
            let mut scores: Vec<(TrackId, f64)> = eligible
                .iter()
                .filter(|&&other| other != anchor)
                .map(|&other| {
                    let s = normalized_cooc(stats, anchor, other).expect("eligible counts are positive");
                    (other, s)
                })
                .collect();
            scores.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            (anchor, scores)
        })
        .collect();

    let mut positives: Vec<Vec<TrackId>> = Vec::with_capacity(ranked.len());
    let mut positive_keys = HashSet::new();
    for (anchor, scores) in &ranked {
        let pos: Vec<TrackId> = scores
            .iter()
            .take(cfg.pos_per_anchor)
            .take_while(|(_, s)| *s > 0.0)
            .map(|&(id, _)| id)
            .collect();
        positive_keys.extend(pos.iter().map(|&p| key(*anchor, p)));
        positives.push(pos);
    }

    let mut rng = rng::seeded(seed);
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for ((anchor, scores), pos) in ranked.iter().zip(&positives) {
        if pos.is_empty() {
            skipped += 1;
            continue;
        }
        let pool_size = ((scores.len() as f64) * cfg.neg_quantile).floor() as usize;
        // `scores` is descending, so the bottom of the distribution is its tail.
        let pool: Vec<TrackId> = scores[scores.len() - pool_size..]
            .iter()
            .map(|&(id, _)| id)
            .filter(|&id| !positive_keys.contains(&key(*anchor, id)))
            .collect();
        if pool.is_empty() {
            skipped += 1;
            continue;
        }
        let negatives = sample_uniform(&pool, pos.len(), &mut rng);
        for &p in pos {
            pairs.push(LabeledPair { a: *anchor, b: p, y: 1 });
        }
        for n in negatives {
            pairs.push(LabeledPair { a: *anchor, b: n, y: 0 });
        }
    }
    if skipped > 0 {
        log::info!("pair mining skipped {skipped} anchors without eligible partners");
    }
    Ok(PairSet { pairs })
}

/// Draws `count` items: without replacement when the pool is large enough, with
/// replacement otherwise so the positive/negative balance holds.
fn sample_uniform(pool: &[TrackId], count: usize, rng: &mut crate::rng::Rng) -> Vec<TrackId> {
    if pool.len() >= count {
        rand::seq::index::sample(rng, pool.len(), count)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

pub fn write_pairs(path: &std::path::Path, pairs: &PairSet) -> Result<()> {
    crate::io::write_jsonl(path, &pairs.pairs)
}

pub fn read_pairs(path: &std::path::Path) -> Result<PairSet> {
    let pairs: Vec<LabeledPair> = crate::io::read_jsonl(path)?;
    for (idx, p) in pairs.iter().enumerate() {
        if p.y > 1 || p.a == p.b {
            return Err(FusidError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("invalid pair {p:?}"),
            });
        }
    }
    Ok(PairSet { pairs })
}
