//! Exact candidate scoring: the log-probability of each catalog track's SID
//! tokens following a context.

use std::collections::BTreeMap;

use super::model::{KvCache, RecModel};
use super::TokenVocab;
use crate::error::{FusidError, Result};
use crate::pq::SemanticId;
use crate::tensor::log_softmax;
use crate::TrackId;

/// A catalog ordered by track id, with its distinct SIDs arranged for
/// prefix-shared scoring.
#[derive(Debug, Clone)]
pub struct Catalog {
    ids: Vec<TrackId>,
    sid_map: BTreeMap<TrackId, SemanticId>,
    /// Distinct SIDs in lexicographic order with the catalog rows holding each.
    groups: Vec<(SemanticId, Vec<usize>)>,
}

impl Catalog {
    pub fn new(sid_map: BTreeMap<TrackId, SemanticId>) -> Result<Self> {
        if sid_map.is_empty() {
            return Err(FusidError::EmptyInput("empty catalog".into()));
        }
        let ids: Vec<TrackId> = sid_map.keys().copied().collect();
        let mut by_sid: BTreeMap<&SemanticId, Vec<usize>> = BTreeMap::new();
        for (row, sid) in sid_map.values().enumerate() {
            by_sid.entry(sid).or_default().push(row);
        }
        let groups = by_sid.into_iter().map(|(s, rows)| (s.clone(), rows)).collect();
        Ok(Catalog { ids, sid_map, groups })
    }

    pub fn ids(&self) -> &[TrackId] {
        &self.ids
    }

    pub fn sid_map(&self) -> &BTreeMap<TrackId, SemanticId> {
        &self.sid_map
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Scores aligned with [`Catalog::ids`]. Candidates sharing an SID prefix
    /// share the model steps for that prefix.
    pub fn score(&self, model: &RecModel, vocab: &TokenVocab, context: &[u32]) -> Result<Vec<f64>> {
        check_context(model, vocab, context)?;
        for (sid, _) in &self.groups {
            vocab.encode_sid(sid)?;
        }
        let mut cache = model.new_cache();
        let mut logp = vec![0.0; model.dims.vocab];
        for &tok in context {
            model.step(&mut cache, tok, &mut logp)?;
        }
        let mut scores = vec![0.0; self.ids.len()];
        descend(model, vocab, &mut cache, &logp, &self.groups, 0, 0.0, &mut scores)?;
        Ok(scores)
    }
}

fn check_context(model: &RecModel, vocab: &TokenVocab, context: &[u32]) -> Result<()> {
    if context.is_empty() {
        return Err(FusidError::EmptyInput("empty context".into()));
    }
    if model.dims.vocab != vocab.size() {
        return Err(FusidError::DimensionMismatch {
            what: "model vocabulary".into(),
            expected: vocab.size(),
            actual: model.dims.vocab,
        });
    }
    // the last candidate token is predicted, never fed back
    let needed = context.len() + vocab.n - 1;
    if needed > model.dims.max_len {
        return Err(FusidError::ContextTooLong { len: needed, max_len: model.dims.max_len });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn descend(
    model: &RecModel,
    vocab: &TokenVocab,
    cache: &mut KvCache,
    logp: &[f64],
    groups: &[(SemanticId, Vec<usize>)],
    depth: usize,
    prefix: f64,
    scores: &mut [f64],
) -> Result<()> {
    let mut child = vec![0.0; logp.len()];
    let mut start = 0;
    while start < groups.len() {
        let code = groups[start].0.codes()[depth];
        let end = start + groups[start..].iter().take_while(|(s, _)| s.codes()[depth] == code).count();
        let tok = vocab.token(depth, code);
        let score = prefix + logp[tok as usize];
        if depth + 1 == vocab.n {
            for (_, rows) in &groups[start..end] {
                for &r in rows {
                    scores[r] = score;
                }
            }
        } else {
            let mark = cache.len();
            model.step(cache, tok, &mut child)?;
            descend(model, vocab, cache, &child, &groups[start..end], depth + 1, score, scores)?;
            cache.truncate(mark);
        }
        start = end;
    }
    Ok(())
}

/// Trie-shared scores of every catalog track, keyed by track id.
pub fn score_candidates(
    model: &RecModel,
    vocab: &TokenVocab,
    context: &[u32],
    catalog: &Catalog,
) -> Result<BTreeMap<TrackId, f64>> {
    let scores = catalog.score(model, vocab, context)?;
    Ok(catalog.ids().iter().copied().zip(scores).collect())
}

/// Reference scorer: one full forward pass per candidate, no sharing.
pub fn score_candidates_naive(
    model: &RecModel,
    vocab: &TokenVocab,
    context: &[u32],
    sid_map: &BTreeMap<TrackId, SemanticId>,
) -> Result<BTreeMap<TrackId, f64>> {
    check_context(model, vocab, context)?;
    let mut logp = vec![0.0; model.dims.vocab];
    sid_map
        .iter()
        .map(|(&id, sid)| {
            let cand = vocab.encode_sid(sid)?;
            let mut tokens = context.to_vec();
            tokens.extend_from_slice(&cand[..cand.len() - 1]);
            let logits = model.logits(&tokens)?;
            let mut score = 0.0;
            for (j, &tok) in cand.iter().enumerate() {
                log_softmax(logits.row(context.len() - 1 + j), &mut logp);
                score += logp[tok as usize];
            }
            Ok((id, score))
        })
        .collect()
}
