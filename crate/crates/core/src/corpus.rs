//! Tracks, playlists and the operations that prepare them: ingestion from
//! newline-delimited JSON, valid-track filtering, seeded train/val/test
//! splitting, and a genre-structured synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FusidError, Result};
use crate::{io, rng, TrackId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
}

/// One item with its per-modality features, aligned with the owning table's schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub features: Vec<Vec<f64>>,
}

/// All tracks of a corpus sharing one modality schema.
///
/// Modalities are kept sorted by name so the concatenated feature layout is
/// the same however the source records ordered their keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackTable {
    schema: Vec<ModalitySpec>,
    tracks: BTreeMap<TrackId, Track>,
}

impl TrackTable {
    pub fn new(schema: Vec<ModalitySpec>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for m in &schema {
            if !names.insert(m.name.clone()) {
                return Err(FusidError::InvalidConfig(format!(
                    "duplicate modality `{}`",
                    m.name
                )));
            }
        }
        let mut schema = schema;
        schema.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(TrackTable {
            schema,
            tracks: BTreeMap::new(),
        })
    }

    pub fn schema(&self) -> &[ModalitySpec] {
        &self.schema
    }

    pub fn input_dim(&self) -> usize {
        self.schema.iter().map(|m| m.dim).sum()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn contains(&self, id: TrackId) -> bool {
        self.tracks.contains_key(&id)
    }

    pub fn get(&self, id: TrackId) -> Option<&Track> {
        self.tracks.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = TrackId> + '_ {
        self.tracks.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    /// Inserts a track whose features follow this table's schema order.
    pub fn insert(&mut self, track: Track) -> Result<()> {
        if track.features.len() != self.schema.len() {
            return Err(FusidError::DimensionMismatch {
                what: format!("modality count of track {}", track.id),
                expected: self.schema.len(),
                actual: track.features.len(),
            });
        }
        for (spec, values) in self.schema.iter().zip(&track.features) {
            if values.len() != spec.dim {
                return Err(FusidError::DimensionMismatch {
                    what: format!("modality `{}` of track {}", spec.name, track.id),
                    expected: spec.dim,
                    actual: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(FusidError::NonFinite(format!(
                    "modality `{}` of track {}",
                    spec.name, track.id
                )));
            }
        }
        if self.tracks.insert(track.id, track.clone()).is_some() {
            return Err(FusidError::DuplicateId(track.id));
        }
        Ok(())
    }

    /// Concatenation of all modality vectors of `id` in schema order.
    pub fn concat_features(&self, id: TrackId) -> Option<Vec<f64>> {
        let track = self.tracks.get(&id)?;
        Some(track.features.iter().flatten().copied().collect())
    }

    /// Returns a copy of the table with one more modality attached to every track.
    ///
    /// Tracks absent from `values` receive the zero vector; their ids are
    /// returned so callers can report coverage.
    pub fn with_modality(
        &self,
        name: &str,
        dim: usize,
        values: &BTreeMap<TrackId, Vec<f64>>,
    ) -> Result<(TrackTable, Vec<TrackId>)> {
        let mut schema = self.schema.clone();
        schema.push(ModalitySpec {
            name: name.to_string(),
            dim,
        });
        let mut table = TrackTable::new(schema)?;
        let slot = table
            .schema
            .iter()
            .position(|m| m.name == name)
            .expect("modality just added");
        let mut missing = Vec::new();
        for track in self.tracks.values() {
            let extra = match values.get(&track.id) {
                Some(v) => v.clone(),
                None => {
                    missing.push(track.id);
                    vec![0.0; dim]
                }
            };
            let mut features = track.features.clone();
            features.insert(slot, extra);
            table.insert(Track {
                id: track.id,
                features,
            })?;
        }
        Ok((table, missing))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let records: Vec<TrackRecord> = self
            .tracks
            .values()
            .map(|t| TrackRecord {
                track_id: t.id,
                features: self
                    .schema
                    .iter()
                    .zip(&t.features)
                    .map(|(m, v)| (m.name.clone(), v.clone()))
                    .collect(),
            })
            .collect();
        io::write_jsonl(path, &records)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackRecord {
    track_id: TrackId,
    features: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub playlist_id: u64,
    pub tracks: Vec<TrackId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub tracks: TrackTable,
    pub playlists: Vec<Playlist>,
}

impl Corpus {
    /// Checks that every playlist id is unique and every referenced track exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.playlists {
            if !seen.insert(p.playlist_id) {
                return Err(FusidError::DuplicateId(p.playlist_id));
            }
            for &t in &p.tracks {
                if !self.tracks.contains(t) {
                    return Err(FusidError::DanglingTrack {
                        playlist_id: p.playlist_id,
                        track_id: t,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, tracks_path: &Path, playlists_path: &Path) -> Result<()> {
        self.tracks.write_jsonl(tracks_path)?;
        write_playlists(playlists_path, &self.playlists)
    }
}

pub fn read_tracks(path: &Path) -> Result<TrackTable> {
    let records: Vec<TrackRecord> = io::read_jsonl(path)?;
    let Some(first) = records.first() else {
        return Err(FusidError::EmptyInput(format!(
            "no tracks in {}",
            path.display()
        )));
    };
    let schema = first
        .features
        .iter()
        .map(|(name, v)| ModalitySpec {
            name: name.clone(),
            dim: v.len(),
        })
        .collect();
    let mut table = TrackTable::new(schema)?;
    for (idx, record) in records.into_iter().enumerate() {
        let names_match = record.features.len() == table.schema.len()
            && table
                .schema
                .iter()
                .all(|m| record.features.contains_key(&m.name));
        if !names_match {
            return Err(FusidError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!(
                    "track {} declares modalities {:?}, expected {:?}",
                    record.track_id,
                    record.features.keys().collect::<Vec<_>>(),
                    table.schema.iter().map(|m| &m.name).collect::<Vec<_>>()
                ),
            });
        }
        let mut features = record.features;
        let ordered = table
            .schema
            .iter()
            .map(|m| features.remove(&m.name).expect("checked above"))
            .collect();
        table.insert(Track {
            id: record.track_id,
            features: ordered,
        })?;
    }
    Ok(table)
}

pub fn read_playlists(path: &Path) -> Result<Vec<Playlist>> {
    io::read_jsonl(path)
}

pub fn write_playlists(path: &Path, playlists: &[Playlist]) -> Result<()> {
    io::write_jsonl(path, playlists)
}

/// Loads a corpus from its two newline-delimited JSON files and checks
/// referential integrity.
pub fn load_corpus(tracks_path: &Path, playlists_path: &Path) -> Result<Corpus> {
    let corpus = Corpus {
        tracks: read_tracks(tracks_path)?,
        playlists: read_playlists(playlists_path)?,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Drops tracks outside `valid` from every playlist, then keeps playlists
/// with at least `min_len` remaining tracks. Duplicates are preserved.
pub fn filter_playlists(
    playlists: &[Playlist],
    valid: &HashSet<TrackId>,
    min_len: usize,
) -> Result<Vec<Playlist>> {
    if min_len < 1 {
        return Err(FusidError::InvalidConfig("min_len must be >= 1".into()));
    }
    Ok(playlists
        .iter()
        .filter_map(|p| {
            let tracks: Vec<TrackId> = p
                .tracks
                .iter()
                .copied()
                .filter(|t| valid.contains(t))
                .collect();
            (tracks.len() >= min_len).then_some(Playlist {
                playlist_id: p.playlist_id,
                tracks,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSplit {
    pub train: BTreeSet<u64>,
    pub val: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

impl CorpusSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// The playlists of one part, in their original order.
    pub fn select<'a>(&self, playlists: &'a [Playlist], part: SplitPart) -> Vec<&'a Playlist> {
        let ids = match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        };
        playlists
            .iter()
            .filter(|p| ids.contains(&p.playlist_id))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Seeded partition of playlists into train/val/test.
///
/// Val and test receive `floor(N · r)` playlists each; the remainder goes to train.
pub fn split_corpus(playlists: &[Playlist], ratios: (f64, f64, f64), seed: u64) -> Result<CorpusSplit> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(*r > 0.0)) {
        return Err(FusidError::InvalidConfig(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(FusidError::InvalidConfig(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }
    let total = playlists.len();
    // Guard against products like 0.1 * 30 = 3.0000000000000004 landing just below an integer.
    let alloc = |r: f64| ((total as f64) * r + 1e-9).floor() as usize;
    let (n_val, n_test) = (alloc(r_val), alloc(r_test));
    let n_train = total - n_val - n_test;

    let mut ids: Vec<u64> = playlists.iter().map(|p| p.playlist_id).collect();
    ids.sort_unstable();
    ids.shuffle(&mut rng::seeded(seed));
    Ok(CorpusSplit {
        train: ids[..n_train].iter().copied().collect(),
        val: ids[n_train..n_train + n_val].iter().copied().collect(),
        test: ids[n_train + n_val..].iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_tracks: usize,
    pub n_playlists: usize,
    pub n_genres: usize,
    pub modalities: Vec<ModalitySpec>,
    /// Inclusive playlist length range.
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a playlist slot is filled from the playlist's home genre.
    pub p_coh: f64,
    /// Standard deviation of the per-track feature noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tracks: 2000,
            n_playlists: 5000,
            n_genres: 20,
            modalities: vec![
                ModalitySpec { name: "audio".into(), dim: 16 },
                ModalitySpec { name: "lyrics".into(), dim: 32 },
                ModalitySpec { name: "metadata".into(), dim: 32 },
                ModalitySpec { name: "tags".into(), dim: 32 },
            ],
            min_len: 5,
            max_len: 36,
            p_coh: 0.8,
            noise: 1.0,
        }
    }
}

/// A generated corpus together with the latent genre of every track.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub genres: BTreeMap<TrackId, usize>,
}

/// Generates a corpus in which co-occurrence and feature similarity are both
/// driven by a latent genre per track.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    if cfg.n_genres == 0 || cfg.n_genres > cfg.n_tracks {
        return Err(FusidError::InvalidConfig(format!(
            "need 1 <= n_genres <= n_tracks, got {} genres for {} tracks",
            cfg.n_genres, cfg.n_tracks
        )));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(FusidError::InvalidConfig(format!(
            "empty playlist length range [{}, {}]",
            cfg.min_len, cfg.max_len
        )));
    }
    if !(0.0..=1.0).contains(&cfg.p_coh) {
        return Err(FusidError::InvalidConfig("p_coh must lie in [0, 1]".into()));
    }
    if !(cfg.noise >= 0.0) {
        return Err(FusidError::InvalidConfig("noise must be >= 0".into()));
    }
    let mut rng = rng::seeded(seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let table_schema = TrackTable::new(cfg.modalities.clone())?;

    // centroids[modality][genre] in sorted-schema order
    let centroids: Vec<Vec<Vec<f64>>> = table_schema
        .schema()
        .iter()
        .map(|m| {
            (0..cfg.n_genres)
                .map(|_| (0..m.dim).map(|_| standard.sample(&mut rng)).collect())
                .collect()
        })
        .collect();

    // Every genre gets at least one track.
    let mut genre_of: Vec<usize> = (0..cfg.n_tracks).map(|i| i % cfg.n_genres).collect();
    genre_of.shuffle(&mut rng);

    let mut tracks = table_schema;
    let mut genres = BTreeMap::new();
    let mut members: Vec<Vec<TrackId>> = vec![Vec::new(); cfg.n_genres];
    for (idx, &genre) in genre_of.iter().enumerate() {
        let id = idx as TrackId;
        let features = centroids
            .iter()
            .map(|per_genre| {
                per_genre[genre]
                    .iter()
                    .map(|&c| c + cfg.noise * standard.sample(&mut rng))
                    .collect()
            })
            .collect();
        tracks.insert(Track { id, features })?;
        genres.insert(id, genre);
        members[genre].push(id);
    }

    let playlists = (0..cfg.n_playlists)
        .map(|pid| {
            let home = rng.random_range(0..cfg.n_genres);
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let tracks = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < cfg.p_coh {
                        members[home][rng.random_range(0..members[home].len())]
                    } else {
                        rng.random_range(0..cfg.n_tracks) as TrackId
                    }
                })
                .collect();
            Playlist {
                playlist_id: pid as u64,
                tracks,
            }
        })
        .collect();

    let corpus = Corpus { tracks, playlists };
    corpus.validate()?;
    Ok(SyntheticCorpus { corpus, genres })
}
