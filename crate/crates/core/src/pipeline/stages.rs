//! Bodies of the individual pipeline stages.

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, Stage};
use crate::corpus::{
    filter_playlists, generate_synthetic_corpus, read_playlists, read_tracks, split_corpus, write_playlists,
    CorpusSplit, Playlist, SplitPart,
};
use crate::error::Result;
use crate::fusion::{embed_catalog, train_fusion, FusionEpoch, FusionModel};
use crate::genrec::{
    eval_instances, expected_random_mrr, model_ranks, random_ranks, read_rec_model, train_recmodel,
    write_rec_model, Catalog, PopularityRanker, RecMetrics, TokenVocab,
};
use crate::io::{read_json, write_json, TrackVectors};
use crate::pairmine::{count_cooccurrence, mine_pairs, read_pairs, write_pairs};
use crate::playvec::train_playvec;
use crate::pq::{fit_codebook, read_sids, tokenize_catalog, write_sids, Codebook, KMeansReport, SemanticId};
use crate::sidqual;
use crate::{rng, TrackId};

/// Name of the modality contributed by the playlist co-occurrence embedding.
pub const PLAYLIST_MODALITY: &str = "playlist";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    /// Tracks without a playlist embedding, given a zero vector instead.
    pub cold_start_tracks: usize,
    pub epochs: Vec<FusionEpoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub train_items: usize,
    pub positions: Vec<KMeansReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub catalog_size: usize,
    pub popularity: RecMetrics,
    pub random: RecMetrics,
    /// Closed-form expected MRR of a uniform random ranking, in percent.
    pub random_expected_mrr: f64,
}

pub(super) fn run_stage(cfg: &PipelineConfig, stage: Stage, seed: u64) -> Result<()> {
    match stage {
        Stage::Synth => synth(cfg, seed),
        Stage::Split => split(cfg, seed),
        Stage::Playvec => playvec(cfg, seed),
        Stage::Pairs => pairs(cfg, seed),
        Stage::Fusion => fusion(cfg, seed),
        Stage::Pq => pq(cfg, seed),
        Stage::Sidqual => sid_quality(cfg),
        Stage::Genrec => genrec(cfg, seed),
    }
}

fn synth(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let synthetic = generate_synthetic_corpus(&cfg.synth, seed)?;
    synthetic
        .corpus
        .write(&cfg.artifact(&cfg.paths.tracks), &cfg.artifact(&cfg.paths.playlists))
}

fn split(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    filter_step(cfg)?;
    split_step(cfg, seed)
}

/// Drops unknown tracks and short playlists, writing the filtered playlists.
pub fn filter_step(cfg: &PipelineConfig) -> Result<()> {
    let tracks = read_tracks(&cfg.artifact(&cfg.paths.tracks))?;
    let playlists = read_playlists(&cfg.artifact(&cfg.paths.playlists))?;
    let valid = tracks.ids().collect();
    let kept = filter_playlists(&playlists, &valid, cfg.filter.min_len)?;
    info!("kept {} of {} playlists with >= {} valid tracks", kept.len(), playlists.len(), cfg.filter.min_len);
    write_playlists(&cfg.artifact(&cfg.paths.filtered_playlists), &kept)
}

/// Splits the filtered playlists into train/val/test.
pub fn split_step(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let kept = read_playlists(&cfg.artifact(&cfg.paths.filtered_playlists))?;
    let [a, b, c] = cfg.split.ratios;
    let split = split_corpus(&kept, (a, b, c), seed)?;
    info!("split sizes (train, val, test) = {:?}", split.sizes());
    write_json(&cfg.artifact(&cfg.paths.split), &split)
}

fn load_split(cfg: &PipelineConfig) -> Result<(Vec<Playlist>, CorpusSplit)> {
    let playlists = read_playlists(&cfg.artifact(&cfg.paths.filtered_playlists))?;
    let split: CorpusSplit = read_json(&cfg.artifact(&cfg.paths.split))?;
    Ok((playlists, split))
}

fn playvec(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let (playlists, split) = load_split(cfg)?;
    let train = split.select(&playlists, SplitPart::Train);
    let (model, history) = train_playvec(&train, &cfg.playvec, seed)?;
    model.to_track_vectors().write(&cfg.artifact(&cfg.paths.playvec))?;
    write_json(&cfg.artifact(&cfg.paths.playvec_history), &history)
}

fn pairs(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let (playlists, split) = load_split(cfg)?;
    let train = split.select(&playlists, SplitPart::Train);
    let stats = count_cooccurrence(&train);
    let mined = mine_pairs(&stats, &cfg.pairs, seed)?;
    info!("mined {} positive and {} negative pairs", mined.positives().count(), mined.negatives().count());
    write_pairs(&cfg.artifact(&cfg.paths.pairs), &mined)
}

fn to_f64_map(vectors: &TrackVectors) -> BTreeMap<TrackId, Vec<f64>> {
    vectors.iter().map(|(id, v)| (id, v.iter().map(|&x| x as f64).collect())).collect()
}

fn fusion(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let tracks = read_tracks(&cfg.artifact(&cfg.paths.tracks))?;
    let playvec = TrackVectors::read(&cfg.artifact(&cfg.paths.playvec))?;
    let pairs = read_pairs(&cfg.artifact(&cfg.paths.pairs))?;
    let (table, cold) = tracks.with_modality(PLAYLIST_MODALITY, playvec.dim, &to_f64_map(&playvec))?;
    if !cold.is_empty() {
        warn!("{} tracks have no playlist embedding; using zero vectors", cold.len());
    }
    let features: BTreeMap<TrackId, Vec<f64>> = table
        .ids()
        .map(|id| (id, table.concat_features(id).expect("id from table")))
        .collect();
    let (model, epochs) = train_fusion(&features, &pairs, &cfg.fusion, seed)?;
    model.write(&cfg.artifact(&cfg.paths.fusion_model))?;
    write_json(
        &cfg.artifact(&cfg.paths.fusion_history),
        &FusionReport { cold_start_tracks: cold.len(), epochs },
    )?;
    // embed with the model as persisted
    let model = FusionModel::read(&cfg.artifact(&cfg.paths.fusion_model))?;
    let embedded = embed_catalog(&model, &features)?;
    let ids: Vec<TrackId> = embedded.keys().copied().collect();
    let values = embedded.values().flat_map(|v| v.iter().map(|&x| x as f32)).collect();
    TrackVectors { dim: model.output_dim(), ids, values }.write(&cfg.artifact(&cfg.paths.embeddings))
}

fn track_set(playlists: &[&Playlist]) -> BTreeSet<TrackId> {
    playlists.iter().flat_map(|p| p.tracks.iter().copied()).collect()
}

fn pq(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let embeddings = to_f64_map(&TrackVectors::read(&cfg.artifact(&cfg.paths.embeddings))?);
    let (playlists, split) = load_split(cfg)?;
    let train_tracks = track_set(&split.select(&playlists, SplitPart::Train));
    let train: BTreeMap<TrackId, Vec<f64>> = embeddings
        .iter()
        .filter(|(id, _)| train_tracks.contains(id))
        .map(|(&id, v)| (id, v.clone()))
        .collect();
    let (codebook, positions) = fit_codebook(&train, cfg.fusion.n, &cfg.pq, seed)?;
    let path = cfg.artifact(&cfg.paths.codebook);
    codebook.write(&path)?;
    write_json(
        &cfg.artifact(&cfg.paths.pq_report),
        &PqReport { train_items: train.len(), positions },
    )?;
    tokenize_step(cfg)
}

/// Assigns every embedded track its SID using the codebook on disk.
pub fn tokenize_step(cfg: &PipelineConfig) -> Result<()> {
    let embeddings = to_f64_map(&TrackVectors::read(&cfg.artifact(&cfg.paths.embeddings))?);
    let codebook = Codebook::read(&cfg.artifact(&cfg.paths.codebook))?;
    let sids = tokenize_catalog(&codebook, &embeddings)?;
    write_sids(&cfg.artifact(&cfg.paths.sids), &sids)
}

fn test_sids(cfg: &PipelineConfig, all: &BTreeMap<TrackId, SemanticId>) -> Result<BTreeMap<TrackId, SemanticId>> {
    let (playlists, split) = load_split(cfg)?;
    let test_tracks = track_set(&split.select(&playlists, SplitPart::Test));
    Ok(all
        .iter()
        .filter(|(id, _)| test_tracks.contains(id))
        .map(|(&id, s)| (id, s.clone()))
        .collect())
}

fn sid_quality(cfg: &PipelineConfig) -> Result<()> {
    let all = read_sids(&cfg.artifact(&cfg.paths.sids))?;
    let codebook = Codebook::read(&cfg.artifact(&cfg.paths.codebook))?;
    let test = test_sids(cfg, &all)?;
    let report = sidqual::report(&all, &test, codebook.n, codebook.k)?;
    info!(
        "SID quality: CUR {:.2}% / {:.2}%, conflict {:.2}% / {:.2}% (all / test)",
        report.cur.all, report.cur.test, report.conflict_rate.all, report.conflict_rate.test
    );
    write_json(&cfg.artifact(&cfg.paths.sidqual), &report)
}

fn genrec(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    genrec_train_step(cfg, seed)?;
    genrec_eval_step(cfg, seed).map(|_| ())
}

/// Trains the recommender on the train playlists and writes it with its loss curve.
pub fn genrec_train_step(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let sids = read_sids(&cfg.artifact(&cfg.paths.sids))?;
    let codebook = Codebook::read(&cfg.artifact(&cfg.paths.codebook))?;
    let vocab = TokenVocab::new(codebook.n, codebook.k)?;
    let (playlists, split) = load_split(cfg)?;
    let train = split.select(&playlists, SplitPart::Train);
    let (model, history) = train_recmodel(&train, &sids, &vocab, &cfg.genrec, rng::derive_seed(seed, "train"))?;
    write_rec_model(&cfg.artifact(&cfg.paths.rec_model), &model, &vocab)?;
    write_json(&cfg.artifact(&cfg.paths.rec_history), &history)
}

/// Evaluates the stored recommender and both baselines on the test playlists.
pub fn genrec_eval_step(cfg: &PipelineConfig, seed: u64) -> Result<(RecMetrics, BaselineReport)> {
    let sids = read_sids(&cfg.artifact(&cfg.paths.sids))?;
    let (model, vocab) = read_rec_model(&cfg.artifact(&cfg.paths.rec_model))?;
    let (playlists, split) = load_split(cfg)?;
    let train = split.select(&playlists, SplitPart::Train);
    let test = split.select(&playlists, SplitPart::Test);
    let instances = eval_instances(&test)?;
    let catalog = Catalog::new(sids)?;
    let ks = &cfg.eval.ks;
    let metrics = RecMetrics::from_ranks(&model_ranks(&model, &vocab, &instances, &catalog)?, ks)?;
    info!("recommender MRR {:.2}% over {} instances", metrics.mrr, metrics.n_instances);
    write_json(&cfg.artifact(&cfg.paths.metrics), &metrics)?;

    let popularity = PopularityRanker::fit(&train).ranks(&instances, catalog.ids())?;
    let random = random_ranks(&instances, catalog.ids(), rng::derive_seed(seed, "random-baseline"))?;
    let baselines = BaselineReport {
        catalog_size: catalog.len(),
        popularity: RecMetrics::from_ranks(&popularity, ks)?,
        random: RecMetrics::from_ranks(&random, ks)?,
        random_expected_mrr: 100.0 * expected_random_mrr(catalog.len()),
    };
    write_json(&cfg.artifact(&cfg.paths.baselines), &baselines)?;
    Ok((metrics, baselines))
}
