//! Stage orchestration. Every stage reads its inputs from and writes its
//! outputs to disk, and each completed stage is recorded in a manifest with
//! the SHA-256 of its outputs.

mod ablation;
mod config;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{FusidError, Result};
use crate::io::{read_json, sha256_file, write_json};

pub use ablation::{ablation_dir, run_ablation, AblationReport, AblationRow};
pub use config::{ArtifactPaths, EvalConfig, FilterConfig, PipelineConfig, SplitConfig};
pub use stages::{
    filter_step, genrec_eval_step, genrec_train_step, split_step, tokenize_step, BaselineReport, FusionReport, PqReport,
    PLAYLIST_MODALITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Split,
    Playvec,
    Pairs,
    Fusion,
    Pq,
    Sidqual,
    Genrec,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Split,
        Stage::Playvec,
        Stage::Pairs,
        Stage::Fusion,
        Stage::Pq,
        Stage::Sidqual,
        Stage::Genrec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Split => "split",
            Stage::Playvec => "playvec",
            Stage::Pairs => "pairs",
            Stage::Fusion => "fusion",
            Stage::Pq => "pq",
            Stage::Sidqual => "sidqual",
            Stage::Genrec => "genrec",
        }
    }

    pub fn inputs(self, p: &ArtifactPaths) -> Vec<&Path> {
        match self {
            Stage::Synth => vec![],
            Stage::Split => vec![&p.tracks, &p.playlists],
            Stage::Playvec | Stage::Pairs => vec![&p.filtered_playlists, &p.split],
            Stage::Fusion => vec![&p.tracks, &p.playvec, &p.pairs],
            Stage::Pq => vec![&p.embeddings, &p.filtered_playlists, &p.split],
            Stage::Sidqual | Stage::Genrec => vec![&p.sids, &p.codebook, &p.filtered_playlists, &p.split],
        }
    }

    pub fn outputs(self, p: &ArtifactPaths) -> Vec<&Path> {
        match self {
            Stage::Synth => vec![&p.tracks, &p.playlists],
            Stage::Split => vec![&p.filtered_playlists, &p.split],
            Stage::Playvec => vec![&p.playvec, &p.playvec_history],
            Stage::Pairs => vec![&p.pairs],
            Stage::Fusion => vec![&p.fusion_model, &p.fusion_history, &p.embeddings],
            Stage::Pq => vec![&p.codebook, &p.pq_report, &p.sids],
            Stage::Sidqual => vec![&p.sidqual],
            Stage::Genrec => vec![&p.rec_model, &p.rec_history, &p.metrics, &p.baselines],
        }
    }

    /// Parses `all` or a comma-separated list of stage names.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        if s.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut stages = s.split(',').map(|t| t.trim().parse()).collect::<Result<Vec<Stage>>>()?;
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = FusidError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| FusidError::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seed: u64,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn upsert(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }
}

/// Per-stage seed derived from the global one.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    crate::rng::derive_seed(seed, stage.name())
}

/// Loads the manifest in `cfg.out_dir` when it belongs to the same config,
/// otherwise starts an empty one.
fn open_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    let path = cfg.artifact(&cfg.paths.manifest);
    let hash = cfg.hash();
    if path.exists() {
        let existing: Manifest = read_json(&path)?;
        if existing.config_hash == hash {
            return Ok(existing);
        }
        info!("manifest at {} belongs to another config; starting afresh", path.display());
    }
    Ok(Manifest { config_hash: hash, seed: cfg.seed, stages: Vec::new() })
}

fn record_stage(cfg: &PipelineConfig, manifest: &mut Manifest, stage: Stage) -> Result<()> {
    let outputs = stage
        .outputs(&cfg.paths)
        .into_iter()
        .map(|rel| {
            Ok(OutputRecord { path: rel.to_path_buf(), sha256: sha256_file(&cfg.artifact(rel))? })
        })
        .collect::<Result<Vec<_>>>()?;
    manifest.upsert(StageRecord { stage, seed: stage_seed(cfg.seed, stage), outputs });
    write_json(&cfg.artifact(&cfg.paths.manifest), manifest)
}

/// Runs `stages` in dependency order and returns the updated manifest.
///
/// A stage whose inputs are missing fails with [`FusidError::MissingArtifact`];
/// any other failure is wrapped in [`FusidError::Stage`] naming the stage.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| FusidError::io(&cfg.out_dir, e))?;
    let mut manifest = open_manifest(cfg)?;
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    for stage in ordered {
        for rel in stage.inputs(&cfg.paths) {
            let path = cfg.artifact(rel);
            if !path.exists() {
                return Err(FusidError::MissingArtifact { stage: stage.name().into(), path });
            }
        }
        let started = Instant::now();
        stages::run_stage(cfg, stage, stage_seed(cfg.seed, stage))
            .map_err(|e| FusidError::Stage { stage: stage.name().into(), source: Box::new(e) })?;
        record_stage(cfg, &mut manifest, stage)?;
        info!("stage {stage} finished in {:.1}s", started.elapsed().as_secs_f64());
    }
    Ok(manifest)
}
