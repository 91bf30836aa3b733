//! Pipeline configuration: artifact locations, every stage's settings and the
//! global seed, read from JSON with optional dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::SynthConfig;
use crate::error::{FusidError, Result};
use crate::fusion::FusionConfig;
use crate::genrec::GenrecConfig;
use crate::optim::OptimizerKind;
use crate::pairmine::MineConfig;
use crate::playvec::PlayvecConfig;
use crate::pq::PqConfig;

/// File names of every artifact, relative to the output directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactPaths {
    pub tracks: PathBuf,
    pub playlists: PathBuf,
    pub filtered_playlists: PathBuf,
    pub split: PathBuf,
    pub playvec: PathBuf,
    pub playvec_history: PathBuf,
    pub pairs: PathBuf,
    pub fusion_model: PathBuf,
    pub fusion_history: PathBuf,
    pub embeddings: PathBuf,
    pub codebook: PathBuf,
    pub pq_report: PathBuf,
    pub sids: PathBuf,
    pub sidqual: PathBuf,
    pub rec_model: PathBuf,
    pub rec_history: PathBuf,
    pub metrics: PathBuf,
    pub baselines: PathBuf,
    pub manifest: PathBuf,
}

impl Default for ArtifactPaths {
    fn default() -> Self {
        let p = PathBuf::from;
        ArtifactPaths {
            tracks: p("tracks.jsonl"),
            playlists: p("playlists.jsonl"),
            filtered_playlists: p("playlists.filtered.jsonl"),
            split: p("split.json"),
            playvec: p("playvec.fvec"),
            playvec_history: p("playvec_history.json"),
            pairs: p("pairs.jsonl"),
            fusion_model: p("fusion.fmod"),
            fusion_history: p("fusion_history.json"),
            embeddings: p("embeddings.fvec"),
            codebook: p("codebook.fcbk"),
            pq_report: p("pq_report.json"),
            sids: p("sids.jsonl"),
            sidqual: p("sidqual.json"),
            rec_model: p("genrec.frec"),
            rec_history: p("genrec_history.json"),
            metrics: p("metrics.json"),
            baselines: p("baselines.json"),
            manifest: p("manifest.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub min_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { min_len: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [0.8, 0.1, 0.1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { ks: crate::genrec::DEFAULT_KS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: ArtifactPaths,
    pub synth: SynthConfig,
    pub filter: FilterConfig,
    pub split: SplitConfig,
    pub playvec: PlayvecConfig,
    pub pairs: MineConfig,
    pub fusion: FusionConfig,
    pub pq: PqConfig,
    pub genrec: GenrecConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            out_dir: PathBuf::from("out/fusid"),
            paths: ArtifactPaths::default(),
            synth: SynthConfig::default(),
            filter: FilterConfig::default(),
            split: SplitConfig::default(),
            playvec: PlayvecConfig::default(),
            pairs: MineConfig::default(),
            fusion: FusionConfig::default(),
            pq: PqConfig::default(),
            genrec: GenrecConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Desk-scale settings for the 2 000-track synthetic corpus.
    pub fn reference() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.playvec.dim = 16;
        cfg.fusion.hidden_dim = 128;
        cfg.fusion.d = 16;
        cfg.fusion.epochs = 20;
        cfg.fusion.optimizer = OptimizerKind::Adam;
        cfg.pq.k = 64;
        cfg.genrec.dim = 32;
        cfg.genrec.epochs = 2;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FusidError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FusidError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON when possible and
    /// as plain strings otherwise; every key must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| FusidError::InvalidConfig(format!("override `{raw}` is not key=value")))?;
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .ok_or_else(|| FusidError::InvalidConfig(format!("unknown config key `{key}`")))?;
            }
            *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        }
        serde_json::from_value(doc).map_err(|e| FusidError::InvalidConfig(e.to_string()))
    }

    /// Resolves an artifact path against `out_dir`.
    pub fn artifact(&self, rel: &Path) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// SHA-256 of the serialized config with `out_dir` blanked, so moving a run
    /// does not change its identity.
    pub fn hash(&self) -> String {
        let mut anonymous = self.clone();
        anonymous.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&anonymous).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.split.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(FusidError::InvalidConfig(format!(
                "split ratios must be positive and sum to 1, got {:?}",
                self.split.ratios
            )));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(FusidError::InvalidConfig("eval.ks must be nonempty and positive".into()));
        }
        self.fusion.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        for cfg in [PipelineConfig::default(), PipelineConfig::reference()] {
            let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"sead": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"fusion": {"alpah": 0.1}}"#).is_err());
        assert!(PipelineConfig::default().with_overrides(&["fusion.alpah=0.1"]).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"seed": 7, "pq": {"k": 16}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pq.k, 16);
        assert_eq!(cfg.fusion, FusionConfig::default());
    }

    #[test]
    fn overrides_set_nested_values() {
        let cfg = PipelineConfig::default()
            .with_overrides(&["fusion.alpha=0", "out_dir=elsewhere", "fusion.optimizer=adam"])
            .unwrap();
        assert_eq!(cfg.fusion.alpha, 0.0);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.fusion.optimizer, OptimizerKind::Adam);
        assert!(PipelineConfig::default().with_overrides(&["seed"]).is_err());
        assert!(PipelineConfig::default().with_overrides(&["seed=abc"]).is_err());
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = PipelineConfig::reference();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("/tmp/other");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
