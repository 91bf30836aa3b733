//! The regularizer ablation: the same pipeline with `α = 0`, reusing the
//! upstream artifacts of the full run, reported side by side.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stages::FusionReport;
use super::{open_manifest, record_stage, run_pipeline, PipelineConfig, Stage};
use crate::error::{FusidError, Result};
use crate::fusion::FusionEpoch;
use crate::genrec::RecMetrics;
use crate::io::{read_json, write_json};
use crate::sidqual::SidQualityReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub alpha: f64,
    pub sid_quality: SidQualityReport,
    pub metrics: RecMetrics,
    pub final_epoch: FusionEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Sibling of `out_dir` with `-ablation` appended to its name.
pub fn ablation_dir(out_dir: &Path) -> PathBuf {
    let name = out_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "fusid".into());
    out_dir.with_file_name(format!("{name}-ablation"))
}

const SHARED: [Stage; 4] = [Stage::Synth, Stage::Split, Stage::Playvec, Stage::Pairs];
const DOWNSTREAM: [Stage; 4] = [Stage::Fusion, Stage::Pq, Stage::Sidqual, Stage::Genrec];

fn read_row(cfg: &PipelineConfig, label: &str) -> Result<AblationRow> {
    let history: FusionReport = read_json(&cfg.artifact(&cfg.paths.fusion_history))?;
    let final_epoch = *history
        .epochs
        .last()
        .ok_or_else(|| FusidError::EmptyInput("fusion history has no epochs".into()))?;
    Ok(AblationRow {
        label: label.into(),
        alpha: cfg.fusion.alpha,
        sid_quality: read_json(&cfg.artifact(&cfg.paths.sidqual))?,
        metrics: read_json(&cfg.artifact(&cfg.paths.metrics))?,
        final_epoch,
    })
}

/// Runs the full pipeline in `cfg.out_dir`, then the fusion-onwards stages
/// again with `α = 0` in [`ablation_dir`], and writes `ablation.json` into
/// `cfg.out_dir`.
pub fn run_ablation(cfg: &PipelineConfig) -> Result<AblationReport> {
    run_pipeline(cfg, &Stage::ALL)?;

    let mut ablated = cfg.clone();
    ablated.out_dir = ablation_dir(&cfg.out_dir);
    ablated.fusion.alpha = 0.0;
    std::fs::create_dir_all(&ablated.out_dir).map_err(|e| FusidError::io(&ablated.out_dir, e))?;
    let mut manifest = open_manifest(&ablated)?;
    for stage in SHARED {
        for rel in stage.outputs(&cfg.paths) {
            let (from, to) = (cfg.artifact(rel), ablated.artifact(rel));
            std::fs::copy(&from, &to).map_err(|e| FusidError::io(&to, e))?;
        }
        record_stage(&ablated, &mut manifest, stage)?;
    }
    run_pipeline(&ablated, &DOWNSTREAM)?;

    let report = AblationReport { rows: vec![read_row(cfg, "fusid")?, read_row(&ablated, "fusid-ablation")?] };
    write_json(&cfg.artifact(Path::new("ablation.json")), &report)?;
    Ok(report)
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>5} {:>8} {:>8} {:>7} {:>7} {:>8} {:>8} {:>10} {:>7} {:>8}",
            "model", "alpha", "CUR", "CUR-t", "card", "card-t", "conf", "conf-t", "final-cov", "MRR", "R@10"
        )?;
        for r in &self.rows {
            let q = &r.sid_quality;
            let r10 = r.metrics.recall.get(&10).copied().unwrap_or(f64::NAN);
            writeln!(
                f,
                "{:<16} {:>5.2} {:>8.2} {:>8.2} {:>7} {:>7} {:>8.2} {:>8.2} {:>10.5} {:>7.2} {:>8.2}",
                r.label,
                r.alpha,
                q.cur.all,
                q.cur.test,
                q.cardinality.all,
                q.cardinality.test,
                q.conflict_rate.all,
                q.conflict_rate.test,
                r.final_epoch.cov,
                r.metrics.mrr,
                r10
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_dir_is_a_sibling() {
        assert_eq!(ablation_dir(Path::new("out/fusid")), PathBuf::from("out/fusid-ablation"));
        assert_eq!(ablation_dir(Path::new("/tmp/run")), PathBuf::from("/tmp/run-ablation"));
    }
}
