use std::path::Path;

use fusid::genrec::RecMetrics;
use fusid::io::read_json;
use fusid::pipeline::{ablation_dir, run_ablation, run_pipeline, Manifest, PipelineConfig, Stage};
use fusid::FusidError;

/// A pipeline small enough to run in a few seconds.
fn tiny(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::reference();
    cfg.out_dir = out.to_path_buf();
    cfg.synth.n_tracks = 150;
    cfg.synth.n_playlists = 300;
    cfg.synth.n_genres = 5;
    cfg.synth.max_len = 12;
    cfg.playvec.dim = 8;
    cfg.playvec.epochs = 2;
    cfg.fusion.hidden_dim = 16;
    cfg.fusion.d = 4;
    cfg.fusion.epochs = 3;
    cfg.pq.k = 8;
    cfg.genrec.dim = 8;
    cfg.genrec.heads = 2;
    cfg.genrec.layers = 1;
    cfg.genrec.epochs = 1;
    cfg.genrec.max_len = 64;
    cfg
}

fn checksums(m: &Manifest) -> Vec<(Stage, Vec<String>)> {
    m.stages.iter().map(|r| (r.stage, r.outputs.iter().map(|o| o.sha256.clone()).collect())).collect()
}

#[test]
fn full_run_records_every_stage_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(&dir.path().join("a"));
    let b = tiny(&dir.path().join("b"));
    let first = run_pipeline(&a, &Stage::ALL).unwrap();
    assert_eq!(first.stages.len(), 8);
    assert_eq!(first.config_hash, a.hash());
    let on_disk: Manifest = read_json(&a.artifact(&a.paths.manifest)).unwrap();
    assert_eq!(on_disk, first);
    let second = run_pipeline(&b, &Stage::ALL).unwrap();
    assert_eq!(checksums(&first), checksums(&second));

    let metrics: RecMetrics = read_json(&a.artifact(&a.paths.metrics)).unwrap();
    assert_eq!(metrics.recall.len(), 4);
    assert!(metrics.n_instances > 0);

    // rerunning one stage in place keeps the other entries
    let again = run_pipeline(&a, &[Stage::Sidqual]).unwrap();
    assert_eq!(checksums(&again), checksums(&first));
}

#[test]
fn missing_inputs_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    match run_pipeline(&cfg, &[Stage::Pq]) {
        Err(FusidError::MissingArtifact { stage, path }) => {
            assert_eq!(stage, "pq");
            assert!(path.ends_with("embeddings.fvec"));
        }
        other => panic!("expected a dependency error, got {other:?}"),
    }
}

#[test]
fn stage_failures_are_wrapped_with_the_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.pq.k = 10_000;
    let err = run_pipeline(&cfg, &Stage::ALL).unwrap_err();
    match &err {
        FusidError::Stage { stage, .. } => assert_eq!(stage, "pq"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn ablation_reports_two_labeled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("fusid"));
    let report = run_ablation(&cfg).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["fusid", "fusid-ablation"]);
    assert_eq!(report.rows[0].alpha, cfg.fusion.alpha);
    assert_eq!(report.rows[1].alpha, 0.0);
    let abl_manifest: Manifest = read_json(&ablation_dir(&cfg.out_dir).join("manifest.json")).unwrap();
    assert_eq!(abl_manifest.stages.len(), 8);
    let main: Manifest = read_json(&cfg.artifact(&cfg.paths.manifest)).unwrap();
    // shared upstream artifacts are identical copies
    assert_eq!(checksums(&abl_manifest)[..4], checksums(&main)[..4]);
    assert!(cfg.artifact(Path::new("ablation.json")).exists());
    assert!(report.to_string().lines().count() == 3);
}
