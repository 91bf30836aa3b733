use std::collections::BTreeMap;

use fusid::corpus::{generate_synthetic_corpus, Playlist, SynthConfig};
use fusid::fusion::{embed_catalog, train_fusion, FusionConfig, FusionEpoch};
use fusid::optim::OptimizerKind;
use fusid::pairmine::{count_cooccurrence, mine_pairs, MineConfig, PairSet};
use fusid::TrackId;

fn small_problem() -> (BTreeMap<TrackId, Vec<f64>>, PairSet) {
    let cfg = SynthConfig { n_tracks: 200, n_playlists: 600, n_genres: 5, ..SynthConfig::default() };
    let synth = generate_synthetic_corpus(&cfg, 3).unwrap();
    let table = &synth.corpus.tracks;
    let features = table.ids().map(|id| (id, table.concat_features(id).unwrap())).collect();
    let refs: Vec<&Playlist> = synth.corpus.playlists.iter().collect();
    let pairs = mine_pairs(&count_cooccurrence(&refs), &MineConfig::default(), 5).unwrap();
    (features, pairs)
}

fn train(alpha: f64) -> Vec<FusionEpoch> {
    let (features, pairs) = small_problem();
    let cfg = FusionConfig {
        hidden_dim: 32,
        n: 3,
        d: 4,
        alpha,
        epochs: 20,
        batch_size: 64,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        ..FusionConfig::default()
    };
    let (model, history) = train_fusion(&features, &pairs, &cfg, 11).unwrap();
    let embedded = embed_catalog(&model, &features).unwrap();
    assert_eq!(embedded.len(), 200);
    assert!(embedded.values().all(|e| e.len() == 12 && e.iter().all(|v| v.is_finite())));
    history
}

#[test]
fn training_lowers_the_objective() {
    let history = train(0.2);
    assert_eq!(history.len(), 20);
    assert!(history[19].total < history[0].total, "{:?} vs {:?}", history[19], history[0]);
}

#[test]
fn regularizer_lowers_final_covariance() {
    let with = train(0.2);
    let without = train(0.0);
    let (a, b) = (with.last().unwrap().cov, without.last().unwrap().cov);
    assert!(a < b, "cov with regularizer {a} vs without {b}");
    // without the regularizer the total is the contrastive term alone
    assert!(without.iter().all(|e| e.total == e.cont));
}

#[test]
fn training_is_deterministic() {
    assert_eq!(train(0.2), train(0.2));
}
