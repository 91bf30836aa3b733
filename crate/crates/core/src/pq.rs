//! Product quantization: an independent k-means codebook per sub-embedding
//! position, and tokenization of embeddings into semantic IDs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusidError, Result};
use crate::io::{self, read_bytes, write_bytes, LeReader};
use crate::{rng, TrackId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PqConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PqConfig {
    fn default() -> Self {
        PqConfig {
            k: 1024,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// One code index per position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticId(pub Vec<u32>);

impl SemanticId {
    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `n` tables of `k` centroids of dimension `d`, stored position-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn from_centroids(n: usize, k: usize, d: usize, centroids: Vec<f64>) -> Result<Self> {
        if centroids.len() != n * k * d {
            return Err(FusidError::DimensionMismatch {
                what: "codebook centroids".into(),
                expected: n * k * d,
                actual: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(FusidError::NonFinite("codebook centroid".into()));
        }
        Ok(Codebook { n, k, d, centroids })
    }

    pub fn centroid(&self, position: usize, code: usize) -> &[f64] {
        let start = (position * self.k + code) * self.d;
        &self.centroids[start..start + self.d]
    }

    fn position(&self, position: usize) -> &[f64] {
        &self.centroids[position * self.k * self.d..(position + 1) * self.k * self.d]
    }

    /// Size of the combinatorial ID space, `k^n`, as a float.
    pub fn id_space(&self) -> f64 {
        (self.k as f64).powi(self.n as i32)
    }

    /// Writes an `FCBK` file: `"FCBK"`, version, n, K, d (`u32` little-endian),
    /// then the centroids position-major as `f32`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + 4 * self.centroids.len());
        buf.extend_from_slice(FCBK_MAGIC);
        for v in [FCBK_VERSION, self.n as u32, self.k as u32, self.d as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &c in &self.centroids {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        write_bytes(path, &buf)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut r = LeReader::new(path, &bytes);
        r.magic(FCBK_MAGIC)?;
        let version = r.u32()?;
        if version != FCBK_VERSION {
            return Err(r.format_error(format!("unsupported version {version}")));
        }
        let (n, k, d) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let centroids = (0..n * k * d)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Codebook::from_centroids(n, k, d, centroids)
    }
}

const FCBK_MAGIC: &[u8; 4] = b"FCBK";
const FCBK_VERSION: u32 = 1;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        s += t * t;
    }
    s
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (code, c) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(point, c);
        if dist < best.1 {
            best = (code, dist);
        }
    }
    best
}

/// Outcome of one k-means run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansReport {
    /// Sum of squared distances after each assignment step, final centroids last.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub empty_repairs: usize,
}

/// Seeded k-means++ followed by Lloyd iterations on `points` (row-major, `d` wide).
///
/// Stops once the largest centroid displacement falls below `tol` or after
/// `max_iters` updates. An empty cluster is moved onto the point farthest from
/// its assigned centroid, so exactly `k` centroids always come back.
pub fn kmeans(
    points: &[f64],
    d: usize,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(Vec<f64>, KMeansReport)> {
    if d == 0 || k == 0 {
        return Err(FusidError::InvalidConfig("k-means needs d >= 1 and k >= 1".into()));
    }
    let n_points = points.len() / d;
    if n_points < k {
        return Err(FusidError::TooFewItems {
            required: k,
            actual: n_points,
        });
    }
    let mut rng = rng::seeded(seed);
    let mut centroids = plus_plus_init(points, d, k, &mut rng);
    let mut report = KMeansReport {
        inertia: Vec::new(),
        iterations: 0,
        converged: false,
        empty_repairs: 0,
    };

    for _ in 0..max_iters {
        let assignment = assign_all(points, &centroids, d);
        record_inertia(&mut report, &assignment);

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &(code, _)) in points.chunks_exact(d).zip(&assignment) {
            counts[code] += 1;
            for (s, v) in sums[code * d..(code + 1) * d].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut updated = centroids.clone();
        for code in 0..k {
            if counts[code] > 0 {
                let inv = 1.0 / counts[code] as f64;
                for (u, s) in updated[code * d..(code + 1) * d].iter_mut().zip(&sums[code * d..]) {
                    *u = s * inv;
                }
            }
        }
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut far: Vec<usize> = (0..n_points).collect();
            far.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
            for (code, &p) in empties.iter().zip(&far) {
                updated[code * d..(code + 1) * d].copy_from_slice(&points[p * d..(p + 1) * d]);
            }
            report.empty_repairs += empties.len();
        }

        let displacement = centroids
            .chunks_exact(d)
            .zip(updated.chunks_exact(d))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        report.iterations += 1;
        if displacement < tol {
            report.converged = true;
            break;
        }
    }
    let assignment = assign_all(points, &centroids, d);
    record_inertia(&mut report, &assignment);
    Ok((centroids, report))
}

fn record_inertia(report: &mut KMeansReport, assignment: &[(usize, f64)]) {
    let inertia: f64 = assignment.iter().map(|a| a.1).sum();
    if let Some(&prev) = report.inertia.last() {
        debug_assert!(
            inertia <= prev + 1e-12 * prev.abs().max(1.0),
            "k-means inertia increased from {prev} to {inertia}"
        );
    }
    report.inertia.push(inertia);
}

fn assign_all(points: &[f64], centroids: &[f64], d: usize) -> Vec<(usize, f64)> {
    points
        .par_chunks_exact(d)
        .map(|p| nearest(p, centroids, d))
        .collect()
}

fn plus_plus_init(points: &[f64], d: usize, k: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let n_points = points.len() / d;
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n_points);
    centroids.extend_from_slice(row(first));
    let mut best: Vec<f64> = (0..n_points).map(|i| sq_dist(row(i), row(first))).collect();
    while centroids.len() < k * d {
        let next = match WeightedIndex::new(&best) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rng.random_range(0..n_points),
        };
        let c = row(next).to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            let dist = sq_dist(row(i), &c);
            if dist < *b {
                *b = dist;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Fits one codebook per position on the training sub-embeddings.
///
/// `train` maps each training track to its flattened `n·d` embedding.
pub fn fit_codebook(
    train: &BTreeMap<TrackId, Vec<f64>>,
    n: usize,
    cfg: &PqConfig,
    seed: u64,
) -> Result<(Codebook, Vec<KMeansReport>)> {
    let width = train
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| FusidError::EmptyInput("no training embeddings".into()))?;
    if n == 0 || width % n != 0 {
        return Err(FusidError::DimensionMismatch {
            what: format!("embedding width for {n} positions"),
            expected: n * (width / n.max(1)).max(1),
            actual: width,
        });
    }
    let d = width / n;
    if train.len() < cfg.k {
        return Err(FusidError::TooFewItems {
            required: cfg.k,
            actual: train.len(),
        });
    }
    for (id, e) in train {
        if e.len() != width {
            return Err(FusidError::DimensionMismatch {
                what: format!("embedding of track {id}"),
                expected: width,
                actual: e.len(),
            });
        }
    }
    let results: Vec<Result<(Vec<f64>, KMeansReport)>> = (0..n)
        .into_par_iter()
        .map(|pos| {
            let points: Vec<f64> = train
                .values()
                .flat_map(|e| e[pos * d..(pos + 1) * d].iter().copied())
                .collect();
            let seed = rng::derive_seed(seed, &format!("pq-position-{pos}"));
            kmeans(&points, d, cfg.k, cfg.max_iters, cfg.tol, seed)
        })
        .collect();
    let mut centroids = Vec::with_capacity(n * cfg.k * d);
    let mut reports = Vec::with_capacity(n);
    for r in results {
        let (c, report) = r?;
        centroids.extend(c);
        reports.push(report);
    }
    Ok((Codebook::from_centroids(n, cfg.k, d, centroids)?, reports))
}

/// Nearest code per position; ties go to the lowest code index.
pub fn assign(codebook: &Codebook, e: &[f64]) -> Result<SemanticId> {
    if e.len() != codebook.n * codebook.d {
        return Err(FusidError::DimensionMismatch {
            what: "embedding for assignment".into(),
            expected: codebook.n * codebook.d,
            actual: e.len(),
        });
    }
    let d = codebook.d;
    Ok(SemanticId(
        (0..codebook.n)
            .map(|pos| nearest(&e[pos * d..(pos + 1) * d], codebook.position(pos), d).0 as u32)
            .collect(),
    ))
}

pub fn tokenize_catalog(
    codebook: &Codebook,
    embeddings: &BTreeMap<TrackId, Vec<f64>>,
) -> Result<BTreeMap<TrackId, SemanticId>> {
    let entries: Vec<(&TrackId, &Vec<f64>)> = embeddings.iter().collect();
    entries
        .par_iter()
        .map(|(&id, e)| assign(codebook, e).map(|sid| (id, sid)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

#[derive(Serialize, Deserialize)]
struct SidRecord {
    track_id: TrackId,
    sid: SemanticId,
}

pub fn write_sids(path: &Path, sids: &BTreeMap<TrackId, SemanticId>) -> Result<()> {
    let records: Vec<SidRecord> = sids
        .iter()
        .map(|(&track_id, sid)| SidRecord {
            track_id,
            sid: sid.clone(),
        })
        .collect();
    io::write_jsonl(path, &records)
}

pub fn read_sids(path: &Path) -> Result<BTreeMap<TrackId, SemanticId>> {
    let records: Vec<SidRecord> = io::read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for r in records {
        if out.insert(r.track_id, r.sid).is_some() {
            return Err(FusidError::DuplicateId(r.track_id));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pairs_recover_pair_means() {
        let points = [0.0, 0.0, 0.0, 1.0, 10.0, 10.0, 10.0, 11.0];
        let (c, report) = kmeans(&points, 2, 2, 100, 1e-9, 3).unwrap();
        let mut cs: Vec<(f64, f64)> = c.chunks(2).map(|p| (p[0], p[1])).collect();
        cs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((cs[0].0 - 0.0).abs() < 1e-9 && (cs[0].1 - 0.5).abs() < 1e-9);
        assert!((cs[1].0 - 10.0).abs() < 1e-9 && (cs[1].1 - 10.5).abs() < 1e-9);
        assert!(report.converged);
    }

    #[test]
    fn k_equal_to_points_is_exact_cover() {
        let points: Vec<f64> = (0..12).map(|v| (v as f64 * 1.3).sin()).collect();
        let (c, report) = kmeans(&points, 3, 4, 50, 1e-9, 1).unwrap();
        assert_eq!(*report.inertia.last().unwrap(), 0.0);
        for p in points.chunks(3) {
            assert!(c.chunks(3).any(|x| x == p));
        }
    }

    #[test]
    fn fewer_points_than_k_is_an_error() {
        assert!(matches!(
            kmeans(&[0.0, 1.0], 1, 3, 10, 1e-6, 0),
            Err(FusidError::TooFewItems { required: 3, actual: 2 })
        ));
    }

    #[test]
    fn duplicate_points_still_return_k_centroids() {
        let points = vec![1.0; 10];
        let (c, _) = kmeans(&points, 1, 3, 10, 1e-6, 0).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn assign_nearest_and_tie_rule() {
        let cb = Codebook::from_centroids(1, 2, 2, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        assert_eq!(assign(&cb, &[1.0, 1.0]).unwrap(), SemanticId(vec![0]));
        let mut cents = vec![100.0; 8];
        cents[3] = 1.0;
        cents[7] = -1.0;
        let cb = Codebook::from_centroids(1, 8, 1, cents).unwrap();
        assert_eq!(assign(&cb, &[0.0]).unwrap(), SemanticId(vec![3]));
        assert!(assign(&cb, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_checks_size() {
        let train: BTreeMap<TrackId, Vec<f64>> = (0..40)
            .map(|i| (i, (0..6).map(|j| ((i * 7 + j) as f64).sin()).collect()))
            .collect();
        let cfg = PqConfig { k: 4, ..PqConfig::default() };
        let a = fit_codebook(&train, 2, &cfg, 9).unwrap();
        let b = fit_codebook(&train, 2, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.0.n, a.0.k, a.0.d), (2, 4, 3));
        let big = PqConfig { k: 41, ..cfg };
        assert!(fit_codebook(&train, 2, &big, 9).is_err());
    }

    #[test]
    fn id_space_of_default_shape() {
        let cb = Codebook::from_centroids(5, 1024, 1, vec![0.0; 5 * 1024]).unwrap();
        assert_eq!(cb.id_space(), 1024f64.powi(5));
        assert!((cb.id_space() - 1.1259e15).abs() / 1.1259e15 < 1e-4);
    }

    #[test]
    fn identical_embeddings_share_a_sid() {
        let cb = Codebook::from_centroids(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let emb: BTreeMap<TrackId, Vec<f64>> = [(1, vec![0.2, 0.9]), (2, vec![0.2, 0.9])].into();
        let sids = tokenize_catalog(&cb, &emb).unwrap();
        assert_eq!(sids[&1], sids[&2]);
        assert_eq!(sids[&1], SemanticId(vec![0, 1]));
    }

    #[test]
    fn codebook_file_round_trip_at_f32() {
        let cb = Codebook::from_centroids(2, 2, 1, vec![0.5, 1.25, -3.0, 8.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fcbk");
        cb.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FCBK");
        assert_eq!(bytes.len(), 20 + 4 * 4);
        assert_eq!(Codebook::read(&path).unwrap(), cb);
    }
}
