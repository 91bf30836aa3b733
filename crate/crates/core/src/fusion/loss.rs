//! The three objective terms and their analytic gradients with respect to a
//! batch of flattened embeddings (`B × n·d`).

use std::collections::{BTreeMap, HashMap};

use super::network::{BatchStats, FusionGrads, FusionModel};
use super::{DistanceMode, FusionConfig};
use crate::error::{FusidError, Result};
use crate::pairmine::LabeledPair;
use crate::tensor::{axpy, Matrix};
use crate::TrackId;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cont: f64,
    pub cov: f64,
    pub var: f64,
    pub total: f64,
}

/// Distinct items of a pair mini-batch and the pairs as row indices into them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub ids: Vec<TrackId>,
    pub items: Matrix,
    pub pairs: Vec<(usize, usize, u8)>,
}

impl PairBatch {
    /// Items appear in first-use order.
    pub fn from_pairs(pairs: &[LabeledPair], features: &BTreeMap<TrackId, Vec<f64>>) -> Result<Self> {
        let mut index: HashMap<TrackId, usize> = HashMap::new();
        let mut ids = Vec::new();
        let mut slot = |id: TrackId| -> Result<usize> {
            if let Some(&i) = index.get(&id) {
                return Ok(i);
            }
            if !features.contains_key(&id) {
                return Err(FusidError::MissingFeature(id));
            }
            index.insert(id, ids.len());
            ids.push(id);
            Ok(ids.len() - 1)
        };
        let mut rows = Vec::with_capacity(pairs.len());
        for p in pairs {
            rows.push((slot(p.a)?, slot(p.b)?, p.y));
        }
        let width = features.values().next().map_or(0, Vec::len);
        let mut items = Matrix::zeros(ids.len(), width);
        for (r, id) in ids.iter().enumerate() {
            let f = &features[id];
            if f.len() != width {
                return Err(FusidError::DimensionMismatch {
                    what: format!("features of track {id}"),
                    expected: width,
                    actual: f.len(),
                });
            }
            items.row_mut(r).copy_from_slice(f);
        }
        Ok(PairBatch {
            ids,
            items,
            pairs: rows,
        })
    }
}

fn distance_scale(mode: DistanceMode, dim: usize) -> f64 {
    match mode {
        DistanceMode::Plain => 1.0,
        DistanceMode::DimNormalized => (dim as f64).sqrt(),
    }
}

/// `((1 − y) − D(E_i, E_j))²` for one pair.
pub fn contrastive_loss(e_i: &[f64], e_j: &[f64], y: u8, mode: DistanceMode) -> Result<f64> {
    if e_i.len() != e_j.len() {
        return Err(FusidError::DimensionMismatch {
            what: "contrastive pair".into(),
            expected: e_i.len(),
            actual: e_j.len(),
        });
    }
    if y > 1 {
        return Err(FusidError::InvalidConfig(format!("pair label must be 0 or 1, got {y}")));
    }
    let dist = e_i
        .iter()
        .zip(e_j)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / distance_scale(mode, e_i.len());
    let target = 1.0 - y as f64;
    Ok((target - dist) * (target - dist))
}

/// Mean contrastive loss over `pairs` and its gradient w.r.t. `e`.
pub fn contrastive_batch(e: &Matrix, pairs: &[(usize, usize, u8)], mode: DistanceMode) -> Result<(f64, Matrix)> {
    if pairs.is_empty() {
        return Err(FusidError::DegenerateBatch("no pairs".into()));
    }
    let scale = distance_scale(mode, e.cols());
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut total = 0.0;
    let inv_p = 1.0 / pairs.len() as f64;
    let mut diff = vec![0.0; e.cols()];
    for &(i, j, y) in pairs {
        total += contrastive_loss(e.row(i), e.row(j), y, mode)?;
        for ((d, a), b) in diff.iter_mut().zip(e.row(i)).zip(e.row(j)) {
            *d = a - b;
        }
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Subgradient 0 at coincident points.
            continue;
        }
        let dist = norm / scale;
        let target = 1.0 - y as f64;
        // dL/dD · dD/d(diff)
        let coef = inv_p * 2.0 * (dist - target) / (scale * norm);
        axpy(coef, &diff, grad.row_mut(i));
        axpy(-coef, &diff, grad.row_mut(j));
    }
    Ok((total * inv_p, grad))
}

fn centered(e: &Matrix) -> Matrix {
    let b = e.rows();
    let mut mean = vec![0.0; e.cols()];
    for r in 0..b {
        axpy(1.0, e.row(r), &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut out = e.clone();
    for r in 0..b {
        axpy(-1.0, &mean, out.row_mut(r));
    }
    out
}

fn require_batch(e: &Matrix) -> Result<()> {
    if e.rows() < 2 {
        return Err(FusidError::DegenerateBatch(format!(
            "regularizers need at least 2 embeddings, got {}",
            e.rows()
        )));
    }
    Ok(())
}

/// Cross-covariance block `Cov(e_p, e_q)` (`d × d`, unbiased).
fn cross_cov(xc: &Matrix, p: usize, q: usize, d: usize) -> Matrix {
    let mut c = Matrix::zeros(d, d);
    for r in 0..xc.rows() {
        let row = xc.row(r);
        let (bp, bq) = (&row[p * d..(p + 1) * d], &row[q * d..(q + 1) * d]);
        for (k, &v) in bp.iter().enumerate() {
            if v != 0.0 {
                axpy(v, bq, c.row_mut(k));
            }
        }
    }
    let inv = 1.0 / (xc.rows() - 1) as f64;
    c.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
    c
}

/// `2/(n(n−1)) · Σ_{p<q} (1/d) ‖Cov(e_p, e_q)‖_F²` and its gradient.
pub fn covariance_loss_with_grad(e: &Matrix, n: usize, d: usize) -> Result<(f64, Matrix)> {
    require_batch(e)?;
    if e.cols() != n * d {
        return Err(FusidError::DimensionMismatch {
            what: "covariance loss input".into(),
            expected: n * d,
            actual: e.cols(),
        });
    }
    let mut grad_c = Matrix::zeros(e.rows(), e.cols());
    if n < 2 {
        return Ok((0.0, grad_c));
    }
    let xc = centered(e);
    let coef = 2.0 / (n * (n - 1)) as f64 / d as f64;
    let inv = 1.0 / (e.rows() - 1) as f64;
    let mut loss = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            let c = cross_cov(&xc, p, q, d);
            loss += coef * c.as_slice().iter().map(|v| v * v).sum::<f64>();
            // G = dL/dC = 2·coef·C
            for r in 0..e.rows() {
                let row = xc.row(r);
                let (bp, bq) = (row[p * d..(p + 1) * d].to_vec(), row[q * d..(q + 1) * d].to_vec());
                let g_row = grad_c.row_mut(r);
                for k in 0..d {
                    let ck = c.row(k);
                    // d/dxc_p[k] = Σ_l G[k,l] xc_q[l] / (B−1)
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += ck[l] * bq[l];
                    }
                    g_row[p * d + k] += 2.0 * coef * inv * acc;
                    // d/dxc_q[l] += G[k,l] xc_p[k] / (B−1)
                    let scale = 2.0 * coef * inv * bp[k];
                    if scale != 0.0 {
                        axpy(scale, ck, &mut g_row[q * d..(q + 1) * d]);
                    }
                }
            }
        }
    }
    // Back through the centering: subtract the per-column mean gradient.
    Ok((loss, centered(&grad_c)))
}

pub fn covariance_loss(e: &Matrix, n: usize, d: usize) -> Result<f64> {
    covariance_loss_with_grad(e, n, d).map(|(l, _)| l)
}

/// `(1/(n·d)) Σ_c max(0, γ − sqrt(Var(column c) + ε))` and its gradient.
pub fn variance_loss_with_grad(e: &Matrix, gamma: f64, eps: f64) -> Result<(f64, Matrix)> {
    require_batch(e)?;
    let b = e.rows();
    let cols = e.cols();
    let xc = centered(e);
    let mut var = vec![0.0; cols];
    for r in 0..b {
        for (v, x) in var.iter_mut().zip(xc.row(r)) {
            *v += x * x;
        }
    }
    var.iter_mut().for_each(|v| *v /= (b - 1) as f64);

    let mut loss = 0.0;
    // dL/dvar per column; zero where the hinge is inactive
    let mut dvar = vec![0.0; cols];
    for c in 0..cols {
        let std = (var[c] + eps).sqrt();
        let slack = gamma - std;
        if slack > 0.0 {
            loss += slack;
            dvar[c] = -0.5 / std / cols as f64;
        }
    }
    loss /= cols as f64;

    let mut grad = Matrix::zeros(b, cols);
    let scale = 2.0 / (b - 1) as f64;
    for r in 0..b {
        let (g, x) = (grad.row_mut(r), xc.row(r));
        for c in 0..cols {
            g[c] = dvar[c] * scale * x[c];
        }
    }
    Ok((loss, grad))
}

pub fn variance_loss(e: &Matrix, gamma: f64, eps: f64) -> Result<f64> {
    variance_loss_with_grad(e, gamma, eps).map(|(l, _)| l)
}

/// `L_cont + α (L_cov + L_var)` on one pair batch, with exact gradients for
/// every trainable block. The regularizers see the batch's distinct items.
pub fn total_loss(
    model: &FusionModel,
    batch: &PairBatch,
    cfg: &FusionConfig,
) -> Result<(LossBreakdown, FusionGrads, BatchStats)> {
    let has_pos = batch.pairs.iter().any(|p| p.2 == 1);
    let has_neg = batch.pairs.iter().any(|p| p.2 == 0);
    if !has_pos || !has_neg {
        return Err(FusidError::DegenerateBatch(
            "pair batch needs at least one positive and one negative".into(),
        ));
    }
    let (e, cache, stats) = model.forward_train(&batch.items)?;
    let (cont, mut grad) = contrastive_batch(&e, &batch.pairs, cfg.distance_mode)?;
    let (cov, g_cov) = covariance_loss_with_grad(&e, model.n, model.d)?;
    let (var, g_var) = variance_loss_with_grad(&e, cfg.gamma, cfg.eps)?;
    if cfg.alpha != 0.0 {
        axpy(cfg.alpha, g_cov.as_slice(), grad.as_mut_slice());
        axpy(cfg.alpha, g_var.as_slice(), grad.as_mut_slice());
    }
    let total = cont + cfg.alpha * (cov + var);
    let grads = model.backward(&cache, &grad);
    Ok((LossBreakdown { cont, cov, var, total }, grads, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_identities() {
        let e = [0.5, -1.0, 2.0];
        assert_eq!(contrastive_loss(&e, &e, 1, DistanceMode::Plain).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&e, &e, 0, DistanceMode::Plain).unwrap(), 1.0);
        assert_eq!(
            contrastive_loss(&[0.0, 0.0], &[0.6, 0.8], 0, DistanceMode::Plain).unwrap(),
            0.0
        );
        // dim-normalized: |diff| = 2 over 4 dims -> D = 1
        assert_eq!(
            contrastive_loss(&[0.0; 4], &[1.0; 4], 0, DistanceMode::DimNormalized).unwrap(),
            0.0
        );
        assert!(contrastive_loss(&[0.0; 2], &[0.0; 3], 0, DistanceMode::Plain).is_err());
    }

    #[test]
    fn constant_batch_variance_is_one_minus_sqrt_eps() {
        let e = Matrix::from_vec(4, 3, vec![0.7; 12]);
        let l = variance_loss(&e, 1.0, 1e-4).unwrap();
        assert!((l - 0.99).abs() < 1e-12);
    }

    #[test]
    fn unit_variance_batch_has_zero_variance_loss() {
        let s = 2f64.sqrt();
        let e = Matrix::from_vec(2, 3, vec![0.0, 1.0, -3.0, s, 1.0 + s, -3.0 + s]);
        assert_eq!(variance_loss(&e, 1.0, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn covariance_of_duplicated_identity_block() {
        // n=2, d=2, e_2 = e_1, per-dim covariance of e_1 = I over B=4 (unbiased)
        let s = (3.0f64 / 2.0).sqrt();
        let rows = [[s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]];
        let data: Vec<f64> = rows.iter().flat_map(|r| [r[0], r[1], r[0], r[1]]).collect();
        let e = Matrix::from_vec(4, 4, data);
        let l = covariance_loss(&e, 2, 2).unwrap();
        assert!((l - 1.0).abs() < 1e-12, "{l}");
    }

    #[test]
    fn constant_position_contributes_nothing() {
        let e = Matrix::from_vec(3, 4, vec![1.0, 2.0, 5.0, 5.0, 3.0, -1.0, 5.0, 5.0, 0.0, 4.0, 5.0, 5.0]);
        assert_eq!(covariance_loss(&e, 2, 2).unwrap(), 0.0);
    }

    #[test]
    fn regularizers_reject_single_row() {
        let e = Matrix::zeros(1, 4);
        assert!(covariance_loss(&e, 2, 2).is_err());
        assert!(variance_loss(&e, 1.0, 1e-4).is_err());
    }

    #[test]
    fn single_position_has_no_covariance_pairs() {
        let e = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 5.0]);
        assert_eq!(covariance_loss(&e, 1, 2).unwrap(), 0.0);
    }
}
