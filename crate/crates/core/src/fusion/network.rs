use rand::Rng;

use super::{FusionConfig, LayerNormMode};
use crate::error::{FusidError, Result};
use crate::tensor::{linear, linear_backward, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics; needs at least two rows.
    Train,
    /// Batch-norm uses its running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln_scale: Vec<f64>,
    pub ln_shift: Vec<f64>,
    pub ln_eps: f64,
    pub ln_mode: LayerNormMode,
    pub n: usize,
    pub d: usize,
}

/// Gradients of the trainable blocks, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln_scale: Vec<f64>,
    pub ln_shift: Vec<f64>,
}

impl FusionGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice(),
            &self.b1,
            &self.bn_scale,
            &self.bn_shift,
            self.w2.as_slice(),
            &self.b2,
            &self.ln_scale,
            &self.ln_shift,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Batch-norm statistics of one training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, which is what the running estimate tracks.
    pub var_unbiased: Vec<f64>,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    x: Matrix,
    xhat: Matrix,
    bn_rstd: Vec<f64>,
    pre_relu: Matrix,
    hidden: Matrix,
    yhat: Matrix,
    /// Per row and layer-norm group.
    ln_rstd: Vec<f64>,
}

impl FusionModel {
    /// Kaiming-uniform weights (fan-in), zero biases, identity normalizations.
    pub fn init(input_dim: usize, cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let hidden = cfg.hidden_dim;
        let out = cfg.n * cfg.d;
        let kaiming = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            let bound = (6.0 / cols as f64).sqrt();
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
            )
        };
        let w1 = kaiming(hidden, input_dim, rng);
        let w2 = kaiming(out, hidden, rng);
        FusionModel {
            w1,
            b1: vec![0.0; hidden],
            bn_scale: vec![1.0; hidden],
            bn_shift: vec![0.0; hidden],
            running_mean: vec![0.0; hidden],
            running_var: vec![1.0; hidden],
            bn_momentum: cfg.bn_momentum,
            bn_eps: cfg.bn_eps,
            w2,
            b2: vec![0.0; out],
            ln_scale: vec![1.0; out],
            ln_shift: vec![0.0; out],
            ln_eps: cfg.ln_eps,
            ln_mode: cfg.layer_norm,
            n: cfg.n,
            d: cfg.d,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.n * self.d
    }

    pub fn zero_grads(&self) -> FusionGrads {
        FusionGrads {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            bn_scale: vec![0.0; self.bn_scale.len()],
            bn_shift: vec![0.0; self.bn_shift.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
            ln_scale: vec![0.0; self.ln_scale.len()],
            ln_shift: vec![0.0; self.ln_shift.len()],
        }
    }

    /// Trainable blocks in the same order as [`FusionGrads::blocks`].
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            &mut self.bn_scale,
            &mut self.bn_shift,
            self.w2.as_mut_slice(),
            &mut self.b2,
            &mut self.ln_scale,
            &mut self.ln_shift,
        ]
    }

    pub fn is_finite(&self) -> bool {
        let extra = [&self.running_mean, &self.running_var];
        self.w1.is_finite()
            && self.w2.is_finite()
            && [&self.b1, &self.bn_scale, &self.bn_shift, &self.b2, &self.ln_scale, &self.ln_shift]
                .iter()
                .chain(extra.iter())
                .all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn ln_group(&self) -> usize {
        match self.ln_mode {
            LayerNormMode::Full => self.n * self.d,
            LayerNormMode::PerSubEmbedding => self.d,
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(FusidError::DimensionMismatch {
                what: "fusion input".into(),
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass over a batch of concatenated features; rows of the result
    /// are flattened `n × d` embeddings.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(e, _, _)| e),
            Mode::Eval => self.forward_eval(x),
        }
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = linear(x, &self.w1, Some(&self.b1));
        for r in 0..a.rows() {
            for (h, v) in a.row_mut(r).iter_mut().enumerate() {
                let xhat = (*v - self.running_mean[h]) / (self.running_var[h] + self.bn_eps).sqrt();
                *v = (self.bn_scale[h] * xhat + self.bn_shift[h]).max(0.0);
            }
        }
        let z2 = linear(&a, &self.w2, Some(&self.b2));
        let (e, _, _) = self.layer_norm(&z2);
        Ok(e)
    }

    pub(crate) fn forward_train(&self, x: &Matrix) -> Result<(Matrix, ForwardCache, BatchStats)> {
        self.check_input(x)?;
        let b = x.rows();
        if b < 2 {
            return Err(FusidError::DegenerateBatch(format!(
                "train-mode batch norm needs at least 2 rows, got {b}"
            )));
        }
        let hidden = self.hidden_dim();
        let z1 = linear(x, &self.w1, Some(&self.b1));

        let mut mean = vec![0.0; hidden];
        for r in 0..b {
            for (m, v) in mean.iter_mut().zip(z1.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; hidden];
        for r in 0..b {
            for ((s, v), m) in var.iter_mut().zip(z1.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let var_unbiased: Vec<f64> = var.iter().map(|s| s / (b - 1) as f64).collect();
        let bn_rstd: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / b as f64 + self.bn_eps).sqrt())
            .collect();

        let mut xhat = Matrix::zeros(b, hidden);
        let mut pre_relu = Matrix::zeros(b, hidden);
        let mut act = Matrix::zeros(b, hidden);
        for r in 0..b {
            for h in 0..hidden {
                let xh = (z1[(r, h)] - mean[h]) * bn_rstd[h];
                let a = self.bn_scale[h] * xh + self.bn_shift[h];
                xhat[(r, h)] = xh;
                pre_relu[(r, h)] = a;
                act[(r, h)] = a.max(0.0);
            }
        }
        let z2 = linear(&act, &self.w2, Some(&self.b2));
        let (e, yhat, ln_rstd) = self.layer_norm(&z2);
        let cache = ForwardCache {
            x: x.clone(),
            xhat,
            bn_rstd,
            pre_relu,
            hidden: act,
            yhat,
            ln_rstd,
        };
        Ok((e, cache, BatchStats { mean, var_unbiased }))
    }

    /// Returns `(output, normalized, rstd per row-group)`.
    fn layer_norm(&self, z: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
        let group = self.ln_group();
        let groups = z.cols() / group;
        let mut out = Matrix::zeros(z.rows(), z.cols());
        let mut yhat = Matrix::zeros(z.rows(), z.cols());
        let mut rstds = Vec::with_capacity(z.rows() * groups);
        for r in 0..z.rows() {
            let row = z.row(r);
            for g in 0..groups {
                let span = g * group..(g + 1) * group;
                let vals = &row[span.clone()];
                let mean = vals.iter().sum::<f64>() / group as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
                let rstd = 1.0 / (var + self.ln_eps).sqrt();
                rstds.push(rstd);
                for c in span {
                    let y = (row[c] - mean) * rstd;
                    yhat[(r, c)] = y;
                    out[(r, c)] = self.ln_scale[c] * y + self.ln_shift[c];
                }
            }
        }
        (out, yhat, rstds)
    }

    /// Backpropagates `d_out` (gradient w.r.t. the flattened embeddings) to all trainable blocks.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> FusionGrads {
        let mut grads = self.zero_grads();
        let b = d_out.rows();
        let group = self.ln_group();
        let groups = d_out.cols() / group;

        // layer norm
        let mut dz2 = Matrix::zeros(b, d_out.cols());
        for r in 0..b {
            for g in 0..groups {
                let rstd = cache.ln_rstd[r * groups + g];
                let span = g * group..(g + 1) * group;
                let (mut mean_dy, mut mean_dy_y) = (0.0, 0.0);
                for c in span.clone() {
                    let de = d_out[(r, c)];
                    let y = cache.yhat[(r, c)];
                    grads.ln_scale[c] += de * y;
                    grads.ln_shift[c] += de;
                    let dy = de * self.ln_scale[c];
                    mean_dy += dy;
                    mean_dy_y += dy * y;
                }
                mean_dy /= group as f64;
                mean_dy_y /= group as f64;
                for c in span {
                    let dy = d_out[(r, c)] * self.ln_scale[c];
                    dz2[(r, c)] = rstd * (dy - mean_dy - cache.yhat[(r, c)] * mean_dy_y);
                }
            }
        }

        // second linear
        let mut dact = linear_backward(&cache.hidden, &self.w2, &dz2, &mut grads.w2, Some(&mut grads.b2), true)
            .expect("dx requested");

        // relu + batch norm (train statistics)
        let hidden = self.hidden_dim();
        for r in 0..b {
            for h in 0..hidden {
                if cache.pre_relu[(r, h)] <= 0.0 {
                    dact[(r, h)] = 0.0;
                }
            }
        }
        let mut mean_dxhat = vec![0.0; hidden];
        let mut mean_dxhat_xhat = vec![0.0; hidden];
        for r in 0..b {
            for h in 0..hidden {
                let da = dact[(r, h)];
                let xh = cache.xhat[(r, h)];
                grads.bn_scale[h] += da * xh;
                grads.bn_shift[h] += da;
                let dxh = da * self.bn_scale[h];
                mean_dxhat[h] += dxh;
                mean_dxhat_xhat[h] += dxh * xh;
            }
        }
        for h in 0..hidden {
            mean_dxhat[h] /= b as f64;
            mean_dxhat_xhat[h] /= b as f64;
        }
        let mut dz1 = Matrix::zeros(b, hidden);
        for r in 0..b {
            for h in 0..hidden {
                let dxh = dact[(r, h)] * self.bn_scale[h];
                dz1[(r, h)] =
                    cache.bn_rstd[h] * (dxh - mean_dxhat[h] - cache.xhat[(r, h)] * mean_dxhat_xhat[h]);
            }
        }

        linear_backward(&cache.x, &self.w1, &dz1, &mut grads.w1, Some(&mut grads.b1), false);
        grads
    }

    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let m = self.bn_momentum;
        for h in 0..self.running_mean.len() {
            self.running_mean[h] = (1.0 - m) * self.running_mean[h] + m * stats.mean[h];
            self.running_var[h] = (1.0 - m) * self.running_var[h] + m * stats.var_unbiased[h];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_cfg() -> FusionConfig {
        FusionConfig {
            input_dim: Some(12),
            hidden_dim: 8,
            n: 2,
            d: 3,
            ..FusionConfig::default()
        }
    }

    #[test]
    fn default_output_shape_is_five_by_128() {
        let cfg = FusionConfig {
            hidden_dim: 16,
            ..FusionConfig::default()
        };
        let model = FusionModel::init(10, &cfg, &mut rng::seeded(0));
        let x = Matrix::from_vec(3, 10, (0..30).map(|v| v as f64 * 0.1).collect());
        let e = model.forward(&x, Mode::Train).unwrap();
        assert_eq!((e.rows(), e.cols()), (3, 5 * 128));
        assert_eq!((model.n, model.d), (5, 128));
    }

    #[test]
    fn zero_parameters_give_zero_embedding() {
        let mut model = FusionModel::init(12, &tiny_cfg(), &mut rng::seeded(0));
        model.w1.fill(0.0);
        model.w2.fill(0.0);
        let x = Matrix::from_vec(2, 12, (0..24).map(|v| v as f64).collect());
        for mode in [Mode::Train, Mode::Eval] {
            let e = model.forward(&x, mode).unwrap();
            assert!(e.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn eval_is_deterministic_and_batch_free() {
        let model = FusionModel::init(12, &tiny_cfg(), &mut rng::seeded(4));
        let x = Matrix::from_vec(1, 12, (0..12).map(|v| (v as f64).sin()).collect());
        let a = model.forward(&x, Mode::Eval).unwrap();
        let b = model.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_rejects_single_row_and_bad_width() {
        let model = FusionModel::init(12, &tiny_cfg(), &mut rng::seeded(4));
        let x = Matrix::zeros(1, 12);
        assert!(matches!(model.forward(&x, Mode::Train), Err(FusidError::DegenerateBatch(_))));
        let x = Matrix::zeros(2, 11);
        assert!(matches!(
            model.forward(&x, Mode::Eval),
            Err(FusidError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut model = FusionModel::init(12, &tiny_cfg(), &mut rng::seeded(4));
        let stats = BatchStats {
            mean: vec![1.0; 8],
            var_unbiased: vec![3.0; 8],
        };
        model.update_running_stats(&stats);
        assert!((model.running_mean[0] - 0.1).abs() < 1e-15);
        assert!((model.running_var[0] - 1.2).abs() < 1e-15);
    }
}
