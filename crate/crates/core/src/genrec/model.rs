//! A small pre-norm decoder-only transformer in `f64` with hand-written backprop.
//!
//! The full-sequence forward used for training and the single-position
//! [`RecModel::step`] used for cached scoring run the same per-row kernels in
//! the same order, so a position's logits are bit-identical on both paths.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FusidError, Result};
use crate::tensor::{axpy, dot, linear, linear_backward, linear_row, log_softmax, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecDims {
    pub vocab: usize,
    pub max_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
}

impl RecDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.max_len == 0 || self.layers == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(FusidError::InvalidConfig("transformer dims must be >= 1".into()));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(FusidError::InvalidConfig(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    /// `3·dim × dim`: query, key and value projections stacked.
    pub w_qkv: Matrix,
    pub b_qkv: Vec<f64>,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w_fc: Matrix,
    pub b_fc: Vec<f64>,
    pub w_proj: Matrix,
    pub b_proj: Vec<f64>,
}

/// Decoder-only next-token model. The output projection is untied from the
/// token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RecModel {
    pub dims: RecDims,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub blocks: Vec<Block>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl Block {
    fn zeros(dim: usize, ff: usize) -> Self {
        Block {
            ln1_g: vec![0.0; dim],
            ln1_b: vec![0.0; dim],
            w_qkv: Matrix::zeros(3 * dim, dim),
            b_qkv: vec![0.0; 3 * dim],
            w_o: Matrix::zeros(dim, dim),
            b_o: vec![0.0; dim],
            ln2_g: vec![0.0; dim],
            ln2_b: vec![0.0; dim],
            w_fc: Matrix::zeros(ff, dim),
            b_fc: vec![0.0; ff],
            w_proj: Matrix::zeros(dim, ff),
            b_proj: vec![0.0; dim],
        }
    }
}

impl RecModel {
    /// All-zero parameters of the given shape; also serves as a gradient buffer.
    pub fn zeros(dims: RecDims) -> Self {
        let RecDims { vocab, max_len, layers, dim, ff_dim, .. } = dims;
        RecModel {
            dims,
            tok_emb: Matrix::zeros(vocab, dim),
            pos_emb: Matrix::zeros(max_len, dim),
            blocks: (0..layers).map(|_| Block::zeros(dim, ff_dim)).collect(),
            lnf_g: vec![0.0; dim],
            lnf_b: vec![0.0; dim],
            w_out: Matrix::zeros(vocab, dim),
            b_out: vec![0.0; vocab],
        }
    }

    /// Weights and embeddings from N(0, 0.02²), zero biases, unit norm gains.
    pub fn init<R: Rng>(dims: RecDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut model = RecModel::zeros(dims);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut fill = |m: &mut Matrix| m.as_mut_slice().iter_mut().for_each(|v| *v = normal.sample(rng));
        fill(&mut model.tok_emb);
        fill(&mut model.pos_emb);
        for b in &mut model.blocks {
            fill(&mut b.w_qkv);
            fill(&mut b.w_o);
            fill(&mut b.w_fc);
            fill(&mut b.w_proj);
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
        }
        fill(&mut model.w_out);
        model.lnf_g.fill(1.0);
        Ok(model)
    }

    /// Parameter blocks in a fixed order shared with [`RecModel::params_mut`].
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = vec![self.tok_emb.as_slice(), self.pos_emb.as_slice()];
        for b in &self.blocks {
            out.extend([
                &b.ln1_g[..],
                &b.ln1_b,
                b.w_qkv.as_slice(),
                &b.b_qkv,
                b.w_o.as_slice(),
                &b.b_o,
                &b.ln2_g,
                &b.ln2_b,
                b.w_fc.as_slice(),
                &b.b_fc,
                b.w_proj.as_slice(),
                &b.b_proj,
            ]);
        }
        out.extend([&self.lnf_g[..], &self.lnf_b, self.w_out.as_slice(), &self.b_out]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.tok_emb.as_mut_slice(), self.pos_emb.as_mut_slice()];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_g[..],
                &mut b.ln1_b,
                b.w_qkv.as_mut_slice(),
                &mut b.b_qkv,
                b.w_o.as_mut_slice(),
                &mut b.b_o,
                &mut b.ln2_g,
                &mut b.ln2_b,
                b.w_fc.as_mut_slice(),
                &mut b.b_fc,
                b.w_proj.as_mut_slice(),
                &mut b.b_proj,
            ]);
        }
        out.extend([&mut self.lnf_g[..], &mut self.lnf_b, self.w_out.as_mut_slice(), &mut self.b_out]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(FusidError::EmptyInput("empty token sequence".into()));
        }
        if tokens.len() > self.dims.max_len {
            return Err(FusidError::ContextTooLong { len: tokens.len(), max_len: self.dims.max_len });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(FusidError::InvalidConfig(format!(
                "token {bad} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    /// Next-token logits at every position of `tokens`.
    pub fn logits(&self, tokens: &[u32]) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        Ok(self.forward(tokens).logits)
    }

    /// Summed next-token cross-entropy of `tokens[1..]` given the prefixes, and
    /// its gradient scaled by `scale`, accumulated into `grads`.
    pub fn loss_and_grad(&self, tokens: &[u32], scale: f64, grads: &mut RecModel) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(FusidError::EmptyInput("need at least two tokens for a next-token loss".into()));
        }
        let inputs = &tokens[..tokens.len() - 1];
        self.check_tokens(inputs)?;
        self.check_tokens(&tokens[1..])?;
        let cache = self.forward(inputs);
        let mut dlogits = Matrix::zeros(inputs.len(), self.dims.vocab);
        let mut logp = vec![0.0; self.dims.vocab];
        let mut loss = 0.0;
        for (t, &target) in tokens[1..].iter().enumerate() {
            log_softmax(cache.logits.row(t), &mut logp);
            loss -= logp[target as usize];
            let row = dlogits.row_mut(t);
            for (g, lp) in row.iter_mut().zip(&logp) {
                *g = scale * lp.exp();
            }
            row[target as usize] -= scale;
        }
        self.backward(inputs, &cache, &dlogits, grads);
        Ok(loss)
    }

    /// Summed next-token cross-entropy without gradients.
    pub fn loss(&self, tokens: &[u32]) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(FusidError::EmptyInput("need at least two tokens for a next-token loss".into()));
        }
        let logits = self.logits(&tokens[..tokens.len() - 1])?;
        let mut logp = vec![0.0; self.dims.vocab];
        let mut loss = 0.0;
        for (t, &target) in tokens[1..].iter().enumerate() {
            log_softmax(logits.row(t), &mut logp);
            loss -= logp[target as usize];
        }
        Ok(loss)
    }

    fn forward(&self, tokens: &[u32]) -> ForwardCache {
        let RecDims { dim, heads, .. } = self.dims;
        let t_len = tokens.len();
        let mut x = Matrix::zeros(t_len, dim);
        for (t, &tok) in tokens.iter().enumerate() {
            embed_row(self, tok, t, x.row_mut(t));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (h1, ln1) = layer_norm(&x, &b.ln1_g, &b.ln1_b);
            let qkv = linear(&h1, &b.w_qkv, Some(&b.b_qkv));
            let mut attn = Matrix::zeros(t_len, dim);
            let mut probs = vec![0.0; heads * t_len * t_len];
            let mut scratch = vec![0.0; heads * t_len];
            for t in 0..t_len {
                attend_row(qkv.as_slice(), t, heads, dim, attn.row_mut(t), &mut scratch);
                for h in 0..heads {
                    let dst = (h * t_len + t) * t_len;
                    probs[dst..=dst + t].copy_from_slice(&scratch[h * (t + 1)..(h + 1) * (t + 1)]);
                }
            }
            let o = linear(&attn, &b.w_o, Some(&b.b_o));
            let x_mid = add(&x, &o);
            let (h2, ln2) = layer_norm(&x_mid, &b.ln2_g, &b.ln2_b);
            let u = linear(&h2, &b.w_fc, Some(&b.b_fc));
            let mut g = u.clone();
            g.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let f = linear(&g, &b.w_proj, Some(&b.b_proj));
            let x_out = add(&x_mid, &f);
            blocks.push(BlockCache { h1, ln1, qkv, probs, attn, h2, ln2, u, g });
            x = x_out;
        }
        let (hf, lnf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        let logits = linear(&hf, &self.w_out, Some(&self.b_out));
        ForwardCache { blocks, hf, lnf, logits }
    }

    fn backward(&self, tokens: &[u32], cache: &ForwardCache, dlogits: &Matrix, grads: &mut RecModel) {
        let RecDims { dim, heads, .. } = self.dims;
        let t_len = tokens.len();
        let dhf = linear_backward(&cache.hf, &self.w_out, dlogits, &mut grads.w_out, Some(&mut grads.b_out), true)
            .expect("dx requested");
        let mut dx = layer_norm_backward(&dhf, &cache.lnf, &self.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

        for (li, b) in self.blocks.iter().enumerate().rev() {
            let c = &cache.blocks[li];
            let gb = &mut grads.blocks[li];
            // x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
            let dg = linear_backward(&c.g, &b.w_proj, &dx, &mut gb.w_proj, Some(&mut gb.b_proj), true)
                .expect("dx requested");
            let mut du = dg;
            for (d, &u) in du.as_mut_slice().iter_mut().zip(c.u.as_slice()) {
                *d *= gelu_grad(u);
            }
            let dh2 = linear_backward(&c.h2, &b.w_fc, &du, &mut gb.w_fc, Some(&mut gb.b_fc), true)
                .expect("dx requested");
            let dln2 = layer_norm_backward(&dh2, &c.ln2, &b.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);
            let dx_mid = add(&dx, &dln2);
            // x_mid = x_in + o(attn(qkv(ln1(x_in))))
            let dattn = linear_backward(&c.attn, &b.w_o, &dx_mid, &mut gb.w_o, Some(&mut gb.b_o), true)
                .expect("dx requested");
            let dqkv = attention_backward(&c.qkv, &c.probs, &dattn, heads, dim, t_len);
            let dh1 = linear_backward(&c.h1, &b.w_qkv, &dqkv, &mut gb.w_qkv, Some(&mut gb.b_qkv), true)
                .expect("dx requested");
            let dln1 = layer_norm_backward(&dh1, &c.ln1, &b.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
            dx = add(&dx_mid, &dln1);
        }
        for (t, &tok) in tokens.iter().enumerate() {
            axpy(1.0, dx.row(t), grads.tok_emb.row_mut(tok as usize));
            axpy(1.0, dx.row(t), grads.pos_emb.row_mut(t));
        }
    }

    /// Appends `token` at the cache's next position and writes that
    /// position's next-token log-probabilities into `logp`.
    pub fn step(&self, cache: &mut KvCache, token: u32, logp: &mut [f64]) -> Result<()> {
        let RecDims { dim, heads, ff_dim, vocab, max_len, .. } = self.dims;
        let t = cache.len;
        if t >= max_len {
            return Err(FusidError::ContextTooLong { len: t + 1, max_len });
        }
        if token as usize >= vocab {
            return Err(FusidError::InvalidConfig(format!("token {token} outside vocabulary of {vocab}")));
        }
        let mut x = vec![0.0; dim];
        embed_row(self, token, t, &mut x);
        let mut h = vec![0.0; dim];
        let mut xhat = vec![0.0; dim];
        let mut attn = vec![0.0; dim];
        let mut o = vec![0.0; dim];
        let mut u = vec![0.0; ff_dim];
        let mut scratch = vec![0.0; heads * (t + 1)];
        for (b, rows) in self.blocks.iter().zip(&mut cache.qkv) {
            layer_norm_row(&x, &b.ln1_g, &b.ln1_b, &mut h, &mut xhat);
            let start = rows.len();
            rows.resize(start + 3 * dim, 0.0);
            linear_row(&h, &b.w_qkv, Some(&b.b_qkv), &mut rows[start..]);
            attend_row(rows, t, heads, dim, &mut attn, &mut scratch);
            linear_row(&attn, &b.w_o, Some(&b.b_o), &mut o);
            add_row(&mut x, &o);
            layer_norm_row(&x, &b.ln2_g, &b.ln2_b, &mut h, &mut xhat);
            linear_row(&h, &b.w_fc, Some(&b.b_fc), &mut u);
            u.iter_mut().for_each(|v| *v = gelu(*v));
            linear_row(&u, &b.w_proj, Some(&b.b_proj), &mut o);
            add_row(&mut x, &o);
        }
        cache.len += 1;
        layer_norm_row(&x, &self.lnf_g, &self.lnf_b, &mut h, &mut xhat);
        let mut logits = vec![0.0; vocab];
        linear_row(&h, &self.w_out, Some(&self.b_out), &mut logits);
        log_softmax(&logits, logp);
        Ok(())
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache { qkv: vec![Vec::new(); self.blocks.len()], len: 0, width: 3 * self.dims.dim }
    }
}

/// Per-layer query/key/value rows of the positions processed so far.
#[derive(Debug, Clone)]
pub struct KvCache {
    qkv: Vec<Vec<f64>>,
    len: usize,
    width: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forgets every position from `len` on.
    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            for rows in &mut self.qkv {
                rows.truncate(len * self.width);
            }
            self.len = len;
        }
    }
}

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

struct BlockCache {
    h1: Matrix,
    ln1: LnCache,
    qkv: Matrix,
    /// `heads × t × t` attention weights, lower triangle filled.
    probs: Vec<f64>,
    attn: Matrix,
    h2: Matrix,
    ln2: LnCache,
    u: Matrix,
    g: Matrix,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    hf: Matrix,
    lnf: LnCache,
    logits: Matrix,
}

fn embed_row(model: &RecModel, token: u32, pos: usize, out: &mut [f64]) {
    let (te, pe) = (model.tok_emb.row(token as usize), model.pos_emb.row(pos));
    for ((o, a), b) in out.iter_mut().zip(te).zip(pe) {
        *o = a + b;
    }
}

fn add_row(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    add_row(out.as_mut_slice(), b.as_slice());
    out
}

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// Normalizes one row; returns `1/sqrt(var + eps)`.
fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * g[i] + b[i];
    }
    rstd
}

fn layer_norm(x: &Matrix, g: &[f64], b: &[f64]) -> (Matrix, LnCache) {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut xhat = Matrix::zeros(x.rows(), x.cols());
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let mut row_hat = vec![0.0; x.cols()];
        rstd.push(layer_norm_row(x.row(r), g, b, out.row_mut(r), &mut row_hat));
        xhat.row_mut(r).copy_from_slice(&row_hat);
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &Matrix, cache: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Matrix {
    let cols = dy.cols();
    let mut dx = Matrix::zeros(dy.rows(), cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..dy.rows() {
        let (dyr, xh) = (dy.row(r), cache.xhat.row(r));
        for i in 0..cols {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
        let mean_dx = dot(&dxhat, xh) / cols as f64;
        let rstd = cache.rstd[r];
        for (i, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = rstd * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

/// Causal attention output of position `t`, reading query/key/value rows of
/// width `3·dim` from `qkv`. `probs` receives the weights, head-major, and
/// needs room for `heads·(t+1)` values.
fn attend_row(qkv: &[f64], t: usize, heads: usize, dim: usize, out: &mut [f64], probs: &mut [f64]) {
    let width = 3 * dim;
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q_row = &qkv[t * width..t * width + dim];
    out.fill(0.0);
    for h in 0..heads {
        let q = &q_row[h * hd..(h + 1) * hd];
        let p = &mut probs[h * (t + 1)..(h + 1) * (t + 1)];
        let mut max = f64::NEG_INFINITY;
        for (j, pj) in p.iter_mut().enumerate() {
            let k = &qkv[j * width + dim + h * hd..j * width + dim + (h + 1) * hd];
            *pj = dot(q, k) * scale;
            max = max.max(*pj);
        }
        let mut sum = 0.0;
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        let o = &mut out[h * hd..(h + 1) * hd];
        for (j, pj) in p.iter_mut().enumerate() {
            *pj /= sum;
            let v = &qkv[j * width + 2 * dim + h * hd..j * width + 2 * dim + (h + 1) * hd];
            axpy(*pj, v, o);
        }
    }
}

fn attention_backward(qkv: &Matrix, probs: &[f64], dattn: &Matrix, heads: usize, dim: usize, t_len: usize) -> Matrix {
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dqkv = Matrix::zeros(t_len, 3 * dim);
    let mut dp = vec![0.0; t_len];
    for h in 0..heads {
        let (qo, ko, vo) = (h * hd, dim + h * hd, 2 * dim + h * hd);
        for t in 0..t_len {
            let p = &probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + t + 1];
            let dout = &dattn.row(t)[qo..qo + hd];
            let mut weighted = 0.0;
            for j in 0..=t {
                dp[j] = dot(dout, &qkv.row(j)[vo..vo + hd]);
                weighted += p[j] * dp[j];
                axpy(p[j], dout, &mut dqkv.row_mut(j)[vo..vo + hd]);
            }
            let q = qkv.row(t)[qo..qo + hd].to_vec();
            for j in 0..=t {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let k = &qkv.row(j)[ko..ko + hd];
                axpy(ds, k, &mut dqkv.row_mut(t)[qo..qo + hd]);
                axpy(ds, &q, &mut dqkv.row_mut(j)[ko..ko + hd]);
            }
        }
    }
    dqkv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny() -> RecModel {
        let dims = RecDims { vocab: 11, max_len: 8, layers: 2, heads: 2, dim: 4, ff_dim: 8 };
        RecModel::init(dims, &mut rng::seeded(3)).unwrap()
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for u in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let model = tiny();
        let tokens = [1u32, 4, 7, 2, 9, 3];
        let per_token = model.loss(&tokens).unwrap() / 5.0;
        assert!((per_token - (11f64).ln()).abs() < 0.05, "{per_token}");
    }

    #[test]
    fn cached_steps_match_full_forward_bitwise() {
        let model = tiny();
        let tokens = [1u32, 5, 6, 10, 3, 4];
        let logits = model.logits(&tokens).unwrap();
        let mut cache = model.new_cache();
        let mut logp = vec![0.0; 11];
        let mut full = vec![0.0; 11];
        for (t, &tok) in tokens.iter().enumerate() {
            model.step(&mut cache, tok, &mut logp).unwrap();
            log_softmax(logits.row(t), &mut full);
            assert_eq!(logp, full, "position {t}");
        }
        cache.truncate(2);
        model.step(&mut cache, tokens[2], &mut logp).unwrap();
        log_softmax(logits.row(2), &mut full);
        assert_eq!(logp, full);
    }

    #[test]
    fn too_long_input_is_rejected() {
        let model = tiny();
        assert!(matches!(model.logits(&[1; 9]), Err(FusidError::ContextTooLong { len: 9, max_len: 8 })));
    }

    #[test]
    fn dim_must_divide_heads() {
        let dims = RecDims { vocab: 5, max_len: 4, layers: 1, heads: 3, dim: 4, ff_dim: 4 };
        assert!(RecModel::init(dims, &mut rng::seeded(0)).is_err());
    }
}
