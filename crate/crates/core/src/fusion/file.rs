//! `FMOD` model files.
//!
//! Little-endian: `"FMOD"`, version, input_dim, hidden, n, d (all `u32`), then
//! `f64` blocks in field order: W1 (hidden × input, row-major), b1, BN scale,
//! BN shift, running mean, running var, momentum, eps_bn, W2 (n·d × hidden),
//! b2, LN scale, LN shift, eps_ln, LN axis (0 = full, 1 = per sub-embedding).

use std::path::Path;

use super::network::FusionModel;
use super::LayerNormMode;
use crate::error::Result;
use crate::io::{read_bytes, write_bytes, LeReader};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"FMOD";
const VERSION: u32 = 1;

impl FusionModel {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.input_dim() as u32,
            self.hidden_dim() as u32,
            self.n as u32,
            self.d as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut put = |vals: &[f64]| {
            for v in vals {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(self.w1.as_slice());
        put(&self.b1);
        put(&self.bn_scale);
        put(&self.bn_shift);
        put(&self.running_mean);
        put(&self.running_var);
        put(&[self.bn_momentum, self.bn_eps]);
        put(self.w2.as_slice());
        put(&self.b2);
        put(&self.ln_scale);
        put(&self.ln_shift);
        let axis = match self.ln_mode {
            LayerNormMode::Full => 0.0,
            LayerNormMode::PerSubEmbedding => 1.0,
        };
        put(&[self.ln_eps, axis]);
        write_bytes(path, &buf)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut r = LeReader::new(path, &bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.format_error(format!("unsupported version {version}")));
        }
        let input = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let out = n * d;
        let mut take = |len: usize| -> Result<Vec<f64>> { (0..len).map(|_| r.f64()).collect() };
        let w1 = Matrix::from_vec(hidden, input, take(hidden * input)?);
        let b1 = take(hidden)?;
        let bn_scale = take(hidden)?;
        let bn_shift = take(hidden)?;
        let running_mean = take(hidden)?;
        let running_var = take(hidden)?;
        let bn = take(2)?;
        let w2 = Matrix::from_vec(out, hidden, take(out * hidden)?);
        let b2 = take(out)?;
        let ln_scale = take(out)?;
        let ln_shift = take(out)?;
        let ln = take(2)?;
        let ln_mode = match ln[1] {
            0.0 => LayerNormMode::Full,
            1.0 => LayerNormMode::PerSubEmbedding,
            other => return Err(r.format_error(format!("unknown layer-norm axis {other}"))),
        };
        r.finish()?;
        Ok(FusionModel {
            w1,
            b1,
            bn_scale,
            bn_shift,
            running_mean,
            running_var,
            bn_momentum: bn[0],
            bn_eps: bn[1],
            w2,
            b2,
            ln_scale,
            ln_shift,
            ln_eps: ln[0],
            ln_mode,
            n,
            d,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::FusionConfig;
    use super::*;
    use crate::rng;

    #[test]
    fn model_file_round_trips() {
        let cfg = FusionConfig {
            hidden_dim: 6,
            n: 2,
            d: 3,
            layer_norm: LayerNormMode::PerSubEmbedding,
            ..FusionConfig::default()
        };
        let model = FusionModel::init(5, &cfg, &mut rng::seeded(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmod");
        model.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FMOD");
        assert_eq!(&bytes[8..12], &5u32.to_le_bytes());
        assert_eq!(FusionModel::read(&path).unwrap(), model);
    }
}
