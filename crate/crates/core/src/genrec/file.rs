//! `FREC` recommender files.
//!
//! Little-endian: `"FREC"`, version, SID length n, codebook size K, vocab,
//! max_len, layers, heads, dim, ff_dim (all `u32`), then every parameter block
//! as `f64` in [`RecModel::params`] order.

use std::path::Path;

use super::model::{RecDims, RecModel};
use super::TokenVocab;
use crate::error::{FusidError, Result};
use crate::io::{read_bytes, write_bytes, LeReader};

const MAGIC: &[u8; 4] = b"FREC";
const VERSION: u32 = 1;

pub fn write_rec_model(path: &Path, model: &RecModel, vocab: &TokenVocab) -> Result<()> {
    if vocab.size() != model.dims.vocab {
        return Err(FusidError::DimensionMismatch {
            what: "model vocabulary".into(),
            expected: vocab.size(),
            actual: model.dims.vocab,
        });
    }
    let d = model.dims;
    let mut buf = Vec::with_capacity(44 + 8 * model.n_params());
    buf.extend_from_slice(MAGIC);
    for v in [VERSION as usize, vocab.n, vocab.k, d.vocab, d.max_len, d.layers, d.heads, d.dim, d.ff_dim] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in model.params() {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path, &buf)
}

pub fn read_rec_model(path: &Path) -> Result<(RecModel, TokenVocab)> {
    let bytes = read_bytes(path)?;
    let mut r = LeReader::new(path, &bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.format_error(format!("unsupported version {version}")));
    }
    let mut next = || r.u32().map(|v| v as usize);
    let (n, k) = (next()?, next()?);
    let dims = RecDims {
        vocab: next()?,
        max_len: next()?,
        layers: next()?,
        heads: next()?,
        dim: next()?,
        ff_dim: next()?,
    };
    let vocab = TokenVocab::new(n, k).map_err(|e| r.format_error(e.to_string()))?;
    dims.validate().map_err(|e| r.format_error(e.to_string()))?;
    if vocab.size() != dims.vocab {
        return Err(r.format_error(format!("vocab {} does not match n={n}, K={k}", dims.vocab)));
    }
    let mut model = RecModel::zeros(dims);
    for block in model.params_mut() {
        for v in block.iter_mut() {
            *v = r.f64()?;
        }
    }
    r.finish()?;
    Ok((model, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn rec_model_round_trips() {
        let vocab = TokenVocab::new(2, 3).unwrap();
        let dims = RecDims { vocab: vocab.size(), max_len: 6, layers: 1, heads: 2, dim: 4, ff_dim: 8 };
        let model = RecModel::init(dims, &mut rng::seeded(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frec");
        write_rec_model(&path, &model, &vocab).unwrap();
        let (back, v) = read_rec_model(&path).unwrap();
        assert_eq!((back, v), (model, vocab));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_rec_model(&path).is_err());
    }
}
