//! `JCVM` checkpoint: configuration, normalizer, provenance, then parameter tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Mlp, ModelConfig, ModelKind, TrainingMeta, VaeModel, VaeParams};
use crate::error::{Error, Result};
use crate::format::{ByteReader, ByteWriter};
use crate::windows::Normalizer;

const MAGIC: &[u8; 4] = b"JCVM";

impl VaeModel {
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let c = &self.config;
        let mut w = ByteWriter::new(out);
        w.header(MAGIC)?;
        w.u8(c.kind.code())?;
        w.u32(c.n as u32)?;
        w.u32(c.d as u32)?;
        w.u32(c.latent_dim as u32)?;
        w.u32(c.hidden_dims.len() as u32)?;
        for &h in &c.hidden_dims {
            w.u32(h as u32)?;
        }
        w.f64(c.kl_weight)?;
        w.f64s(&self.normalizer.mean)?;
        w.f64s(&self.normalizer.std)?;
        w.u64(self.rng_seed)?;
        w.u64(self.meta.seed)?;
        w.u64(self.meta.epochs)?;
        w.f64(self.meta.final_loss)?;
        let tensors = self.params.tensors();
        w.u32(tensors.len() as u32)?;
        for t in tensors {
            w.tensor(t)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = ByteReader::new(input);
        r.header(MAGIC)?;
        let kind = ModelKind::from_code(r.u8()?)?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let latent_dim = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let hidden_dims = (0..depth).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
        let kl_weight = r.f64()?;
        let config = ModelConfig { kind, n, d, latent_dim, hidden_dims, kl_weight };
        config.validate().map_err(|e| Error::Format(format!("checkpoint configuration: {e}")))?;
        let normalizer = Normalizer { mean: r.f64s(d)?, std: r.f64s(d)? };
        let rng_seed = r.u64()?;
        let meta = TrainingMeta { seed: r.u64()?, epochs: r.u64()?, final_loss: r.f64()? };

        let mut encoder = Mlp::zeros(&config.encoder_dims());
        let mut decoder = Mlp::zeros(&config.decoder_dims());
        let count = r.u32()? as usize;
        let expected = 2 * (encoder.layers.len() + decoder.layers.len());
        if count != expected {
            return Err(Error::Format(format!("checkpoint holds {count} tensors, configuration needs {expected}")));
        }
        for slot in encoder.tensors_mut().into_iter().chain(decoder.tensors_mut()) {
            let t = r.tensor()?;
            if t.len() != slot.len() {
                return Err(Error::Format(format!("tensor of length {} where {} was expected", t.len(), slot.len())));
            }
            slot.copy_from_slice(&t);
        }
        r.expect_eof()?;
        let params = VaeParams { encoder, decoder };
        if !params.all_finite() || !normalizer.std.iter().chain(&normalizer.mean).all(|v| v.is_finite()) {
            return Err(Error::Format("checkpoint contains non-finite values".into()));
        }
        Ok(Self { config, params, normalizer, rng_seed, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig { kind: ModelKind::BaselineCond, n: 2, d: 3, latent_dim: 4, hidden_dims: vec![7, 5], kl_weight: 0.5 };
        let norm = Normalizer { mean: vec![1.0, -2.0, 0.5], std: vec![0.3, 2.0, 1.5] };
        let mut model = VaeModel::new(cfg, norm, 99).unwrap();
        model.meta = TrainingMeta { seed: 99, epochs: 12, final_loss: 0.125 };
        let mut buf = Vec::new();
        model.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"JCVM");
        let back = VaeModel::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let cfg = ModelConfig { kind: ModelKind::UncondJoint, n: 2, d: 2, latent_dim: 1, hidden_dims: vec![3], kl_weight: 1.0 };
        let model = VaeModel::new(cfg, Normalizer::identity(2), 1).unwrap();
        let mut buf = Vec::new();
        model.write_binary(&mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(VaeModel::read_binary(buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(VaeModel::read_binary(buf.as_slice()).is_err());
    }
}
