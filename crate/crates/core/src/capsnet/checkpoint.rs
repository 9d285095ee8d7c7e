//! Binary checkpoints: an 8-byte magic, a `u32` format version, the
//! architecture block, then every parameter tensor in [`PARAM_NAMES`] order
//! as `u32` rank, `u64` dims and `f64` values. All integers and reals are
//! little-endian.
//!
//! [`PARAM_NAMES`]: super::PARAM_NAMES

use std::path::Path;

use super::config::CapsNetConfig;
use super::model::CapsNetModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CAPSADCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_fields(c: &CapsNetConfig) -> ([usize; 15], [f64; 4]) {
    (
        [
            c.input_channels,
            c.input_height,
            c.input_width,
            c.conv1_channels,
            c.conv1_kernel,
            c.conv1_stride,
            c.primary_caps,
            c.primary_dim,
            c.primary_kernel,
            c.primary_stride,
            c.num_classes,
            c.digit_dim,
            c.routing_iterations,
            c.decoder_hidden[0],
            c.decoder_hidden[1],
        ],
        [c.m_plus, c.m_minus, c.lambda_down, c.recon_loss_weight],
    )
}

pub fn encode_checkpoint(model: &CapsNetModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.num_parameters() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let (ints, reals) = config_fields(model.config());
    ints.iter()
        .for_each(|&v| out.extend_from_slice(&(v as u64).to_le_bytes()));
    reals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
        p.shape()
            .iter()
            .for_each(|&d| out.extend_from_slice(&(d as u64).to_le_bytes()));
        p.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CapsNetModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let mut ints = [0usize; 15];
    for v in &mut ints {
        *v = r.u64()?;
    }
    let mut reals = [0.0; 4];
    for v in &mut reals {
        *v = r.f64()?;
    }
    let config = CapsNetConfig {
        input_channels: ints[0],
        input_height: ints[1],
        input_width: ints[2],
        conv1_channels: ints[3],
        conv1_kernel: ints[4],
        conv1_stride: ints[5],
        primary_caps: ints[6],
        primary_dim: ints[7],
        primary_kernel: ints[8],
        primary_stride: ints[9],
        num_classes: ints[10],
        digit_dim: ints[11],
        routing_iterations: ints[12],
        decoder_hidden: [ints[13], ints[14]],
        m_plus: reals[0],
        m_minus: reals[1],
        lambda_down: reals[2],
        recon_loss_weight: reals[3],
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;
    let count = r.u32()? as usize;
    let expected = CapsNetModel::param_shapes(&config)?;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, expected {}",
            expected.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for shape in &expected {
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Checkpoint(format!(
                "stored tensor {dims:?} does not match {shape:?}"
            )));
        }
        let data = (0..dims.iter().product::<usize>())
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        params.push(Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    CapsNetModel::from_params(config, params)
}

pub fn save_checkpoint(model: &CapsNetModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CapsNetModel> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and checks that it was written for `config`.
pub fn load_checkpoint_for(path: &Path, config: &CapsNetConfig) -> Result<CapsNetModel> {
    let model = load_checkpoint(path)?;
    if model.config() != config {
        return Err(Error::Checkpoint(format!(
            "{} holds a model for {:?}, expected {config:?}",
            path.display(),
            model.config()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = CapsNetModel::new(CapsNetConfig::tiny(3), 8).unwrap();
        let bytes = encode_checkpoint(&model);
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_other_versions_configs_and_damage() {
        let model = CapsNetModel::new(CapsNetConfig::tiny(2), 1).unwrap();
        let bytes = encode_checkpoint(&model);
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode_checkpoint(&v2), Err(Error::Checkpoint(m)) if m.contains("version 2")));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut junk = bytes.clone();
        junk.push(0);
        assert!(decode_checkpoint(&junk).is_err());
        assert!(decode_checkpoint(b"NOTACKPT\x01\0\0\0").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint_for(&path, &CapsNetConfig::tiny(2)).unwrap(), model);
        assert!(matches!(
            load_checkpoint_for(&path, &CapsNetConfig::tiny(3)),
            Err(Error::Checkpoint(_))
        ));
    }
}
