//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "FSTSCKPT"
//! version      u32 LE    currently 1
//! header_len   u64 LE
//! header       JSON      { arch, layout, bn: [{channels, initialized}] }
//! params       f64 LE    layout.len() values
//! bn buffers   f64 LE    per batch-norm layer: mean[channels], var[channels]
//! ```
//!
//! Decoding validates every length against the architecture before allocating
//! and rejects trailing bytes, so a round trip is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, ResNetModel};
use crate::error::{Error, Result};
use crate::numeric::{ParamLayout, ParamRecord, ParamSet, RunningStats};

pub const MAGIC: &[u8; 8] = b"FSTSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchSpec,
    layout: Vec<ParamRecord>,
    bn: Vec<BnHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BnHeader {
    channels: usize,
    initialized: bool,
}

pub fn encode(model: &ResNetModel) -> Vec<u8> {
    let header = Header {
        arch: model.spec().clone(),
        layout: model.params().layout().records().to_vec(),
        bn: model
            .bn_stats()
            .iter()
            .map(|s| BnHeader {
                channels: s.channels(),
                initialized: s.initialized,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let n_bn: usize = model.bn_stats().iter().map(|s| 2 * s.channels()).sum();
    let mut out = Vec::with_capacity(20 + header.len() + 8 * (model.params().len() + n_bn));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in model.params().values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in model.bn_stats() {
        for v in s.mean.iter().chain(&s.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.bytes.len()
            )));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint(format!("{what} is too large")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ResNetModel> {
    let mut r = Reader { bytes };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len)
        .map_err(|_| Error::Checkpoint("header length does not fit in memory".into()))?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    header
        .arch
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_params = header
        .arch
        .param_count()
        .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?;
    let layout = ParamLayout::from_records(header.layout).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if layout.len() != n_params {
        return Err(Error::Checkpoint(format!(
            "layout holds {} values but the architecture needs {n_params}",
            layout.len()
        )));
    }
    let bn_total = header
        .bn
        .iter()
        .try_fold(0usize, |acc, b| acc.checked_add(b.channels.checked_mul(2)?))
        .ok_or_else(|| Error::Checkpoint("batch-norm sizes overflow".into()))?;
    let expected = n_params
        .checked_add(bn_total)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Checkpoint("payload size overflows".into()))?;
    if r.bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header implies {expected}",
            r.bytes.len()
        )));
    }

    let values = r.floats(n_params, "parameters")?;
    let params = ParamSet::from_values(layout, values)?;
    let mut bn = Vec::with_capacity(header.bn.len());
    for (i, b) in header.bn.iter().enumerate() {
        let mean = r.floats(b.channels, "running mean")?;
        let var = r.floats(b.channels, "running variance")?;
        if b.initialized && var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Checkpoint(format!("batch-norm layer {i} has a negative variance")));
        }
        bn.push(RunningStats {
            mean,
            var,
            initialized: b.initialized,
        });
    }
    ResNetModel::from_parts(header.arch, params, Some(bn)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(model: &ResNetModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ResNetModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained_model() -> ResNetModel {
        let mut m = ResNetModel::build(ArchSpec::tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        m.embed_batch(&[vec![0.1, 0.5, -0.2, 0.9], vec![1.0, -1.0, 0.3, 0.0]], Mode::Train)
            .unwrap();
        m
    }

    #[test]
    fn round_trip_bitwise() {
        let m = trained_model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.spec(), m.spec());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.params().values()), bits(m.params().values()));
        assert_eq!(back.bn_stats(), m.bn_stats());
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = encode(&trained_model());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
        assert!(decode(b"FSTSCKPX").is_err());
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn rejects_wrong_version() {
        let mut bytes = encode(&trained_model());
        bytes[8] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
    }
}
