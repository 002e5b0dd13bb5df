//! `TDN1` checkpoints.
//!
//! Layout, all little-endian: magic `TDN1`, `u32` version, the config block
//! (eleven `u32` layer sizes, `f64` dropout rate, `f64` L2 weight, `u64`
//! seed), a `u32` tensor count, then each tensor as a `u32` length followed
//! by that many `f32` values. Tensors are the parameters in declaration
//! order followed by BN1 mean, BN1 variance, BN2 mean, BN2 variance.

use std::path::Path;

use super::*;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TDN1";
const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &TdnnModel<f32>) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let sizes = [
        c.input_frames,
        c.input_width,
        c.conv1.filters,
        c.conv1.kernel,
        c.conv1.dilation,
        c.conv2.filters,
        c.conv2.kernel,
        c.conv2.dilation,
        c.pool_size,
        c.fc1_units,
        c.fc2_units,
    ];
    for s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout_rate.to_le_bytes());
    out.extend_from_slice(&c.l2_lambda.to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    let tensors: Vec<&Vec<f32>> = model
        .params
        .iter()
        .chain(model.bn.iter().flat_map(|s| [&s.mean, &s.var]))
        .collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.origin.to_path_buf(),
            message: message.into(),
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<TdnnModel<f32>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        origin,
    };
    if &r.take::<4>()? != CHECKPOINT_MAGIC {
        return Err(r.err("not a TDN1 checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let mut s = [0usize; 11];
    for v in s.iter_mut() {
        *v = r.u32()? as usize;
    }
    let dropout_rate = f64::from_le_bytes(r.take()?);
    let l2_lambda = f64::from_le_bytes(r.take()?);
    let seed = u64::from_le_bytes(r.take()?);
    let config = TdnnConfig {
        input_frames: s[0],
        input_width: s[1],
        conv1: ConvSpec {
            filters: s[2],
            kernel: s[3],
            dilation: s[4],
        },
        conv2: ConvSpec {
            filters: s[5],
            kernel: s[6],
            dilation: s[7],
        },
        pool_size: s[8],
        fc1_units: s[9],
        fc2_units: s[10],
        dropout_rate,
        l2_lambda,
    };
    config.validate().map_err(|e| r.err(e.to_string()))?;
    let mut expected: Vec<usize> = config.param_shapes().iter().map(|s| s.1).collect();
    expected.extend([
        config.conv1.filters,
        config.conv1.filters,
        config.conv2.filters,
        config.conv2.filters,
    ]);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(r.err(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, &want) in expected.iter().enumerate() {
        let len = r.u32()? as usize;
        if len != want {
            return Err(r.err(format!(
                "tensor {i} has {len} values, config implies {want}"
            )));
        }
        let mut t = Vec::with_capacity(len);
        for _ in 0..len {
            t.push(f32::from_le_bytes(r.take()?));
        }
        tensors.push(t);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let bn2_var = tensors.pop().unwrap();
    let bn2_mean = tensors.pop().unwrap();
    let bn1_var = tensors.pop().unwrap();
    let bn1_mean = tensors.pop().unwrap();
    Ok(TdnnModel {
        config,
        seed,
        params: tensors,
        bn: [
            BnStats {
                mean: bn1_mean,
                var: bn1_var,
            },
            BnStats {
                mean: bn2_mean,
                var: bn2_var,
            },
        ],
    })
}

pub fn save_checkpoint(model: &TdnnModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TdnnModel<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TdnnModel<f32> {
        let cfg = TdnnConfig {
            input_frames: 20,
            input_width: 7,
            dropout_rate: 0.25,
            l2_lambda: 3e-4,
            ..TdnnConfig::default()
        };
        let mut m = TdnnModel::init(&cfg, 42).unwrap();
        m.bn[1].mean[3] = -0.125;
        m.params[OUT_B][0] = f32::MIN_POSITIVE;
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"TDN1");
        let back = decode_checkpoint(&bytes, Path::new("m.tdn")).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tdn");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_checkpoint(&model());
        let p = Path::new("m.tdn");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic, p).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(
            decode_checkpoint(&version, p),
            Err(Error::Checkpoint { .. })
        ));
        assert!(load_checkpoint("/nonexistent/m.tdn").is_err());
    }
}
