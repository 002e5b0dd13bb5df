//! Shifted delta cepstra and the FTR1 feature file format.
//!
//! For frame `t` and block `i = 0..K`, the delta block is
//! `C(t + i*p + d) - C(t + i*p - d)` with frame indices clamped into
//! `[0, T-1]`, so every configuration keeps the source frame count. Output
//! rows are the static cepstrum followed by the `K` blocks in order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CepstralMatrix, FeatureKind};
use crate::matrix::Matrix;
use crate::perceptual::N_CEPS;

/// N-d-p-K shifted delta cepstra parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdcConfig {
    pub n_static: usize,
    pub delay: usize,
    pub shift: usize,
    pub blocks: usize,
}

impl Default for SdcConfig {
    fn default() -> Self {
        Self::new(1, 3, 7)
    }
}

impl SdcConfig {
    pub const fn new(delay: usize, shift: usize, blocks: usize) -> Self {
        Self {
            n_static: N_CEPS,
            delay,
            shift,
            blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_static != N_CEPS {
            return Err(Error::Config(format!(
                "N is fixed at {N_CEPS}, got {}",
                self.n_static
            )));
        }
        if self.delay == 0 || self.shift == 0 || self.blocks == 0 {
            return Err(Error::Config(format!("d, p and K must be >= 1 in {self}")));
        }
        Ok(())
    }

    /// Static plus delta columns: `N * (K + 1)`.
    pub fn width(&self) -> usize {
        self.n_static * (self.blocks + 1)
    }
}

impl fmt::Display for SdcConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}-{}",
            self.n_static, self.delay, self.shift, self.blocks
        )
    }
}

impl FromStr for SdcConfig {
    type Err = Error;

    /// Parses hyphenated `N-d-p-K` notation, e.g. `13-2-3-6`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('-')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("malformed N-d-p-K string '{s}'")))?;
        let [n_static, delay, shift, blocks] = parts[..] else {
            return Err(Error::Config(format!(
                "N-d-p-K needs four fields, got '{s}'"
            )));
        };
        let cfg = Self {
            n_static,
            delay,
            shift,
            blocks,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Classifier-ready matrix: frames x `N * (K + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix<f32>,
    pub config: SdcConfig,
    pub kind: FeatureKind,
}

/// Stack static cepstra with their shifted delta blocks.
pub fn sdc_features(cepstra: &CepstralMatrix, cfg: &SdcConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let c = &cepstra.values;
    if c.cols() != cfg.n_static {
        return Err(Error::Shape(format!(
            "cepstra have {} coefficients, SDC expects {}",
            c.cols(),
            cfg.n_static
        )));
    }
    if c.rows() == 0 {
        return Err(Error::Shape("SDC needs at least one frame".into()));
    }
    let last = (c.rows() - 1) as isize;
    let at = |t: isize| c.row(t.clamp(0, last) as usize);
    let (d, p) = (cfg.delay as isize, cfg.shift as isize);
    let mut out = Matrix::zeros(c.rows(), cfg.width());
    for t in 0..c.rows() {
        let row = out.row_mut(t);
        row[..cfg.n_static].copy_from_slice(c.row(t));
        for i in 0..cfg.blocks {
            let centre = t as isize + i as isize * p;
            let (ahead, behind) = (at(centre + d), at(centre - d));
            let block = &mut row[(i + 1) * cfg.n_static..(i + 2) * cfg.n_static];
            for ((o, a), b) in block.iter_mut().zip(ahead).zip(behind) {
                *o = a - b;
            }
        }
    }
    Ok(FeatureMatrix {
        values: out,
        config: *cfg,
        kind: cepstra.kind,
    })
}

pub const FTR_MAGIC: &[u8; 4] = b"FTR1";

/// Serialize a matrix as FTR1: magic, `rows` and `cols` as `u32` LE, then
/// row-major `f32` LE values.
pub fn encode_ftr(values: &Matrix<f32>) -> Result<Vec<u8>> {
    let rows = u32::try_from(values.rows())
        .map_err(|_| Error::Shape("row count does not fit in 32 bits".into()))?;
    let cols = u32::try_from(values.cols())
        .map_err(|_| Error::Shape("column count does not fit in 32 bits".into()))?;
    let mut out = Vec::with_capacity(12 + 4 * values.as_slice().len());
    out.extend_from_slice(FTR_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in values.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parse FTR1 bytes; `origin` is only used in error messages.
pub fn decode_ftr(bytes: &[u8], origin: &Path) -> Result<Matrix<f32>> {
    let bad = |message: String| Error::FeatureFormat {
        path: origin.to_path_buf(),
        message,
    };
    if bytes.len() < 12 {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != FTR_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| bad(format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn write_ftr(values: &Matrix<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ftr(values)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ftr(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ftr(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cepstra(rows: Vec<Vec<f32>>) -> CepstralMatrix {
        let cols = rows.first().map_or(13, Vec::len);
        CepstralMatrix {
            values: Matrix::from_rows(cols, rows),
            frame_hop_s: 0.01,
            kind: FeatureKind::PeZtwcc,
        }
    }

    fn random_cepstra(rng: &mut ChaCha8Rng, frames: usize) -> CepstralMatrix {
        cepstra(
            (0..frames)
                .map(|_| (0..13).map(|_| rng.gen_range(-20.0f32..20.0)).collect())
                .collect(),
        )
    }

    #[test]
    fn widths() {
        assert_eq!(SdcConfig::new(1, 3, 7).width(), 104);
        assert_eq!(SdcConfig::new(2, 3, 5).width(), 78);
        assert_eq!(SdcConfig::new(2, 3, 6).width(), 91);
        assert_eq!(SdcConfig::default().to_string(), "13-1-3-7");
    }

    #[test]
    fn parse_notation() {
        assert_eq!(
            "13-2-3-6".parse::<SdcConfig>().unwrap(),
            SdcConfig::new(2, 3, 6)
        );
        for bad in [
            "13-2-3",
            "13-x-3-6",
            "12-2-3-6",
            "13-0-3-6",
            "",
            "13-2-3-6-1",
        ] {
            assert!(bad.parse::<SdcConfig>().is_err(), "{bad}");
        }
    }

    #[test]
    fn constant_frames_give_zero_deltas() {
        let row: Vec<f32> = (0..13).map(|i| i as f32 * 0.5 - 2.0).collect();
        let f = sdc_features(&cepstra(vec![row.clone(); 40]), &SdcConfig::default()).unwrap();
        for r in f.values.iter_rows() {
            assert_eq!(&r[..13], row.as_slice());
            assert!(r[13..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_blocks() {
        // one-dimensional ramp, padded to 13 columns with zeros
        let rows: Vec<Vec<f32>> = (0..20)
            .map(|t| {
                let mut r = vec![0.0; 13];
                r[0] = t as f32;
                r
            })
            .collect();
        let cfg = SdcConfig::new(1, 1, 2);
        let f = sdc_features(&cepstra(rows), &cfg).unwrap();
        for t in 1..18 {
            let r = f.values.row(t);
            assert_eq!((r[13], r[26]), (2.0, 2.0));
        }
        // clamped at the start: C(1) - C(0)
        assert_eq!(f.values.row(0)[13], 1.0);
    }

    #[test]
    fn single_frame_and_shape_errors() {
        let f = sdc_features(&cepstra(vec![vec![1.0; 13]]), &SdcConfig::default()).unwrap();
        assert_eq!((f.values.rows(), f.values.cols()), (1, 104));
        assert!(sdc_features(&cepstra(vec![vec![1.0; 12]]), &SdcConfig::default()).is_err());
    }

    #[test]
    fn ftr_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Matrix::from_vec(
            300,
            104,
            (0..300 * 104)
                .map(|_| rng.gen::<f32>() * 100.0 - 50.0)
                .collect(),
        );
        let path = dir.path().join("m.ftr");
        write_ftr(&m, &path).unwrap();
        let back = read_ftr(&path).unwrap();
        assert_eq!(
            back.as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!((back.rows(), back.cols()), (300, 104));

        let empty = Matrix::<f32>::zeros(0, 104);
        write_ftr(&empty, &path).unwrap();
        let back = read_ftr(&path).unwrap();
        assert_eq!((back.rows(), back.cols()), (0, 104));

        let mut bytes = encode_ftr(&m).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_ftr(&bytes, &path),
            Err(Error::FeatureFormat { .. })
        ));
        let bytes = encode_ftr(&m).unwrap();
        assert!(decode_ftr(&bytes[..bytes.len() - 3], &path).is_err());
        assert!(decode_ftr(&bytes[..7], &path).is_err());
        let mut huge = bytes[..12].to_vec();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_ftr(&huge, &path).is_err());
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = Matrix::from_vec(1, 2, vec![1.0f32, -2.0]);
        let bytes = encode_ftr(&m).unwrap();
        assert_eq!(
            bytes,
            [
                b'F', b'T', b'R', b'1', 1, 0, 0, 0, 2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00,
                0x00, 0xc0
            ]
        );
    }

    proptest! {
        #[test]
        fn deltas_ignore_constant_offsets(
            seed in 0u64..1000,
            offset in proptest::collection::vec(-5.0f32..5.0, 13),
            d in 1usize..4, k in 1usize..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = random_cepstra(&mut rng, 30);
            let shifted = cepstra(
                base.values.iter_rows()
                    .map(|r| r.iter().zip(&offset).map(|(a, b)| a + b).collect())
                    .collect(),
            );
            let cfg = SdcConfig::new(d, 3, k);
            let a = sdc_features(&base, &cfg).unwrap();
            let b = sdc_features(&shifted, &cfg).unwrap();
            for (ra, rb) in a.values.iter_rows().zip(b.values.iter_rows()) {
                for (x, y) in ra[13..].iter().zip(&rb[13..]) {
                    // offsets cancel up to f32 rounding of the shifted inputs
                    prop_assert!((x - y).abs() < 1e-4);
                }
            }
        }
    }
}
