//! Feature kinds and the shared cepstral matrix type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::baseline::{mfcc, plpcc, FrameConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perceptual::{pe_ztwcc, ztwcc, PerceptualConfig};
use crate::ztw::ZtwConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "PE_ZTWCC")]
    PeZtwcc,
    #[serde(rename = "ZTWCC")]
    Ztwcc,
    #[serde(rename = "MFCC")]
    Mfcc,
    #[serde(rename = "PLP")]
    Plp,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [Self::PeZtwcc, Self::Ztwcc, Self::Mfcc, Self::Plp];

    /// Lower-case hyphenated name used on the command line and in paths.
    pub fn slug(self) -> &'static str {
        match self {
            Self::PeZtwcc => "pe-ztwcc",
            Self::Ztwcc => "ztwcc",
            Self::Mfcc => "mfcc",
            Self::Plp => "plp",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.slug() == norm)
            .ok_or_else(|| Error::Config(format!("unknown feature kind '{s}'")))
    }
}

/// Frames x 13 static cepstral coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CepstralMatrix {
    pub values: Matrix<f32>,
    pub frame_hop_s: f64,
    pub kind: FeatureKind,
}

impl CepstralMatrix {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }
}

/// Every front-end setting that influences a cepstral matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub ztw: ZtwConfig,
    pub perceptual: PerceptualConfig,
    pub frame: FrameConfig,
}

/// Compute the static cepstra of `kind` for a canonical clip.
pub fn extract(kind: FeatureKind, clip: &AudioClip, cfg: &FeatureConfig) -> Result<CepstralMatrix> {
    match kind {
        FeatureKind::PeZtwcc => pe_ztwcc(clip, &cfg.ztw, &cfg.perceptual),
        FeatureKind::Ztwcc => ztwcc(clip, &cfg.ztw, &cfg.perceptual),
        FeatureKind::Mfcc => mfcc(clip, &cfg.frame, &cfg.perceptual),
        FeatureKind::Plp => plpcc(clip, &cfg.frame, &cfg.perceptual),
    }
}
