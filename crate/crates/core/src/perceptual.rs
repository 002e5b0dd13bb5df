//! Perceptual enhancement of the ZTW spectrum and cepstral analysis.
//!
//! Each ZTW spectrum row is mel warped through a triangular filterbank,
//! weighted by an equal-loudness contour, compressed with a 1/5 power law
//! and turned into 13 cepstral coefficients by a DCT of the log band
//! energies (PE-ZTWCC). ZTWCC skips the loudness and power-law stages.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::features::{CepstralMatrix, FeatureKind};
use crate::matrix::Matrix;
use crate::ztw::{ztw_spectrogram, ZtwConfig};

/// Number of cepstral coefficients kept after liftering.
pub const N_CEPS: usize = 13;
pub const POWER_EXPONENT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptualConfig {
    pub n_mel_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub power_exponent: f64,
    pub n_ceps: usize,
    pub log_floor: f64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            n_mel_bands: 40,
            f_min: 0.0,
            f_max: 8000.0,
            power_exponent: POWER_EXPONENT,
            n_ceps: N_CEPS,
            log_floor: 1e-10,
        }
    }
}

impl PerceptualConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_ceps != N_CEPS {
            return Err(Error::Config(format!("n_ceps is fixed at {N_CEPS}")));
        }
        if self.power_exponent != POWER_EXPONENT {
            return Err(Error::Config(format!(
                "power_exponent is fixed at {POWER_EXPONENT}"
            )));
        }
        if self.n_mel_bands < self.n_ceps {
            return Err(Error::Config("n_mel_bands must be >= n_ceps".into()));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max) {
            return Err(Error::Config("need 0 <= f_min < f_max".into()));
        }
        if self.f_max > f64::from(sample_rate) / 2.0 {
            return Err(Error::Config(format!(
                "f_max {} exceeds Nyquist of {sample_rate} Hz",
                self.f_max
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over one-sided DFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_bands x n_bins`, each row peaking at exactly 1.0.
    pub weights: Matrix<f64>,
    pub centers_hz: Vec<f64>,
}

/// Mel-equispaced triangular filters; band `b` rises from center `b-1` to
/// center `b` and falls to center `b+1`, so neighbours overlap by half.
/// `n_bins` one-sided bins cover `0..=fs/2`.
pub fn mel_filterbank(
    n_bands: usize,
    n_bins: usize,
    fs: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = f64::from(fs) / 2.0;
    if n_bands < 2 || n_bins < n_bands {
        return Err(Error::Config(format!(
            "filterbank needs n_bands >= 2 and n_bins >= n_bands (got {n_bands}, {n_bins})"
        )));
    }
    if f_max > nyquist || f_min < 0.0 || f_min >= f_max {
        return Err(Error::Config(format!(
            "filterbank range {f_min}..{f_max} Hz invalid for fs = {fs}"
        )));
    }
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_bands + 1) as f64))
        .collect();
    let bin_hz = nyquist / (n_bins - 1) as f64;
    let mut weights = Matrix::zeros(n_bands, n_bins);
    for b in 0..n_bands {
        let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
        let row = weights.row_mut(b);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
        }
        let peak = row.iter().fold(0.0f64, |m, &v| m.max(v));
        if peak <= 0.0 {
            return Err(Error::Config(format!(
                "mel band {b} ({left:.1}-{right:.1} Hz) covers no DFT bin"
            )));
        }
        row.iter_mut().for_each(|w| *w /= peak);
    }
    Ok(MelFilterbank {
        weights,
        centers_hz: edges[1..=n_bands].to_vec(),
    })
}

/// Band energies: one filterbank dot product per band.
pub fn warp(frame: &[f64], filterbank: &Matrix<f64>) -> Result<Vec<f64>> {
    if frame.len() != filterbank.cols() {
        return Err(Error::Shape(format!(
            "frame has {} bins, filterbank expects {}",
            frame.len(),
            filterbank.cols()
        )));
    }
    Ok(filterbank
        .iter_rows()
        .map(|w| w.iter().zip(frame).map(|(a, b)| a * b).sum())
        .collect())
}

/// Equal-loudness contour `E(w)` at angular frequency `w` (rad/s).
pub fn equal_loudness_gain(omega: f64) -> f64 {
    let w2 = omega * omega;
    (w2 + 56.8e6) * w2 * w2 / ((w2 + 6.3e6).powi(2) * (w2 + 0.38e9))
}

pub fn equal_loudness(bands: &[f64], centers_hz: &[f64]) -> Result<Vec<f64>> {
    if bands.len() != centers_hz.len() {
        return Err(Error::Shape("band and center counts differ".into()));
    }
    Ok(bands
        .iter()
        .zip(centers_hz)
        .map(|(b, f)| b * equal_loudness_gain(2.0 * PI * f))
        .collect())
}

/// Intensity-to-loudness compression `x^(1/5)`.
pub fn power_law(bands: &[f64]) -> Result<Vec<f64>> {
    bands
        .iter()
        .map(|&x| {
            if x < 0.0 {
                Err(Error::Shape(format!("power law on negative value {x}")))
            } else {
                Ok(x.powf(POWER_EXPONENT))
            }
        })
        .collect()
}

/// Orthonormal DCT-II computed with one complex FFT of the even/odd
/// reordered input.
pub struct Dct2 {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
}

impl Dct2 {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let twiddle = (0..len)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2.0 * len as f64)))
            .collect();
        Self { len, fft, twiddle }
    }

    /// First `n_out` orthonormal DCT-II coefficients of `x`.
    pub fn transform(&self, x: &[f64], n_out: usize) -> Vec<f64> {
        let n = self.len;
        assert_eq!(x.len(), n, "dct length");
        let mut v = vec![Complex64::default(); n];
        for i in 0..n.div_ceil(2) {
            v[i] = Complex64::new(x[2 * i], 0.0);
        }
        for i in 0..n / 2 {
            v[n - 1 - i] = Complex64::new(x[2 * i + 1], 0.0);
        }
        self.fft.process(&mut v);
        let s0 = (1.0 / n as f64).sqrt();
        let s = (2.0 / n as f64).sqrt();
        (0..n_out.min(n))
            .map(|k| {
                let c = (v[k] * self.twiddle[k]).re;
                c * if k == 0 { s0 } else { s }
            })
            .collect()
    }
}

/// First `n_ceps` orthonormal DCT-II coefficients of the floored log bands.
/// Truncation to `n_ceps` is the liftering step.
pub fn cepstrum_from_bands(bands: &[f64], n_ceps: usize, log_floor: f64) -> Vec<f64> {
    let logs: Vec<f64> = bands.iter().map(|&b| b.max(log_floor).ln()).collect();
    Dct2::new(bands.len()).transform(&logs, n_ceps)
}

/// Per-frame band-to-cepstrum machinery shared by PE-ZTWCC, ZTWCC and MFCC.
pub(crate) struct CepstralStage {
    pub filterbank: MelFilterbank,
    pub dct: Dct2,
    pub n_ceps: usize,
    pub log_floor: f64,
}

impl CepstralStage {
    pub fn new(n_bins: usize, fs: u32, cfg: &PerceptualConfig) -> Result<Self> {
        cfg.validate(fs)?;
        Ok(Self {
            filterbank: mel_filterbank(cfg.n_mel_bands, n_bins, fs, cfg.f_min, cfg.f_max)?,
            dct: Dct2::new(cfg.n_mel_bands),
            n_ceps: cfg.n_ceps,
            log_floor: cfg.log_floor,
        })
    }

    pub fn cepstrum(&self, spectrum: &[f64], enhance: bool) -> Result<Vec<f32>> {
        let mut bands = warp(spectrum, &self.filterbank.weights)?;
        if enhance {
            bands = power_law(&equal_loudness(&bands, &self.filterbank.centers_hz)?)?;
        }
        let logs: Vec<f64> = bands.iter().map(|&b| b.max(self.log_floor).ln()).collect();
        Ok(self
            .dct
            .transform(&logs, self.n_ceps)
            .into_iter()
            .map(|c| c as f32)
            .collect())
    }
}

fn ztw_cepstra(
    clip: &AudioClip,
    ztw_cfg: &ZtwConfig,
    p_cfg: &PerceptualConfig,
    enhance: bool,
) -> Result<CepstralMatrix> {
    let spec = ztw_spectrogram(clip, ztw_cfg)?;
    let stage = CepstralStage::new(spec.values.cols(), clip.sample_rate, p_cfg)?;
    let rows = spec
        .values
        .iter_rows()
        .take(spec.values.rows())
        .map(|r| stage.cepstrum(r, enhance))
        .collect::<Result<Vec<_>>>()?;
    Ok(CepstralMatrix {
        values: Matrix::from_rows(p_cfg.n_ceps, rows),
        frame_hop_s: spec.frame_hop_s,
        kind: if enhance {
            FeatureKind::PeZtwcc
        } else {
            FeatureKind::Ztwcc
        },
    })
}

/// Perceptually enhanced ZTW cepstral coefficients.
pub fn pe_ztwcc(
    clip: &AudioClip,
    ztw_cfg: &ZtwConfig,
    p_cfg: &PerceptualConfig,
) -> Result<CepstralMatrix> {
    ztw_cepstra(clip, ztw_cfg, p_cfg, true)
}

/// ZTW cepstral coefficients without loudness weighting or power law.
pub fn ztwcc(
    clip: &AudioClip,
    ztw_cfg: &ZtwConfig,
    p_cfg: &PerceptualConfig,
) -> Result<CepstralMatrix> {
    ztw_cepstra(clip, ztw_cfg, p_cfg, false)
}
