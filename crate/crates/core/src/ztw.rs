//! Zero-time-windowed (ZTW) spectrum.
//!
//! At every analysis instant a short segment (`L` ms, `M` samples) starting at
//! that instant is multiplied by a heavily decaying window `w1[n]^2` and a
//! ripple-suppressing half-cosine window `w2[n]`, zero padded to `N >> M`
//! samples and analysed with the numerator of the group delay (NGD). The NGD
//! is double differenced along frequency to sharpen resonances and the
//! Hilbert envelope of the result is the spectrum row for that instant.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{pre_emphasize, AudioClip};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// How the second difference treats the two ends of the one-sided NGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// `v[-1] = v[len] = 0`.
    Zero,
    /// Even reflection about DC and Nyquist (`v[-1] = v[1]`,
    /// `v[len] = v[len-2]`), matching the symmetry of a real signal's spectrum.
    Reflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZtwConfig {
    pub segment_ms: f64,
    pub dft_size: usize,
    pub hop_ms: f64,
    pub pre_emphasis_alpha: f64,
    /// Edge handling of the double difference. The NGD of a `w1^2`-windowed
    /// segment is large and slowly varying, so zero padding leaves edge
    /// spikes that dominate the envelope; reflection does not.
    pub edge: EdgeMode,
}

impl Default for ZtwConfig {
    fn default() -> Self {
        Self {
            segment_ms: 5.0,
            dft_size: 2048,
            hop_ms: 10.0,
            pre_emphasis_alpha: 0.97,
            edge: EdgeMode::Reflect,
        }
    }
}

/// Converts a duration in milliseconds to a whole number of samples.
pub(crate) fn ms_to_samples(ms: f64, sample_rate: u32, what: &str) -> Result<usize> {
    let exact = ms * f64::from(sample_rate) / 1000.0;
    let n = exact.round();
    if n < 1.0 || (exact - n).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{what} of {ms} ms is not a positive whole number of samples at {sample_rate} Hz"
        )));
    }
    Ok(n as usize)
}

impl ZtwConfig {
    /// Segment length `M` in samples.
    pub fn segment_samples(&self, sample_rate: u32) -> Result<usize> {
        ms_to_samples(self.segment_ms, sample_rate, "segment")
    }

    pub fn hop_samples(&self, sample_rate: u32) -> Result<usize> {
        ms_to_samples(self.hop_ms, sample_rate, "hop")
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let m = self.segment_samples(sample_rate)?;
        self.hop_samples(sample_rate)?;
        if self.dft_size < 4 * m {
            return Err(Error::Config(format!(
                "dft_size {} must be at least 4x the segment length {m}",
                self.dft_size
            )));
        }
        if self.dft_size % 2 != 0 {
            return Err(Error::Config("dft_size must be even".into()));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis_alpha) {
            return Err(Error::Config(
                "pre_emphasis_alpha must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Frames x one-sided-bins grid of non-negative ZTW envelope magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroTemporalMatrix {
    pub values: Matrix<f64>,
    pub bin_hz: f64,
    pub frame_hop_s: f64,
}

/// Heavily decaying window: `w1[0] = 0`, `w1[n] = 1 / (4 sin^2(pi n / 2N))`.
pub fn make_w1(m: usize, n: usize) -> Result<Vec<f64>> {
    if m == 0 || m >= n {
        return Err(Error::Config(format!(
            "w1 needs 1 <= M < N, got M = {m}, N = {n}"
        )));
    }
    Ok((0..m)
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                let s = (PI * i as f64 / (2.0 * n as f64)).sin();
                1.0 / (4.0 * s * s)
            }
        })
        .collect())
}

/// Squared half-cosine window: `w2[n] = 4 cos^2(pi n / 2M)`.
///
/// Evaluated as `2 (1 + cos(pi n / M))`, which rounds to exactly 4 at
/// `n = 0` and exactly 2 at `n = M / 2`.
pub fn make_w2(m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| 2.0 * (1.0 + (PI * i as f64 / m as f64).cos()))
        .collect()
}

/// FFT plans and windows shared by every frame of a spectrogram.
pub struct ZtwAnalyzer {
    dft_size: usize,
    edge: EdgeMode,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    hilbert: HilbertPlan,
}

impl ZtwAnalyzer {
    pub fn new(segment_len: usize, dft_size: usize, edge: EdgeMode) -> Result<Self> {
        let w1 = make_w1(segment_len, dft_size)?;
        let w2 = make_w2(segment_len);
        let window = w1.iter().zip(&w2).map(|(a, b)| a * a * b).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            dft_size,
            edge,
            window,
            forward: planner.plan_fft_forward(dft_size),
            hilbert: HilbertPlan::with_planner(&mut planner, dft_size / 2 + 1),
        })
    }

    /// The composite window `w1^2 * w2`.
    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// ZTW spectrum row for the segment starting at `segment[0]`.
    pub fn row(&self, segment: &[f64]) -> Vec<f64> {
        let windowed: Vec<f64> = segment
            .iter()
            .zip(&self.window)
            .map(|(s, w)| s * w)
            .collect();
        let ngd = ngd_with_plan(&windowed, self.dft_size, self.forward.as_ref());
        let dd = second_difference(&ngd, self.edge);
        self.hilbert.envelope(&dd)
    }
}

/// Numerator of the group delay,
/// `g[k] = Re X[k] Re Y[k] + Im X[k] Im Y[k]` with `y[n] = n x[n]`, for
/// `k = 0..=N/2`.
pub fn ngd_spectrum(segment: &[f64], dft_size: usize) -> Result<Vec<f64>> {
    if dft_size < segment.len() || dft_size < 2 {
        return Err(Error::Config(format!(
            "dft size {dft_size} shorter than segment of {}",
            segment.len()
        )));
    }
    let fft = FftPlanner::new().plan_fft_forward(dft_size);
    Ok(ngd_with_plan(segment, dft_size, fft.as_ref()))
}

/// Both transforms come from one complex FFT of `x + i y`.
fn ngd_with_plan(segment: &[f64], n: usize, fft: &dyn Fft<f64>) -> Vec<f64> {
    let mut buf = vec![Complex64::default(); n];
    for (i, (&x, b)) in segment.iter().zip(buf.iter_mut()).enumerate() {
        *b = Complex64::new(x, i as f64 * x);
    }
    fft.process(&mut buf);
    (0..=n / 2)
        .map(|k| {
            let z = buf[k];
            let zc = buf[(n - k) % n].conj();
            let x = (z + zc) * 0.5;
            // (z - zc) / 2i
            let d = (z - zc) * 0.5;
            let y = Complex64::new(d.im, -d.re);
            x.re * y.re + x.im * y.im
        })
        .collect()
}

/// Second difference along the vector with zero padding at both ends
/// (`v[-1] = v[len] = 0`).
pub fn double_difference(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 3 {
        return Err(Error::Shape(format!(
            "double difference needs at least 3 values, got {}",
            v.len()
        )));
    }
    Ok(second_difference(v, EdgeMode::Zero))
}

/// Second difference with the chosen edge handling.
pub fn double_difference_with(v: &[f64], edge: EdgeMode) -> Result<Vec<f64>> {
    double_difference(v)?;
    Ok(second_difference(v, edge))
}

fn second_difference(v: &[f64], edge: EdgeMode) -> Vec<f64> {
    let n = v.len();
    let (before, after) = match edge {
        EdgeMode::Zero => (0.0, 0.0),
        EdgeMode::Reflect => (v[1], v[n - 2]),
    };
    (0..n)
        .map(|k| {
            let prev = if k == 0 { before } else { v[k - 1] };
            let next = if k + 1 == n { after } else { v[k + 1] };
            next - 2.0 * v[k] + prev
        })
        .collect()
}

struct HilbertPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl HilbertPlan {
    fn with_planner(planner: &mut FftPlanner<f64>, len: usize) -> Self {
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    fn envelope(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len;
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        // keep DC (and Nyquist for even n), double positive bins, zero the rest
        let positive_end = n.div_ceil(2);
        for (k, b) in buf.iter_mut().enumerate() {
            let gain = if k == 0 || (n % 2 == 0 && k == n / 2) {
                1.0
            } else if k < positive_end {
                2.0
            } else {
                0.0
            };
            *b *= gain;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|z| z.norm() * scale).collect()
    }
}

/// Magnitude of the analytic extension of `v`.
pub fn hilbert_envelope(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::Shape(
            "hilbert envelope needs at least 2 values".into(),
        ));
    }
    let plan = HilbertPlan::with_planner(&mut FftPlanner::new(), v.len());
    Ok(plan.envelope(v))
}

/// ZTW spectrogram of a canonical clip. Pre-emphasis is applied once to the
/// whole clip; analysis instants are `hop_ms` apart and
/// `frames = floor((len - M) / hop) + 1`.
pub fn ztw_spectrogram(clip: &AudioClip, cfg: &ZtwConfig) -> Result<SpectroTemporalMatrix> {
    if clip.channels != 1 {
        return Err(Error::UnsupportedAudio(
            "ZTW analysis expects mono audio".into(),
        ));
    }
    cfg.validate(clip.sample_rate)?;
    let m = cfg.segment_samples(clip.sample_rate)?;
    let hop = cfg.hop_samples(clip.sample_rate)?;
    let len = clip.frames();
    if len < m {
        return Err(Error::Shape(format!(
            "clip of {len} samples is shorter than one {m}-sample segment"
        )));
    }
    let emphasized = pre_emphasize(&clip.to_f64(), cfg.pre_emphasis_alpha);
    let analyzer = ZtwAnalyzer::new(m, cfg.dft_size, cfg.edge)?;
    let frames = (len - m) / hop + 1;
    let rows: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map(|f| analyzer.row(&emphasized[f * hop..f * hop + m]))
        .collect();
    Ok(SpectroTemporalMatrix {
        values: Matrix::from_rows(cfg.dft_size / 2 + 1, rows),
        bin_hz: f64::from(clip.sample_rate) / cfg.dft_size as f64,
        frame_hop_s: hop as f64 / f64::from(clip.sample_rate),
    })
}
