//! Short-time Fourier baselines: MFCC and PLP cepstral coefficients.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::features::{CepstralMatrix, FeatureKind};
use crate::matrix::Matrix;
use crate::perceptual::{equal_loudness_gain, CepstralStage, PerceptualConfig, N_CEPS};
use crate::ztw::ms_to_samples;

pub const PLP_BANDS: usize = 21;
pub const PLP_ORDER: usize = 12;
const PLP_COMPRESSION: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

/// Hamming-windowed power spectra, one row per frame.
struct PowerFrames {
    spectra: Vec<Vec<f64>>,
    n_bins: usize,
    hop_s: f64,
}

fn power_frames(clip: &AudioClip, cfg: &FrameConfig) -> Result<PowerFrames> {
    if clip.channels != 1 {
        return Err(Error::UnsupportedAudio(
            "feature extraction expects mono audio".into(),
        ));
    }
    let fs = clip.sample_rate;
    let win = ms_to_samples(cfg.window_ms, fs, "analysis window")?;
    let hop = ms_to_samples(cfg.hop_ms, fs, "hop")?;
    let len = clip.frames();
    if len < win {
        return Err(Error::Shape(format!(
            "clip of {len} samples is shorter than one {win}-sample frame"
        )));
    }
    let nfft = win.next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let window: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
        .collect();
    let x = clip.to_f64();
    let frames = (len - win) / hop + 1;
    let spectra = (0..frames)
        .map(|f| {
            let mut buf = vec![Complex64::default(); nfft];
            for (i, b) in buf.iter_mut().take(win).enumerate() {
                *b = Complex64::new(x[f * hop + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..=nfft / 2].iter().map(|z| z.norm_sqr()).collect()
        })
        .collect();
    Ok(PowerFrames {
        spectra,
        n_bins: nfft / 2 + 1,
        hop_s: hop as f64 / f64::from(fs),
    })
}

/// Mel-frequency cepstral coefficients from 25 ms Hamming frames, sharing the
/// mel filterbank and DCT with the ZTW cepstra.
pub fn mfcc(
    clip: &AudioClip,
    frame_cfg: &FrameConfig,
    p_cfg: &PerceptualConfig,
) -> Result<CepstralMatrix> {
    let frames = power_frames(clip, frame_cfg)?;
    let stage = CepstralStage::new(frames.n_bins, clip.sample_rate, p_cfg)?;
    let rows = frames
        .spectra
        .iter()
        .map(|s| stage.cepstrum(s, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(CepstralMatrix {
        values: Matrix::from_rows(p_cfg.n_ceps, rows),
        frame_hop_s: frames.hop_s,
        kind: FeatureKind::Mfcc,
    })
}

pub fn hz_to_bark(f: f64) -> f64 {
    6.0 * (f / 600.0).asinh()
}

pub fn bark_to_hz(z: f64) -> f64 {
    600.0 * (z / 6.0).sinh()
}

/// Critical-band masking curve as a function of the Bark distance from the
/// band centre.
fn critical_band_weight(dz: f64) -> f64 {
    if dz < -1.3 || dz > 2.5 {
        0.0
    } else if dz < -0.5 {
        10f64.powf(2.5 * (dz + 0.5))
    } else if dz <= 0.5 {
        1.0
    } else {
        10f64.powf(-(dz - 0.5))
    }
}

/// `n_bands` critical-band filters equally spaced on the Bark scale from
/// 0 Hz to Nyquist, over `n_bins` one-sided bins. Returns the weights and
/// centre frequencies.
pub fn bark_filterbank(n_bands: usize, n_bins: usize, fs: u32) -> (Matrix<f64>, Vec<f64>) {
    let nyquist = f64::from(fs) / 2.0;
    let zmax = hz_to_bark(nyquist);
    let step = zmax / (n_bands - 1) as f64;
    let bin_bark: Vec<f64> = (0..n_bins)
        .map(|k| hz_to_bark(k as f64 * nyquist / (n_bins - 1) as f64))
        .collect();
    let mut weights = Matrix::zeros(n_bands, n_bins);
    let mut centers = Vec::with_capacity(n_bands);
    for j in 0..n_bands {
        let zc = j as f64 * step;
        centers.push(bark_to_hz(zc));
        for (w, z) in weights.row_mut(j).iter_mut().zip(&bin_bark) {
            *w = critical_band_weight(z - zc);
        }
    }
    (weights, centers)
}

/// Linear-prediction model from the Levinson-Durbin recursion.
/// The predictor polynomial is `A(z) = 1 + sum_k coeffs[k-1] z^-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Final prediction-error power (model gain squared).
    pub error: f64,
}

/// Solve the order-`order` autocorrelation normal equations.
///
/// Fails when `r[0] <= 0`. If the prediction error collapses to zero before
/// `order` is reached the remaining coefficients stay zero.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<LpcModel> {
    if r.len() <= order {
        return Err(Error::Shape(format!(
            "need {} autocorrelation lags for order {order}, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) {
        return Err(Error::Shape(
            "autocorrelation is not positive definite".into(),
        ));
    }
    let mut a = vec![0.0; order];
    let mut reflection = vec![0.0; order];
    let mut err = r[0];
    for i in 0..order {
        let acc: f64 = r[i + 1] + (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = -acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            break;
        }
        let prev = a.clone();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] + k * prev[i - 1 - j];
        }
        reflection[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            break;
        }
    }
    Ok(LpcModel {
        coeffs: a,
        reflection,
        error: err,
    })
}

/// Cepstrum of the all-pole model `sqrt(error) / A(z)`; `c[0] = ln(error)`.
pub fn lpc_to_cepstrum(model: &LpcModel, n_ceps: usize) -> Vec<f64> {
    let a = &model.coeffs;
    let p = a.len();
    let mut c = vec![0.0; n_ceps];
    if n_ceps == 0 {
        return c;
    }
    c[0] = model.error.ln();
    for n in 1..n_ceps {
        let mut acc = if n <= p { -a[n - 1] } else { 0.0 };
        for k in 1..n {
            if n - k <= p {
                acc -= (k as f64 / n as f64) * c[k] * a[n - k - 1];
            }
        }
        c[n] = acc;
    }
    c
}

/// Autocorrelation lags `0..=max_lag` of the power spectrum sampled at
/// `bands.len()` equally spaced points from DC to Nyquist (inverse DFT of
/// the even extension).
fn autocorrelation_from_spectrum(bands: &[f64], max_lag: usize) -> Vec<f64> {
    let last = bands.len() - 1;
    let denom = 2.0 * last as f64;
    (0..=max_lag)
        .map(|k| {
            let mut acc = bands[0]
                + if k % 2 == 0 {
                    bands[last]
                } else {
                    -bands[last]
                };
            for (j, &b) in bands.iter().enumerate().take(last).skip(1) {
                acc += 2.0 * b * (PI * (k * j) as f64 / last as f64).cos();
            }
            acc / denom
        })
        .collect()
}

/// Perceptual linear prediction cepstra: Bark integration (21 bands),
/// equal loudness, cube-root compression, order-12 all-pole model and the
/// LPC-to-cepstrum recursion.
pub fn plpcc(
    clip: &AudioClip,
    frame_cfg: &FrameConfig,
    p_cfg: &PerceptualConfig,
) -> Result<CepstralMatrix> {
    p_cfg.validate(clip.sample_rate)?;
    let frames = power_frames(clip, frame_cfg)?;
    let (fb, centers) = bark_filterbank(PLP_BANDS, frames.n_bins, clip.sample_rate);
    let loudness: Vec<f64> = centers
        .iter()
        .map(|f| equal_loudness_gain(2.0 * PI * f))
        .collect();
    let rows = frames
        .spectra
        .iter()
        .map(|spec| {
            let mut bands: Vec<f64> = fb
                .iter_rows()
                .zip(&loudness)
                .map(|(w, g)| {
                    let e: f64 = w.iter().zip(spec).map(|(a, b)| a * b).sum();
                    (e * g).powf(PLP_COMPRESSION)
                })
                .collect();
            // edge bands fall outside the loudness curve; copy their neighbours
            bands[0] = bands[1];
            bands[PLP_BANDS - 1] = bands[PLP_BANDS - 2];
            for b in &mut bands {
                *b = b.max(p_cfg.log_floor);
            }
            let r = autocorrelation_from_spectrum(&bands, PLP_ORDER);
            let model = levinson_durbin(&r, PLP_ORDER)?;
            Ok(lpc_to_cepstrum(&model, N_CEPS)
                .into_iter()
                .map(|c| c as f32)
                .collect())
        })
        .collect::<Result<Vec<Vec<f32>>>>()?;
    Ok(CepstralMatrix {
        values: Matrix::from_rows(N_CEPS, rows),
        frame_hop_s: frames.hop_s,
        kind: FeatureKind::Plp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64) -> AudioClip {
        AudioClip::mono(
            (0..16000)
                .map(|i| (2.0 * PI * freq * i as f64 / 16000.0).sin() as f32 * 0.5)
                .collect(),
            16000,
        )
    }

    fn noise(seed: u64, n: usize) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::mono((0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), 16000)
    }

    /// Autocorrelation of a random stable-ish signal, so the Toeplitz system
    /// is positive definite.
    fn random_autocorrelation(rng: &mut ChaCha8Rng, lags: usize) -> Vec<f64> {
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .windows(3)
            .map(|w| w[0] + 0.6 * w[1] - 0.3 * w[2])
            .collect();
        (0..lags)
            .map(|k| y.iter().zip(&y[k..]).map(|(a, b)| a * b).sum::<f64>() / y.len() as f64)
            .collect()
    }

    #[test]
    fn mfcc_shape_and_silence() {
        let clip = AudioClip::mono(vec![0.0; 48000], 16000);
        let m = mfcc(&clip, &FrameConfig::default(), &PerceptualConfig::default()).unwrap();
        assert_eq!((m.values.rows(), m.values.cols()), (298, 13));
        let first = m.values.row(0).to_vec();
        assert!(m.values.iter_rows().all(|r| r == first.as_slice()));
        assert!(mfcc(
            &AudioClip::mono(vec![0.0; 399], 16000),
            &FrameConfig::default(),
            &PerceptualConfig::default()
        )
        .is_err());
    }

    #[test]
    fn mfcc_separates_tones() {
        let (f, p) = (FrameConfig::default(), PerceptualConfig::default());
        let a = mfcc(&tone(1000.0), &f, &p).unwrap();
        let b = mfcc(&tone(3000.0), &f, &p).unwrap();
        let dist: f32 = a.values.row(10)[1..]
            .iter()
            .zip(&b.values.row(10)[1..])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f32>()
            .sqrt();
        assert!(dist > 0.1, "distance {dist}");
    }

    #[test]
    fn plp_silence_and_noise() {
        let (f, p) = (FrameConfig::default(), PerceptualConfig::default());
        let s = plpcc(&AudioClip::mono(vec![0.0; 48000], 16000), &f, &p).unwrap();
        assert_eq!((s.values.rows(), s.values.cols()), (298, 13));
        let first = s.values.row(0).to_vec();
        assert!(s.values.iter_rows().all(|r| r == first.as_slice()));
        assert!(first.iter().all(|v| v.is_finite()));

        let n = plpcc(&noise(2, 8000), &f, &p).unwrap();
        assert!(n.values.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn levinson_matches_direct_toeplitz_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let r = random_autocorrelation(&mut rng, 13);
            let model = levinson_durbin(&r, 12).unwrap();
            let t = DMatrix::from_fn(12, 12, |i, j| r[i.abs_diff(j)]);
            let rhs = DVector::from_fn(12, |i, _| -r[i + 1]);
            let direct = t.lu().solve(&rhs).unwrap();
            for (a, b) in model.coeffs.iter().zip(direct.iter()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            assert!(model.reflection.iter().all(|k| k.abs() < 1.0));
            assert!(model.error > 0.0);
        }
        assert!(levinson_durbin(&[0.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn plp_model_on_noise_is_minimum_phase() {
        let clip = noise(4, 16000);
        let frames = power_frames(&clip, &FrameConfig::default()).unwrap();
        let (fb, centers) = bark_filterbank(PLP_BANDS, frames.n_bins, 16000);
        for spec in frames.spectra.iter().step_by(10) {
            let mut bands: Vec<f64> = fb
                .iter_rows()
                .zip(&centers)
                .map(|(w, f)| {
                    let e: f64 = w.iter().zip(spec).map(|(a, b)| a * b).sum();
                    (e * equal_loudness_gain(2.0 * PI * f)).powf(PLP_COMPRESSION)
                })
                .collect();
            bands[0] = bands[1];
            bands[20] = bands[19];
            let model = levinson_durbin(&autocorrelation_from_spectrum(&bands, 12), 12).unwrap();
            assert!(model.error > 0.0);
            // roots of z^12 + a1 z^11 + ... + a12 via the companion matrix
            let p = model.coeffs.len();
            let companion = DMatrix::from_fn(p, p, |i, j| {
                if i == 0 {
                    -model.coeffs[j]
                } else if i == j + 1 {
                    1.0
                } else {
                    0.0
                }
            });
            let roots = companion.complex_eigenvalues();
            assert!(roots.iter().all(|z| z.norm() < 1.0));
        }
    }

    #[test]
    fn cepstrum_recursion_single_pole() {
        // 1 / (1 - a z^-1) has cepstrum a^n / n
        let a = 0.5;
        let model = LpcModel {
            coeffs: vec![-a],
            reflection: vec![-a],
            error: 1.0,
        };
        let c = lpc_to_cepstrum(&model, 6);
        assert_eq!(c[0], 0.0);
        for n in 1..6 {
            assert!((c[n] - a.powi(n as i32) / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn bark_filterbank_shape() {
        let (fb, centers) = bark_filterbank(21, 257, 16000);
        assert_eq!((fb.rows(), fb.cols()), (21, 257));
        assert_eq!(centers[0], 0.0);
        assert!((centers[20] - 8000.0).abs() < 1e-6);
        assert!(fb.as_slice().iter().all(|&w| (0.0..=1.0).contains(&w)));
    }
}
