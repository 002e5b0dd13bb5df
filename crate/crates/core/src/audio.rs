//! Audio loading and conditioning.
//!
//! Everything downstream works on 16 kHz mono clips. This module gets raw
//! WAV files into that form: PCM decoding, channel down-mixing, band-limited
//! resampling and first-order pre-emphasis.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every analysis stage expects.
pub const CANONICAL_RATE: u32 = 16_000;

/// Interleaved floating-point audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Interleaved samples, nominally in `[-1, 1]`.
    pub samples: Vec<f32>,
    pub channels: u16,
    pub sample_rate: u32,
    pub source_path: Option<String>,
}

impl AudioClip {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            channels: 1,
            sample_rate,
            source_path: None,
        }
    }

    /// Number of sample frames (samples per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn is_canonical(&self) -> bool {
        self.channels == 1 && self.sample_rate == CANONICAL_RATE
    }

    /// Samples of a mono clip widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            ..self.clone()
        }
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Read a PCM-16 or float-32 WAV file with one or two channels.
///
/// 16-bit samples are divided by 32768, so full-scale negative maps to -1.0.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels (1 or 2 supported)",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {fmt:?} encoding",
                path.display()
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::UnsupportedAudio(format!(
            "{}: non-finite samples",
            path.display()
        )));
    }
    Ok(AudioClip {
        samples,
        channels: spec.channels,
        sample_rate: spec.sample_rate,
        source_path: Some(path.display().to_string()),
    })
}

/// Sample encodings accepted by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Write a clip as a RIFF WAV file. PCM-16 output rounds to the nearest
/// quantization step and saturates at full scale.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: clip.channels,
        sample_rate: clip.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => {
                let q = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)
            }
            WavEncoding::Float32 => writer.write_sample(s),
        };
        res.map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Average stereo frames into a single channel. Mono input is returned as is.
pub fn to_mono(clip: &AudioClip) -> AudioClip {
    if clip.channels <= 1 {
        return clip.clone();
    }
    let ch = clip.channels as usize;
    let samples = clip
        .samples
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f32>() / ch as f32)
        .collect();
    AudioClip {
        samples,
        channels: 1,
        sample_rate: clip.sample_rate,
        source_path: clip.source_path.clone(),
    }
}

const SINC_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.0;
const MAX_TABLE_PHASES: u64 = 4096;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Windowed-sinc interpolation kernel.
struct SincKernel {
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl SincKernel {
    fn new(cutoff: f64) -> Self {
        Self {
            cutoff,
            half_width: (SINC_TAPS / 2) as f64,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    /// Weight of an input sample `x` input-samples away from the output instant.
    fn weight(&self, x: f64) -> f64 {
        let r = x / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = PI * self.cutoff * x;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            arg.sin() / arg
        };
        let kaiser = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc * kaiser
    }

    /// The 32 taps for fractional offset `frac` in `[0, 1)`; tap `j` applies
    /// to input index `floor(t) - 15 + j`.
    fn taps(&self, frac: f64) -> [f64; SINC_TAPS] {
        let mut out = [0.0; SINC_TAPS];
        let first = -((SINC_TAPS / 2) as f64 - 1.0);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.weight(first + j as f64 - frac);
        }
        out
    }
}

/// Polyphase windowed-sinc sample-rate conversion (Kaiser window, beta 8,
/// 32 taps per phase). Output length is `round(len * target / rate)`.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(Error::EmptyAudio("cannot resample an empty clip".into()));
    }
    if target_hz == 0 || clip.sample_rate == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if target_hz == clip.sample_rate {
        return Ok(clip.clone());
    }
    let g = gcd(u64::from(target_hz), u64::from(clip.sample_rate));
    let up = u64::from(target_hz) / g;
    let down = u64::from(clip.sample_rate) / g;
    let kernel = SincKernel::new((up as f64 / down as f64).min(1.0));
    let table: Option<Vec<[f64; SINC_TAPS]>> = (up <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect());

    let ch = clip.channels.max(1) as usize;
    let in_len = clip.frames() as u64;
    let out_len = ((2 * in_len * up + down) / (2 * down)) as usize;
    let mut out = vec![0f32; out_len * ch];
    let half = (SINC_TAPS / 2) as i64 - 1;

    for m in 0..out_len {
        let pos = m as u64 * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let computed;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                computed = kernel.taps(phase as f64 / up as f64);
                &computed
            }
        };
        for c in 0..ch {
            let mut acc = 0.0f64;
            for (j, &w) in taps.iter().enumerate() {
                let idx = base - half + j as i64;
                if idx >= 0 && (idx as u64) < in_len {
                    acc += w * f64::from(clip.samples[idx as usize * ch + c]);
                }
            }
            out[m * ch + c] = acc as f32;
        }
    }
    Ok(AudioClip {
        samples: out,
        channels: clip.channels,
        sample_rate: target_hz,
        source_path: clip.source_path.clone(),
    })
}

/// Down-mix and resample to 16 kHz mono.
pub fn canonicalize(clip: &AudioClip) -> Result<AudioClip> {
    resample(&to_mono(clip), CANONICAL_RATE)
}

/// First-order pre-emphasis: `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn pre_emphasize(samples: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = None;
    for &x in samples {
        out.push(match prev {
            None => x,
            Some(p) => x - alpha * p,
        });
        prev = Some(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> AudioClip {
        let n = (rate as f64 * secs).round() as usize;
        AudioClip::mono(
            (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.8)
                .collect(),
            rate,
        )
    }

    fn dominant_hz(x: &[f32], rate: u32) -> f64 {
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = x.len();
        let mut buf: Vec<Complex<f64>> =
            x.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        k as f64 * rate as f64 / n as f64
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
    }

    #[test]
    fn stereo_silence_keeps_rate_and_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        let clip = AudioClip {
            samples: vec![0.0; 2 * 44100],
            channels: 2,
            sample_rate: 44100,
            source_path: None,
        };
        write_wav(&clip, &path, WavEncoding::Pcm16).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 44100);
        assert_eq!(back.channels, 2);
        assert_eq!(back.frames(), 44100);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn wav_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let clip = sine(440.0, 16000, 0.25);
        write_wav(&clip, &path, WavEncoding::Pcm16).unwrap();
        let once = load_wav(&path).unwrap();
        for (a, b) in clip.samples.iter().zip(&once.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        // second generation is exact
        write_wav(&once, &path, WavEncoding::Pcm16).unwrap();
        assert_eq!(load_wav(&path).unwrap().samples, once.samples);

        let fpath = dir.path().join("sine_f32.wav");
        write_wav(&clip, &fpath, WavEncoding::Float32).unwrap();
        assert_eq!(load_wav(&fpath).unwrap().samples, clip.samples);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"not a riff file at all").unwrap();
        assert!(matches!(load_wav(&junk), Err(Error::Wav { .. })));

        let empty = dir.path().join("empty.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        hound::WavWriter::create(&empty, spec)
            .unwrap()
            .finalize()
            .unwrap();
        assert!(matches!(load_wav(&empty), Err(Error::EmptyAudio(_))));

        let pcm8 = dir.path().join("pcm8.wav");
        let spec8 = hound::WavSpec {
            bits_per_sample: 8,
            ..spec
        };
        let mut w = hound::WavWriter::create(&pcm8, spec8).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&pcm8), Err(Error::UnsupportedAudio(_))));
    }

    #[test]
    fn mono_mixing() {
        let mono = AudioClip::mono(vec![0.1, -0.3], 16000);
        assert_eq!(to_mono(&mono), mono);
        let stereo = AudioClip {
            samples: vec![0.5, -0.5, 0.2, 0.4],
            channels: 2,
            sample_rate: 16000,
            source_path: None,
        };
        let m = to_mono(&stereo);
        assert_eq!(m.channels, 1);
        assert_abs_diff_eq!(m.samples[0], 0.0);
        assert_abs_diff_eq!(m.samples[1], 0.3, epsilon = 1e-7);
    }

    #[test]
    fn resample_identity_and_lengths() {
        let clip = sine(300.0, 16000, 0.1);
        assert_eq!(resample(&clip, 16000).unwrap().samples, clip.samples);

        let c32 = AudioClip::mono(vec![0.1; 32000], 32000);
        assert_eq!(resample(&c32, 16000).unwrap().samples.len(), 16000);

        let c441 = AudioClip::mono(vec![0.0; 1000], 44100);
        assert_eq!(resample(&c441, 16000).unwrap().samples.len(), 363);

        assert!(resample(&AudioClip::mono(vec![], 16000), 8000).is_err());
    }

    #[test]
    fn resampled_tone_keeps_its_frequency() {
        let clip = sine(1000.0, 48000, 1.0);
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.samples.len(), 16000);
        assert_eq!(out.sample_rate, 16000);
        assert_abs_diff_eq!(dominant_hz(&out.samples, 16000), 1000.0);
    }

    #[test]
    fn downsampling_suppresses_out_of_band_tone() {
        // 7 kHz is above the 4 kHz Nyquist of the 8 kHz target.
        let clip = sine(7000.0, 16000, 0.5);
        let out = resample(&clip, 8000).unwrap();
        let interior = &out.samples[200..out.samples.len() - 200];
        let rms = (interior.iter().map(|s| s * s).sum::<f32>() / interior.len() as f32).sqrt();
        assert!(rms < 0.01, "alias rms {rms}");
    }

    #[test]
    fn pre_emphasis_examples() {
        let x = [0.3, -0.2, 0.9];
        assert_eq!(pre_emphasize(&x, 0.0), x.to_vec());
        let c = pre_emphasize(&[2.0; 4], 0.97);
        assert_eq!(c[0], 2.0);
        for v in &c[1..] {
            assert_abs_diff_eq!(*v, 0.03 * 2.0, epsilon = 1e-12);
        }
        assert_eq!(pre_emphasize(&[1.0, 1.0, 0.0], 0.5), vec![1.0, 0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn mono_and_resample_are_homogeneous(
            xs in proptest::collection::vec(-0.5f32..0.5, 2..200),
            c in -2.0f32..2.0,
        ) {
            let n = xs.len() / 2 * 2;
            let stereo = AudioClip { samples: xs[..n].to_vec(), channels: 2, sample_rate: 22050, source_path: None };
            let a = to_mono(&stereo.scaled(c));
            let b = to_mono(&stereo).scaled(c);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let mono = AudioClip::mono(xs.clone(), 22050);
            let a = resample(&mono.scaled(c), 16000).unwrap();
            let b = resample(&mono, 16000).unwrap().scaled(c);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn pre_emphasis_is_linear(
            pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..100),
            alpha in 0.0f64..0.99,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = pre_emphasize(&sum, alpha);
            let px = pre_emphasize(&x, alpha);
            let py = pre_emphasize(&y, alpha);
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (px[i] + py[i])).abs() < 1e-6);
            }
        }
    }
}
