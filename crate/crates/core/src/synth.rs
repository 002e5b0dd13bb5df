//! Synthetic corpora with known ground truth, for tests and demos.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{write_wav, AudioClip, WavEncoding, CANONICAL_RATE};
use crate::curation::labels::{format_label_file, DisfluencyType, LabelEvent};
use crate::curation::manifest::{clip_file_name, write_manifest, ClipRecord, Corpus};
use crate::curation::standardize::CLIP_SAMPLES;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tdnn::Dataset;

/// Vowel-like harmonic tone: a gliding f0 with harmonics weighted by a few
/// formant resonances, faded in and out over 15 ms.
pub fn vowel(
    rng: &mut impl Rng,
    len: usize,
    fs: f64,
    f0: f64,
    formants: &[(f64, f64)],
) -> Vec<f64> {
    let n_harm = ((0.45 * fs) / f0).floor() as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let res: f64 = formants
                .iter()
                .map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
                .sum();
            res / (h as f64).sqrt()
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let glide_rate = rng.gen_range(2.0..4.0);
    let mut theta = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / fs;
        theta += 2.0 * PI * f0 * (1.0 + 0.03 * (2.0 * PI * glide_rate * t).sin()) / fs;
        let v: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (a, p))| a * ((h + 1) as f64 * theta + p).sin())
            .sum();
        out.push(v);
    }
    normalize_peak(&mut out, 1.0);
    fade(&mut out, (0.015 * fs) as usize);
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

fn fade(x: &mut [f64], n: usize) {
    let n = n.min(x.len() / 2);
    let len = x.len();
    for i in 0..n {
        let g = 0.5 - 0.5 * (PI * i as f64 / n as f64).cos();
        x[i] *= g;
        x[len - 1 - i] *= g;
    }
}

fn mix_into(dst: &mut [f64], at: usize, src: &[f64], gain: f64) {
    for (d, s) in dst[at..].iter_mut().zip(src) {
        *d += gain * s;
    }
}

/// One long recording of the curation mini-corpus and what is in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTruth {
    pub speaker: String,
    pub sample_rate: u32,
    pub channels: u16,
    /// Speech segments in seconds; everything else is digital silence.
    pub speech: Vec<(f64, f64)>,
    pub events: Vec<LabelEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniCorpus {
    pub sources: Vec<SourceTruth>,
    pub expected_counts: BTreeMap<DisfluencyType, usize>,
}

fn random_formants(rng: &mut impl Rng) -> [(f64, f64); 3] {
    [
        (rng.gen_range(350.0..850.0), 90.0),
        (rng.gen_range(900.0..2200.0), 120.0),
        (rng.gen_range(2400.0..3200.0), 200.0),
    ]
}

/// Writes `n_sources` recordings (`<speaker>.wav`) into `audio_dir` and their
/// Audacity label files into `labels_dir`. Recordings mix sample rates and
/// channel counts; one is shorter than a clip so it must be padded.
pub fn generate_mini_corpus(
    audio_dir: impl AsRef<Path>,
    labels_dir: impl AsRef<Path>,
    n_sources: usize,
    seed: u64,
) -> Result<MiniCorpus> {
    let (audio_dir, labels_dir) = (audio_dir.as_ref(), labels_dir.as_ref());
    for d in [audio_dir, labels_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::new();
    let mut counts = BTreeMap::new();
    let mut type_cycle = DisfluencyType::ALL.iter().copied().cycle();
    for s in 0..n_sources {
        let speaker = format!("spk{s:02}");
        let (rate, channels) = [(16000, 1), (44100, 2), (48000, 1), (22050, 2)][s % 4];
        let fs = f64::from(rate);
        let short = s == n_sources - 1 && n_sources > 1;
        let mut speech = Vec::new();
        let total_s = if short {
            speech.push((0.5, 2.0));
            2.5
        } else {
            let mut t = rng.gen_range(0.4..1.0);
            for _ in 0..rng.gen_range(3..=4) {
                let d = rng.gen_range(1.0..2.5);
                speech.push((t, t + d));
                t += d + rng.gen_range(0.5..1.2);
            }
            t
        };
        let len = (total_s * fs).round() as usize;
        let mut signal = vec![0.0; len];
        let f0 = rng.gen_range(100.0..220.0);
        let formants = random_formants(&mut rng);
        let mut events = Vec::new();
        for &(a, b) in &speech {
            let (i0, i1) = ((a * fs).round() as usize, (b * fs).round() as usize);
            let v = vowel(&mut rng, i1 - i0, fs, f0, &formants);
            mix_into(&mut signal, i0, &v, 0.5);
            let n_ev = if b - a > 1.6 { 2 } else { 1 };
            let span = (b - a) / n_ev as f64;
            for k in 0..n_ev {
                let lo = a + k as f64 * span;
                let dur = rng.gen_range(0.25..(span - 0.1).min(1.0));
                let start = rng.gen_range(lo + 0.05..lo + span - dur - 0.05 + 1e-9);
                let dtype = type_cycle.next().unwrap();
                *counts.entry(dtype).or_insert(0) += 1;
                events.push(LabelEvent {
                    start_s: (start * 100.0).round() / 100.0,
                    end_s: ((start + dur) * 100.0).round() / 100.0,
                    dtype,
                });
            }
        }
        let samples: Vec<f32> = signal
            .iter()
            .flat_map(|&v| std::iter::repeat(v as f32).take(channels as usize))
            .collect();
        let clip = AudioClip {
            samples,
            channels,
            sample_rate: rate,
            source_path: None,
        };
        write_wav(
            &clip,
            audio_dir.join(format!("{speaker}.wav")),
            WavEncoding::Pcm16,
        )?;
        let label_path = labels_dir.join(format!("{speaker}.txt"));
        fs::write(&label_path, format_label_file(&events))
            .map_err(|e| Error::io(&label_path, e))?;
        sources.push(SourceTruth {
            speaker,
            sample_rate: rate,
            channels,
            speech,
            events,
        });
    }
    Ok(MiniCorpus {
        sources,
        expected_counts: counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisfluencyCorpusSpec {
    /// Speakers in each of the two classes.
    pub speakers_per_class: usize,
    pub clips_per_speaker: usize,
    pub seed: u64,
}

impl Default for DisfluencyCorpusSpec {
    fn default() -> Self {
        Self {
            speakers_per_class: 20,
            clips_per_speaker: 10,
            seed: 0,
        }
    }
}

/// Per-speaker constants shared by all of a speaker's clips.
#[derive(Debug, Clone)]
struct Voice {
    f0: f64,
    formants: [(f64, f64); 3],
    /// First-difference coefficient of the burst noise; larger is tenser.
    tilt: f64,
    burst_gap_s: f64,
}

impl Voice {
    fn random(rng: &mut impl Rng) -> Self {
        Self {
            f0: rng.gen_range(95.0..240.0),
            formants: random_formants(rng),
            tilt: rng.gen_range(0.6..0.95),
            burst_gap_s: rng.gen_range(0.06..0.14),
        }
    }
}

fn background(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1e-3).unwrap();
    (0..len).map(|_| n.sample(rng)).collect()
}

/// Repeated 80 ms tilted noise bursts with jittered timing and level, then
/// the word they lead into.
fn atypical_clip(rng: &mut impl Rng, v: &Voice) -> Vec<f64> {
    let fs = f64::from(CANONICAL_RATE);
    let mut x = background(rng, CLIP_SAMPLES);
    let white = Normal::new(0.0, 1.0).unwrap();
    let mut t = rng.gen_range(0.2..0.6);
    for _ in 0..rng.gen_range(4..=7) {
        let dur = 0.08 * rng.gen_range(0.85..1.15);
        let n = (dur * fs) as usize;
        let raw: Vec<f64> = (0..=n).map(|_| white.sample(rng)).collect();
        let mut burst: Vec<f64> = raw.windows(2).map(|w| w[1] - v.tilt * w[0]).collect();
        normalize_peak(&mut burst, 1.0);
        fade(&mut burst, 40);
        mix_into(
            &mut x,
            (t * fs) as usize,
            &burst,
            0.4 * rng.gen_range(0.7..1.3),
        );
        t += dur + v.burst_gap_s * rng.gen_range(0.8..1.2);
    }
    let word_len =
        ((rng.gen_range(0.3..0.6f64) * fs) as usize).min(CLIP_SAMPLES - (t * fs) as usize - 1600);
    if word_len > 1600 {
        let w = vowel(rng, word_len, fs, v.f0, &v.formants);
        mix_into(&mut x, (t * fs) as usize + 800, &w, 0.4);
    }
    x
}

/// Two smooth vowel-like stretches separated by one hesitation gap.
fn typical_clip(rng: &mut impl Rng, v: &Voice) -> Vec<f64> {
    let fs = f64::from(CANONICAL_RATE);
    let mut x = background(rng, CLIP_SAMPLES);
    let a = rng.gen_range(0.1..0.3);
    let d1 = rng.gen_range(0.7..1.1);
    let gap = rng.gen_range(0.2..0.5);
    let d2 = (3.0 - a - d1 - gap - rng.gen_range(0.05..0.3f64)).min(1.2);
    for (start, dur) in [(a, d1), (a + d1 + gap, d2)] {
        let f0 = v.f0 * rng.gen_range(0.95..1.05);
        let w = vowel(rng, (dur * fs) as usize, fs, f0, &v.formants);
        mix_into(&mut x, (start * fs) as usize, &w, 0.45);
    }
    x
}

const REPETITIONS: [DisfluencyType; 3] = [
    DisfluencyType::WordRepetition,
    DisfluencyType::PartWordRepetition,
    DisfluencyType::PhraseRepetition,
];

/// Writes a two-class corpus of standardized clips to `dir` with its
/// `manifest.jsonl`. Atypical speakers are tagged TISA, typical ones IED;
/// all clips carry repetition types so the repetition task selects them all.
pub fn generate_disfluency_corpus(
    dir: impl AsRef<Path>,
    spec: &DisfluencyCorpusSpec,
) -> Result<Vec<ClipRecord>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    for (corpus, prefix) in [(Corpus::Tisa, "pws"), (Corpus::Ied, "ctl")] {
        for s in 0..spec.speakers_per_class {
            let speaker = format!("{prefix}{s:02}");
            let voice = Voice::random(&mut rng);
            let mut index = BTreeMap::new();
            for c in 0..spec.clips_per_speaker {
                let dtype = REPETITIONS[c % REPETITIONS.len()];
                let x = match corpus {
                    Corpus::Tisa => atypical_clip(&mut rng, &voice),
                    _ => typical_clip(&mut rng, &voice),
                };
                let clip = AudioClip::mono(
                    x.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect(),
                    CANONICAL_RATE,
                );
                let idx = index.entry(dtype).or_insert(0usize);
                let name = clip_file_name(&speaker, dtype, *idx);
                *idx += 1;
                write_wav(&clip, dir.join(&name), WavEncoding::Pcm16)?;
                records.push(ClipRecord {
                    clip_path: name,
                    speaker_id: speaker.clone(),
                    corpus,
                    dtype,
                    fluency: corpus.fluency(),
                    duration_s: clip.duration_s(),
                });
            }
        }
    }
    records.sort_by(|a, b| a.clip_path.cmp(&b.clip_path));
    write_manifest(&records, dir.join("manifest.jsonl"))?;
    Ok(records)
}

/// `n` random `frames x width` inputs labelled by the sign of a fixed
/// linear functional, pushed `margin` away from the decision boundary.
pub fn separable_dataset(n: usize, frames: usize, width: usize, margin: f32, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir_rng = &mut ChaCha8Rng::seed_from_u64(0x5eed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    // direction constant over time, random over channels, unit norm overall
    let v: Vec<f32> = (0..width).map(|_| normal.sample(dir_rng)).collect();
    let norm = (v.iter().map(|a| a * a).sum::<f32>() * frames as f32).sqrt();
    let dir: Vec<f32> = (0..frames)
        .flat_map(|_| v.iter().map(|a| a / norm))
        .collect();
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let want = i % 2 == 0;
        let mut x: Vec<f32> = (0..frames * width)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let s: f32 = x.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let target = if want {
            margin + s.abs()
        } else {
            -margin - s.abs()
        };
        x.iter_mut()
            .zip(&dir)
            .for_each(|(a, d)| *a += (target - s) * d);
        inputs.push(Matrix::from_vec(frames, width, x));
        labels.push(want);
    }
    Dataset { inputs, labels }
}
