use std::f64::consts::PI;

use crate::audio::{AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};

use super::labels::LabelEvent;
use super::vad::{detect_voice_activity, SpeechRegion, VadParams};

/// Standardized clip length in samples (3 s at 16 kHz).
pub const CLIP_SAMPLES: usize = 48_000;
/// Raised-cosine fade length (5 ms).
pub const FADE_SAMPLES: usize = 80;
/// How far a cut point may move to land on a speech/silence boundary (250 ms).
pub const SNAP_SAMPLES: usize = 4_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub clip: AudioClip,
    /// Where the output's first sample sits in the source; negative when the
    /// source was padded.
    pub source_start_s: f64,
    /// The event was longer than the clip and got cut around its midpoint.
    pub truncated: bool,
}

/// Cut a 3 s clip around `event`, snapping cuts to the VAD boundaries of the
/// source.
pub fn standardize_clip(
    source: &AudioClip,
    event: &LabelEvent,
    vad: &VadParams,
) -> Result<Standardized> {
    let regions = detect_voice_activity(source, vad)?;
    standardize_with_regions(source, event, &regions)
}

/// Same as [`standardize_clip`] with precomputed speech regions, so one VAD
/// pass serves every event of a recording.
pub fn standardize_with_regions(
    source: &AudioClip,
    event: &LabelEvent,
    regions: &[SpeechRegion],
) -> Result<Standardized> {
    if !source.is_canonical() {
        return Err(Error::UnsupportedAudio(
            "standardization expects 16 kHz mono audio".into(),
        ));
    }
    let fs = f64::from(CANONICAL_RATE);
    let len = source.samples.len();
    if event.end_s <= event.start_s
        || event.start_s < 0.0
        || event.end_s > source.duration_s() + 0.5 / fs
    {
        return Err(Error::Curation(format!(
            "event {:.3}-{:.3} s outside source of {:.3} s",
            event.start_s,
            event.end_s,
            source.duration_s()
        )));
    }
    let es = ((event.start_s * fs).round() as usize).min(len);
    let ee = ((event.end_s * fs).round() as usize).min(len);

    let mut out = vec![0.0f32; CLIP_SAMPLES];
    if len <= CLIP_SAMPLES {
        let left = (CLIP_SAMPLES - len) / 2;
        out[left..left + len].copy_from_slice(&source.samples);
        fade_edges(&mut out[left..left + len]);
        return Ok(Standardized {
            clip: AudioClip::mono(out, CANONICAL_RATE),
            source_start_s: -(left as f64) / fs,
            truncated: false,
        });
    }

    let max_start = len - CLIP_SAMPLES;
    let mid = (es + ee) / 2;
    let centred = mid.saturating_sub(CLIP_SAMPLES / 2).min(max_start);
    let truncated = ee - es > CLIP_SAMPLES;
    let start = if truncated {
        log::warn!(
            "event {:.3}-{:.3} s is longer than 3 s; truncated around its midpoint",
            event.start_s,
            event.end_s
        );
        centred
    } else {
        // keep the fades off the event when there is room
        let range = |margin: usize| {
            let lo = (ee + margin).saturating_sub(CLIP_SAMPLES);
            let hi = es.saturating_sub(margin).min(max_start);
            (lo <= hi).then_some((lo, hi))
        };
        let (lo, hi) = range(FADE_SAMPLES)
            .or_else(|| range(0))
            .expect("an event shorter than the clip always fits");
        let start = centred.clamp(lo, hi);
        snap(start, lo, hi, regions, fs).unwrap_or(start)
    };

    out.copy_from_slice(&source.samples[start..start + CLIP_SAMPLES]);
    fade_edges(&mut out);
    Ok(Standardized {
        clip: AudioClip::mono(out, CANONICAL_RATE),
        source_start_s: start as f64 / fs,
        truncated,
    })
}

/// Nearest window start within the snap tolerance whose first or last cut
/// lands on a region edge.
fn snap(start: usize, lo: usize, hi: usize, regions: &[SpeechRegion], fs: f64) -> Option<usize> {
    regions
        .iter()
        .flat_map(|r| [r.start_s, r.end_s])
        .map(|t| (t * fs).round() as i64)
        .flat_map(|b| [b, b - CLIP_SAMPLES as i64])
        .filter(|&c| c >= lo as i64 && c <= hi as i64)
        .filter(|&c| (c - start as i64).unsigned_abs() as usize <= SNAP_SAMPLES)
        .min_by_key(|&c| ((c - start as i64).abs(), c))
        .map(|c| c as usize)
}

/// Raised-cosine fade-in over the first and fade-out over the last
/// [`FADE_SAMPLES`] samples.
fn fade_edges(x: &mut [f32]) {
    let n = FADE_SAMPLES.min(x.len() / 2);
    let len = x.len();
    for i in 0..n {
        let g = (0.5 - 0.5 * (PI * i as f64 / n as f64).cos()) as f32;
        x[i] *= g;
        x[len - 1 - i] *= g;
    }
}
