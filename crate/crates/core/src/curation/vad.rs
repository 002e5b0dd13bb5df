use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::ztw::ms_to_samples;

/// Energy VAD settings. A frame is speech when its log energy is more than
/// `-threshold_db` relative to the loudest frame of the clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VadParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub threshold_db: f64,
    /// Speech runs separated by at most this many non-speech frames merge.
    pub hangover_frames: usize,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            frame_ms: 30.0,
            hop_ms: 10.0,
            threshold_db: 35.0,
            hangover_frames: 5,
        }
    }
}

impl VadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0 && self.threshold_db > 0.0) {
            return Err(Error::Config(
                "VAD frame_ms, hop_ms and threshold_db must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A speech region in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechRegion {
    pub start_s: f64,
    pub end_s: f64,
}

/// Sorted, disjoint speech regions of a mono clip. Silence gives an empty list.
pub fn detect_voice_activity(clip: &AudioClip, params: &VadParams) -> Result<Vec<SpeechRegion>> {
    params.validate()?;
    if clip.channels != 1 {
        return Err(Error::UnsupportedAudio("VAD expects mono audio".into()));
    }
    let fs = clip.sample_rate;
    let frame = ms_to_samples(params.frame_ms, fs, "VAD frame")?;
    let hop = ms_to_samples(params.hop_ms, fs, "VAD hop")?;
    let x = &clip.samples;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let n_frames = if x.len() >= frame {
        (x.len() - frame) / hop + 1
    } else {
        1
    };
    let energy_db: Vec<f64> = (0..n_frames)
        .map(|f| {
            let s = &x[f * hop..(f * hop + frame).min(x.len())];
            let e = s.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / s.len() as f64;
            if e > 0.0 {
                10.0 * e.log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let peak = energy_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Ok(Vec::new());
    }
    let gate = peak - params.threshold_db;

    // runs of speech frames as inclusive (first, last) frame indices
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (f, &e) in energy_db.iter().enumerate() {
        if e <= gate {
            continue;
        }
        match runs.last_mut() {
            Some((_, last)) if f - *last - 1 <= params.hangover_frames => *last = f,
            _ => runs.push((f, f)),
        }
    }

    // Boundaries are refined inside the first and last speech frames to the
    // first and last 1 ms block above the gate; a frame is flagged as soon
    // as a few milliseconds of it overlap speech, so frame edges alone
    // would place onsets almost a frame early.
    let block = (fs as usize / 1000).max(1);
    let gate_power = 10f64.powf(gate / 10.0);
    let loud = |a: usize| {
        let s = &x[a..(a + block).min(x.len())];
        s.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / s.len() as f64 > gate_power
    };
    let frame_span = |f: usize| {
        let end = if f + 1 == n_frames {
            x.len()
        } else {
            (f * hop + frame).min(x.len())
        };
        (f * hop, end)
    };
    let onset = |f: usize| {
        let (a, b) = frame_span(f);
        (a..b).step_by(block).find(|&i| loud(i)).unwrap_or(a)
    };
    let offset = |f: usize| {
        let (a, b) = frame_span(f);
        let last = (a..b).step_by(block).rev().find(|&i| loud(i));
        last.map_or(b, |i| (i + block).min(x.len()))
    };
    let to_s = |samples: usize| samples as f64 / f64::from(fs);
    let mut regions: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for (first, last) in runs {
        let (start, end) = (onset(first), offset(last));
        match regions.last_mut() {
            // refinement can make neighbouring frame windows touch
            Some(prev) if start <= prev.1 => prev.1 = prev.1.max(end),
            _ => regions.push((start, end)),
        }
    }
    Ok(regions
        .into_iter()
        .filter(|r| r.1 > r.0)
        .map(|(a, b)| SpeechRegion {
            start_s: to_s(a),
            end_s: to_s(b),
        })
        .collect())
}
