use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{canonicalize, load_wav, write_wav, WavEncoding, CANONICAL_RATE};
use crate::error::{Error, Result};

use super::labels::{parse_label_file, DisfluencyType};
use super::standardize::{standardize_with_regions, CLIP_SAMPLES};
use super::vad::{detect_voice_activity, VadParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Corpus {
    #[serde(rename = "TISA")]
    Tisa,
    #[serde(rename = "IED")]
    Ied,
    #[serde(rename = "IED_E")]
    IedE,
}

impl Corpus {
    pub fn fluency(self) -> Fluency {
        match self {
            Corpus::Tisa => Fluency::Atypical,
            Corpus::Ied | Corpus::IedE => Fluency::Typical,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Corpus::Tisa => "tisa",
            Corpus::Ied => "ied",
            Corpus::IedE => "ied-e",
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Corpus::Tisa => "TISA",
            Corpus::Ied => "IED",
            Corpus::IedE => "IED_E",
        })
    }
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "tisa" => Ok(Corpus::Tisa),
            "ied" => Ok(Corpus::Ied),
            "ied-e" => Ok(Corpus::IedE),
            _ => Err(Error::Config(format!(
                "unknown corpus '{s}' (tisa, ied, ied-e)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fluency {
    Typical,
    Atypical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    /// Relative to the manifest's directory.
    pub clip_path: String,
    pub speaker_id: String,
    pub corpus: Corpus,
    pub dtype: DisfluencyType,
    pub fluency: Fluency,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    pub rejected: Vec<Rejection>,
}

impl Manifest {
    pub fn counts(&self) -> BTreeMap<DisfluencyType, usize> {
        type_counts(&self.records)
    }
}

pub fn type_counts(records: &[ClipRecord]) -> BTreeMap<DisfluencyType, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.dtype).or_insert(0) += 1;
    }
    counts
}

/// Split `<speaker>_<dtype>_<index>` into speaker and type. Speaker ids may
/// themselves contain underscores.
pub fn parse_clip_name(stem: &str) -> Result<(String, DisfluencyType, usize)> {
    let bad = |why: &str| Error::Curation(format!("clip name '{stem}': {why}"));
    let mut parts = stem.rsplitn(3, '_');
    let (index, dtype, speaker) = match (parts.next(), parts.next(), parts.next()) {
        (Some(i), Some(d), Some(s)) if !s.is_empty() => (i, d, s),
        _ => return Err(bad("expected <speaker>_<type>_<index>")),
    };
    let index = index.parse().map_err(|_| bad("index is not a number"))?;
    let dtype = dtype.parse().map_err(|_| bad("unknown disfluency type"))?;
    Ok((speaker.to_string(), dtype, index))
}

pub fn clip_file_name(speaker: &str, dtype: DisfluencyType, index: usize) -> String {
    format!("{speaker}_{dtype}_{index:03}.wav")
}

fn sorted_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Index a directory of standardized clips. Files with unparseable names or
/// that are not 3 s of 16 kHz mono audio are rejected with a reason.
pub fn build_manifest(clip_dir: impl AsRef<Path>, corpus: Corpus) -> Result<Manifest> {
    let dir = clip_dir.as_ref();
    let mut manifest = Manifest::default();
    for path in sorted_wavs(dir)? {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let checked = parse_clip_name(stem).and_then(|(speaker, dtype, _)| {
            let clip = load_wav(&path)?;
            if !clip.is_canonical() || clip.frames() != CLIP_SAMPLES {
                return Err(Error::Curation(format!(
                    "expected {CLIP_SAMPLES} samples of 16 kHz mono, got {} frames at {} Hz x{}",
                    clip.frames(),
                    clip.sample_rate,
                    clip.channels
                )));
            }
            Ok(ClipRecord {
                clip_path: path.file_name().unwrap().to_string_lossy().into_owned(),
                speaker_id: speaker,
                corpus,
                dtype,
                fluency: corpus.fluency(),
                duration_s: clip.duration_s(),
            })
        });
        match checked {
            Ok(r) => manifest.records.push(r),
            Err(e) => manifest.rejected.push(Rejection {
                path: path.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(manifest)
}

pub fn write_manifest(records: &[ClipRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ClipRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.fluency != r.corpus.fluency() {
            return Err(Error::Dataset(format!(
                "{}:{}: fluency {:?} contradicts corpus {}",
                path.display(),
                i + 1,
                r.fluency,
                r.corpus
            )));
        }
        records.push(r);
    }
    Ok(records)
}

/// Clips cut from one directory of long recordings.
#[derive(Debug, Clone, Default)]
pub struct CurationReport {
    pub manifest: Manifest,
    pub sources: usize,
    pub truncated_events: usize,
}

/// Cut every labelled event of every recording in `in_dir` into a 3 s clip.
///
/// Recordings are `<speaker>.wav` with labels in `labels_dir/<speaker>.txt`.
/// Clips and `manifest.jsonl` are written to `out_dir`.
pub fn curate_corpus(
    in_dir: impl AsRef<Path>,
    labels_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    corpus: Corpus,
    vad: &VadParams,
) -> Result<CurationReport> {
    let (in_dir, labels_dir, out_dir) = (in_dir.as_ref(), labels_dir.as_ref(), out_dir.as_ref());
    vad.validate()?;
    let sources = sorted_wavs(in_dir)?;
    if sources.is_empty() {
        return Err(Error::Curation(format!(
            "no WAV files in {}",
            in_dir.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let truncated: Vec<usize> = sources
        .par_iter()
        .map(|src| -> Result<usize> {
            let speaker = src.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let label_path = labels_dir.join(format!("{speaker}.txt"));
            let text = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
            let events = parse_label_file(&text).map_err(|e| match e {
                Error::Label { line, message } => {
                    Error::Curation(format!("{} line {line}: {message}", label_path.display()))
                }
                other => other,
            })?;
            let audio = canonicalize(&load_wav(src)?)?;
            debug_assert_eq!(audio.sample_rate, CANONICAL_RATE);
            let regions = detect_voice_activity(&audio, vad)?;
            let mut next_index: BTreeMap<DisfluencyType, usize> = BTreeMap::new();
            let mut truncated = 0;
            for ev in &events {
                let out = standardize_with_regions(&audio, ev, &regions)?;
                truncated += usize::from(out.truncated);
                let idx = next_index.entry(ev.dtype).or_insert(0);
                let name = clip_file_name(speaker, ev.dtype, *idx);
                *idx += 1;
                write_wav(&out.clip, out_dir.join(name), WavEncoding::Pcm16)?;
            }
            Ok(truncated)
        })
        .collect::<Result<_>>()?;

    let manifest = build_manifest(out_dir, corpus)?;
    write_manifest(&manifest.records, out_dir.join("manifest.jsonl"))?;
    Ok(CurationReport {
        manifest,
        sources: sources.len(),
        truncated_events: truncated.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;

    fn write_clip(dir: &Path, name: &str, samples: usize) {
        let clip = AudioClip::mono(vec![0.1; samples], 16000);
        write_wav(&clip, dir.join(name), WavEncoding::Pcm16).unwrap();
    }

    #[test]
    fn two_file_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "spk01_FilledPause_000.wav", CLIP_SAMPLES);
        write_clip(dir.path(), "spk01_NoDisfluency_000.wav", CLIP_SAMPLES);
        let m = build_manifest(dir.path(), Corpus::Ied).unwrap();
        assert_eq!(m.records.len(), 2);
        assert!(m.rejected.is_empty());
        let c = m.counts();
        assert_eq!(c[&DisfluencyType::FilledPause], 1);
        assert_eq!(c[&DisfluencyType::NoDisfluency], 1);
        assert_eq!(m.records[0].duration_s, 3.0);
        assert_eq!(m.records[0].fluency, Fluency::Typical);
    }

    #[test]
    fn empty_dir_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            build_manifest(dir.path(), Corpus::Tisa).unwrap(),
            Manifest::default()
        );
        write_clip(dir.path(), "spk01_Hiccup_000.wav", CLIP_SAMPLES);
        write_clip(dir.path(), "spk01_Prolongation_000.wav", 16000);
        write_clip(dir.path(), "my_spk_Prolongation_001.wav", CLIP_SAMPLES);
        let m = build_manifest(dir.path(), Corpus::Tisa).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].speaker_id, "my_spk");
        assert_eq!(m.rejected.len(), 2);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![ClipRecord {
            clip_path: "a_Prolongation_000.wav".into(),
            speaker_id: "a".into(),
            corpus: Corpus::IedE,
            dtype: DisfluencyType::Prolongation,
            fluency: Fluency::Typical,
            duration_s: 3.0,
        }];
        let p = dir.path().join("m.jsonl");
        write_manifest(&recs, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"corpus\":\"IED_E\""), "{text}");
        assert_eq!(read_manifest(&p).unwrap(), recs);
        fs::write(&p, text.replace("Typical", "Atypical")).unwrap();
        assert!(read_manifest(&p).is_err());
    }

    #[test]
    fn corpus_tags() {
        assert_eq!("ied-e".parse::<Corpus>().unwrap(), Corpus::IedE);
        assert_eq!("TISA".parse::<Corpus>().unwrap(), Corpus::Tisa);
        assert!("sep28k".parse::<Corpus>().is_err());
        assert_eq!(Corpus::Tisa.fluency(), Fluency::Atypical);
    }
}
