//! Turning long annotated recordings into standardized 3 s clips.

pub mod labels;
pub mod manifest;
pub mod standardize;
pub mod vad;

pub use labels::{format_label_file, parse_label_file, DisfluencyType, LabelEvent};
pub use manifest::{
    build_manifest, curate_corpus, read_manifest, write_manifest, ClipRecord, Corpus,
    CurationReport, Fluency, Manifest, Rejection,
};
pub use standardize::{standardize_clip, standardize_with_regions, Standardized, CLIP_SAMPLES};
pub use vad::{detect_voice_activity, SpeechRegion, VadParams};
