use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisfluencyType {
    FilledPause,
    Prolongation,
    PartWordRepetition,
    PhraseRepetition,
    WordRepetition,
    NoDisfluency,
}

impl DisfluencyType {
    pub const ALL: [DisfluencyType; 6] = [
        Self::FilledPause,
        Self::Prolongation,
        Self::PartWordRepetition,
        Self::PhraseRepetition,
        Self::WordRepetition,
        Self::NoDisfluency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FilledPause => "FilledPause",
            Self::Prolongation => "Prolongation",
            Self::PartWordRepetition => "PartWordRepetition",
            Self::PhraseRepetition => "PhraseRepetition",
            Self::WordRepetition => "WordRepetition",
            Self::NoDisfluency => "NoDisfluency",
        }
    }

    pub fn is_repetition(self) -> bool {
        matches!(
            self,
            Self::PartWordRepetition | Self::PhraseRepetition | Self::WordRepetition
        )
    }
}

impl fmt::Display for DisfluencyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisfluencyType {
    type Err = Error;

    /// Case-insensitive; spaces, hyphens and underscores are ignored, so
    /// "filled pause" and "Part-Word Repetition" both parse.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Self::ALL
            .into_iter()
            .find(|t| t.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Curation(format!("unknown disfluency label '{s}'")))
    }
}

/// One annotated event, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub start_s: f64,
    pub end_s: f64,
    pub dtype: DisfluencyType,
}

impl LabelEvent {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Parse an Audacity label export (`start<TAB>end<TAB>label` per line).
///
/// Blank lines and Audacity's spectral-selection continuation lines (those
/// starting with a backslash) are skipped. Events come back sorted by start.
pub fn parse_label_file(text: &str) -> Result<Vec<LabelEvent>> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('\\') {
            continue;
        }
        let err = |message: String| Error::Label {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let time = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("invalid time '{s}'")))
        };
        let (start_s, end_s) = (time(fields[0])?, time(fields[1])?);
        if end_s <= start_s {
            return Err(err(format!("end {end_s} is not after start {start_s}")));
        }
        let dtype = fields[2]
            .trim()
            .parse::<DisfluencyType>()
            .map_err(|_| err(format!("unknown label '{}'", fields[2].trim())))?;
        events.push(LabelEvent {
            start_s,
            end_s,
            dtype,
        });
    }
    events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(events)
}

/// Inverse of [`parse_label_file`], with six decimals.
pub fn format_label_file(events: &[LabelEvent]) -> String {
    events
        .iter()
        .map(|e| format!("{:.6}\t{:.6}\t{}\n", e.start_s, e.end_s, e.dtype))
        .collect()
}
