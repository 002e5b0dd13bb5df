//! Task definitions, speaker-disjoint splits, cached feature extraction and
//! the train/evaluate/sweep drivers.

mod cache;
mod run;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::FrameConfig;
use crate::curation::{ClipRecord, DisfluencyType, Fluency};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::perceptual::PerceptualConfig;
use crate::sdc::SdcConfig;
use crate::tdnn::{TdnnConfig, TrainConfig};
use crate::ztw::ZtwConfig;

pub use crate::metrics::{compute_metrics, Metrics};
pub use cache::{CacheStatus, FeatureCache, CACHE_DIR_ENV};
pub use run::{
    default_grid, prepare_task, read_summary, run_prepared, run_task, sweep_sdc, task_mean_f1,
    update_summary, PartitionSummary, RunOutcome, RunReport, SummaryRow, SweepReport, TaskData,
};
pub use split::{make_split, Split, SplitSpec};

/// One binary typical-vs-atypical task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Word, part-word and phrase repetitions pooled.
    Repetition,
    FilledPause,
    Prolongation,
}

impl Task {
    pub const ALL: [Task; 3] = [Self::Repetition, Self::FilledPause, Self::Prolongation];

    pub fn slug(self) -> &'static str {
        match self {
            Self::Repetition => "repetition",
            Self::FilledPause => "filled-pause",
            Self::Prolongation => "prolongation",
        }
    }

    pub fn includes(self, dtype: DisfluencyType) -> bool {
        match self {
            Self::Repetition => dtype.is_repetition(),
            Self::FilledPause => dtype == DisfluencyType::FilledPause,
            Self::Prolongation => dtype == DisfluencyType::Prolongation,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|t| t.slug() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown task '{s}' (repetition, filled-pause, prolongation)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub record: ClipRecord,
    /// True for atypical (stuttered) clips.
    pub label: bool,
}

/// Clips of `task`'s disfluency types, labelled atypical for TISA and
/// typical for IED/IED-E. Fails if either class ends up empty.
pub fn select_task_clips(records: &[ClipRecord], task: Task) -> Result<Vec<LabeledClip>> {
    let clips: Vec<LabeledClip> = records
        .iter()
        .filter(|r| task.includes(r.dtype))
        .map(|r| LabeledClip {
            record: r.clone(),
            label: r.fluency == Fluency::Atypical,
        })
        .collect();
    let pos = clips.iter().filter(|c| c.label).count();
    if pos == 0 || pos == clips.len() {
        return Err(Error::Dataset(format!(
            "task {task} has {pos} atypical and {} typical clips; both classes are required",
            clips.len() - pos
        )));
    }
    Ok(clips)
}

/// Every tunable setting of an experiment. Each field is one section of the
/// CLI's TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub ztw: ZtwConfig,
    pub perceptual: PerceptualConfig,
    pub frame: FrameConfig,
    pub sdc: SdcConfig,
    pub tdnn: TdnnConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl ExperimentConfig {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            ztw: self.ztw.clone(),
            perceptual: self.perceptual.clone(),
            frame: self.frame.clone(),
        }
    }

    /// Seeds both the split and the training run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.split.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sdc.validate()?;
        self.train.validate()?;
        self.split.validate()
    }
}
