use std::path::Path;

use dysflow::baseline::FrameConfig;
use dysflow::curation::VadParams;
use dysflow::experiment::ExperimentConfig;
use dysflow::experiment::SplitSpec;
use dysflow::features::FeatureConfig;
use dysflow::perceptual::PerceptualConfig;
use dysflow::sdc::SdcConfig;
use dysflow::tdnn::{TdnnConfig, TrainConfig};
use dysflow::ztw::ZtwConfig;
use serde::Deserialize;

/// The config file: one table per module, every key optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub ztw: ZtwConfig,
    pub perceptual: PerceptualConfig,
    pub frame: FrameConfig,
    pub sdc: SdcConfig,
    pub tdnn: TdnnConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub vad: VadParams,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> dysflow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| dysflow::Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| dysflow::Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn features(&self) -> FeatureConfig {
        self.experiment().features()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            ztw: self.ztw.clone(),
            perceptual: self.perceptual.clone(),
            frame: self.frame.clone(),
            sdc: self.sdc,
            tdnn: self.tdnn.clone(),
            train: self.train.clone(),
            split: self.split.clone(),
        }
    }
}
