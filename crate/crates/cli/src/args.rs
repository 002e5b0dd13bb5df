use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dysflow::curation::Corpus;
use dysflow::experiment::Task;
use dysflow::features::FeatureKind;
use dysflow::sdc::SdcConfig;

#[derive(Debug, Parser)]
#[command(
    name = "dysflow",
    version,
    about = "Typical vs. atypical disfluency classification"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Worker threads for curation and feature extraction [default: all cores]
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Seeds the split and training; overrides the config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [ztw], [perceptual], [frame], [sdc], [tdnn], [train], [split] and [vad] sections
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output (-v debug, -vv trace)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut labelled recordings into 3 s clips and write manifest.jsonl
    Curate(CurateArgs),
    /// Compute static cepstra for every clip of a manifest as FTR1 files
    Extract(ExtractArgs),
    /// Train and test one task with one feature and SDC configuration
    Train(TrainArgs),
    /// Train and test every N-d-p-K configuration of a grid
    Sweep(SweepArgs),
}

fn parse_corpus(s: &str) -> Result<Corpus, String> {
    s.parse().map_err(|e: dysflow::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: dysflow::Error| e.to_string())
}

fn parse_feature(s: &str) -> Result<FeatureKind, String> {
    s.parse().map_err(|e: dysflow::Error| e.to_string())
}

fn parse_sdc(s: &str) -> Result<SdcConfig, String> {
    s.parse().map_err(|e: dysflow::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Directory of <speaker>.wav recordings
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory of <speaker>.txt label files
    #[arg(long, value_name = "DIR")]
    pub labels: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// tisa, ied or ied-e
    #[arg(long, value_parser = parse_corpus)]
    pub corpus: Corpus,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// pe-ztwcc, ztwcc, mfcc or plp
    #[arg(long, value_parser = parse_feature)]
    pub feature: FeatureKind,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// repetition, filled-pause or prolongation
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long, value_parser = parse_feature, default_value = "pe-ztwcc")]
    pub feature: FeatureKind,
    /// N-d-p-K, e.g. 13-2-3-6 [default: from config, else 13-1-3-7]
    #[arg(long, value_parser = parse_sdc)]
    pub sdc: Option<SdcConfig>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Feature cache [default: $DYSFLOW_CACHE_DIR, else <out>/cache]
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long, value_parser = parse_feature, default_value = "pe-ztwcc")]
    pub feature: FeatureKind,
    /// Axis values, e.g. `d=1,2,3 K=5,6,7`; an omitted axis keeps its default
    #[arg(long, num_args = 1.., value_parser = parse_axis)]
    pub grid: Vec<GridAxis>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GridAxis {
    Delay(Vec<usize>),
    Blocks(Vec<usize>),
}

fn parse_axis(s: &str) -> Result<GridAxis, String> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| format!("expected d=... or K=..., got '{s}'"))?;
    let values: Vec<usize> = values
        .split(',')
        .map(|v| v.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| format!("'{s}' needs a comma-separated list of positive integers"))?;
    match name.trim() {
        "d" => Ok(GridAxis::Delay(values)),
        "K" | "k" => Ok(GridAxis::Blocks(values)),
        other => Err(format!("unknown grid axis '{other}' (d or K)")),
    }
}

impl SweepArgs {
    /// `13-d-p-K` over the requested axes; `p` comes from the configuration.
    pub fn grid(&self, shift: usize) -> Vec<SdcConfig> {
        let mut delays = vec![1, 2, 3];
        let mut blocks = vec![5, 6, 7];
        for axis in &self.grid {
            match axis {
                GridAxis::Delay(v) => delays = v.clone(),
                GridAxis::Blocks(v) => blocks = v.clone(),
            }
        }
        delays
            .iter()
            .flat_map(|&d| blocks.iter().map(move |&k| SdcConfig::new(d, shift, k)))
            .collect()
    }
}
