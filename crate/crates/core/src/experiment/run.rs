use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{config_hash, CacheStatus, FeatureCache};
use super::split::{make_split, Split};
use super::{select_task_clips, ExperimentConfig, LabeledClip, Task};
use crate::error::{Error, Result};
use crate::features::{CepstralMatrix, FeatureKind};
use crate::metrics::Metrics;
use crate::sdc::{sdc_features, SdcConfig};
use crate::tdnn::{evaluate, save_checkpoint, train, Dataset, EpochRecord, TdnnModel};

/// A task's split with the static cepstra of every clip, ready to be
/// stacked and trained under any SDC configuration.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: Task,
    pub kind: FeatureKind,
    pub split: Split,
    /// Cepstra for train, val and test, aligned with the split's clips.
    pub cepstra: [Vec<CepstralMatrix>; 3],
    pub feature_config_hash: String,
    /// How many clips were served from the cache.
    pub cache_hits: usize,
}

/// Selects, splits and extracts (through `cache`) the clips of `task`.
/// Clip paths are resolved against `manifest_dir`.
pub fn prepare_task(
    manifest_dir: &Path,
    records: &[crate::curation::ClipRecord],
    task: Task,
    kind: FeatureKind,
    cfg: &ExperimentConfig,
    cache: &FeatureCache,
) -> Result<TaskData> {
    cfg.validate()?;
    let clips = select_task_clips(records, task)?;
    let split = make_split(&clips, &cfg.split)?;
    let features = cfg.features();
    let extract = |part: &[LabeledClip]| -> Result<Vec<(CepstralMatrix, CacheStatus)>> {
        part.par_iter()
            .map(|c| {
                cache.load_or_compute(&manifest_dir.join(&c.record.clip_path), kind, &features)
            })
            .collect()
    };
    let mut hits = 0;
    let mut parts = Vec::with_capacity(3);
    for (_, part) in split.partitions() {
        let done = extract(part)?;
        hits += done.iter().filter(|d| d.1 == CacheStatus::Hit).count();
        parts.push(done.into_iter().map(|d| d.0).collect::<Vec<_>>());
    }
    let [train, val, test]: [Vec<CepstralMatrix>; 3] = parts.try_into().expect("three partitions");
    log::info!(
        "{task}/{kind}: {} train, {} val, {} test clips ({hits} from cache)",
        train.len(),
        val.len(),
        test.len()
    );
    Ok(TaskData {
        task,
        kind,
        split,
        cepstra: [train, val, test],
        feature_config_hash: config_hash(&(kind, &features)),
        cache_hits: hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub clips: usize,
    pub speakers: usize,
    pub atypical: usize,
}

impl PartitionSummary {
    fn of(clips: &[LabeledClip]) -> Self {
        Self {
            clips: clips.len(),
            speakers: Split::speakers(clips).len(),
            atypical: clips.iter().filter(|c| c.label).count(),
        }
    }
}

/// Everything a run reports. Contains no paths or timestamps, so equal
/// inputs give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: Task,
    pub feature: FeatureKind,
    pub n_d_p_k: String,
    pub seed: u64,
    pub split_seed: u64,
    pub config_hash: String,
    pub feature_config_hash: String,
    pub input_frames: usize,
    pub input_width: usize,
    pub train: PartitionSummary,
    pub val: PartitionSummary,
    pub test: PartitionSummary,
    /// Metrics on the held-out test speakers.
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub model: TdnnModel<f32>,
    /// Report and checkpoint locations when an output directory was given.
    pub report_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

fn stack(cepstra: &[CepstralMatrix], clips: &[LabeledClip], sdc: &SdcConfig) -> Result<Dataset> {
    let inputs = cepstra
        .iter()
        .map(|c| sdc_features(c, sdc).map(|f| f.values))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(inputs, clips.iter().map(|c| c.label).collect())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Stacks SDC features under `cfg.sdc`, trains a TDNN sized to them and
/// scores it on the test partition. With `out_dir`, writes
/// `<out>/<task>/<feature>/<N-d-p-K>.json` and a `.tdn` checkpoint beside it.
pub fn run_prepared(
    data: &TaskData,
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let split = &data.split;
    let [train_c, val_c, test_c] = &data.cepstra;
    let train_set = stack(train_c, &split.train, &cfg.sdc)?;
    let val_set = stack(val_c, &split.val, &cfg.sdc)?;
    let test_set = stack(test_c, &split.test, &cfg.sdc)?;
    if test_set.is_empty() {
        return Err(Error::Dataset("test partition is empty".into()));
    }
    let frames = train_set.inputs[0].rows();
    if let Some(x) = [&train_set, &val_set, &test_set]
        .iter()
        .flat_map(|d| &d.inputs)
        .find(|x| x.rows() != frames)
    {
        return Err(Error::Shape(format!(
            "clips must share a frame count; found {frames} and {}",
            x.rows()
        )));
    }

    let mut cfg = cfg.clone();
    cfg.tdnn.input_frames = frames;
    cfg.tdnn.input_width = cfg.sdc.width();
    let model = TdnnModel::init(&cfg.tdnn, cfg.train.seed)?;
    let (model, history) = train(model, &train_set, &val_set, &cfg.train)?;
    let (metrics, _, _) = evaluate(&model, &test_set)?;
    let best = history
        .iter()
        .rev()
        .find(|h| h.improved)
        .expect("the first epoch always improves");

    let report = RunReport {
        task: data.task,
        feature: data.kind,
        n_d_p_k: cfg.sdc.to_string(),
        seed: cfg.train.seed,
        split_seed: cfg.split.seed,
        config_hash: config_hash(&(data.kind, &cfg)),
        feature_config_hash: data.feature_config_hash.clone(),
        input_frames: frames,
        input_width: cfg.tdnn.input_width,
        train: PartitionSummary::of(&split.train),
        val: PartitionSummary::of(&split.val),
        test: PartitionSummary::of(&split.test),
        metrics,
        best_epoch: best.epoch,
        best_val_f1: best.val_f1,
        history,
    };
    log::info!(
        "{}/{}/{}: test precision {:.4} recall {:.4} f1 {:.4}",
        report.task,
        report.feature,
        report.n_d_p_k,
        metrics.precision,
        metrics.recall,
        metrics.f1
    );

    let (mut report_path, mut checkpoint_path) = (None, None);
    if let Some(out) = out_dir {
        let dir = out.join(data.task.slug()).join(data.kind.slug());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let json = dir.join(format!("{}.json", report.n_d_p_k));
        let ckpt = dir.join(format!("{}.tdn", report.n_d_p_k));
        write_json(&json, &report)?;
        save_checkpoint(&model, &ckpt)?;
        report_path = Some(json);
        checkpoint_path = Some(ckpt);
    }
    Ok(RunOutcome {
        report,
        model,
        report_path,
        checkpoint_path,
    })
}

/// [`prepare_task`] followed by [`run_prepared`].
pub fn run_task(
    manifest_dir: &Path,
    records: &[crate::curation::ClipRecord],
    task: Task,
    kind: FeatureKind,
    cfg: &ExperimentConfig,
    cache: &FeatureCache,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let data = prepare_task(manifest_dir, records, task, kind, cfg, cache)?;
    run_prepared(&data, cfg, out_dir)
}

/// `13-d-3-K` for d in 1..=3 and K in 5..=7.
pub fn default_grid() -> Vec<SdcConfig> {
    (1..=3)
        .flat_map(|d| (5..=7).map(move |k| SdcConfig::new(d, 3, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub task: Task,
    pub feature: FeatureKind,
    pub seed: u64,
    pub rows: Vec<RunReport>,
    /// Index into `rows` of the highest test F1 (earliest on ties).
    pub best: usize,
}

/// Runs every configuration in `grid` on the same split and seed. With
/// `out_dir`, writes each run's report, `<task>/<feature>/sweep.json` and
/// merges the rows into `<out>/summary.csv`.
pub fn sweep_sdc(
    data: &TaskData,
    grid: &[SdcConfig],
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("SDC grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for sdc in grid {
        let mut c = cfg.clone();
        c.sdc = *sdc;
        rows.push(run_prepared(data, &c, out_dir)?.report);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.metrics.f1 > rows[best].metrics.f1 {
            best = i;
        }
    }
    let report = SweepReport {
        task: data.task,
        feature: data.kind,
        seed: cfg.train.seed,
        rows,
        best,
    };
    if let Some(out) = out_dir {
        let dir = out.join(data.task.slug()).join(data.kind.slug());
        write_json(&dir.join("sweep.json"), &report)?;
        update_summary(&out.join("summary.csv"), &report.rows)?;
    }
    Ok(report)
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub feature: String,
    pub n_d_p_k: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub seed: u64,
    /// Highest F1 among this task's rows.
    pub best: bool,
}

impl From<&RunReport> for SummaryRow {
    fn from(r: &RunReport) -> Self {
        Self {
            task: r.task.slug().into(),
            feature: r.feature.slug().into(),
            n_d_p_k: r.n_d_p_k.clone(),
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            f1: r.metrics.f1,
            accuracy: r.metrics.accuracy,
            seed: r.seed,
            best: false,
        }
    }
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(Error::from)
}

/// Adds `reports` to the summary at `path`, replacing rows with the same
/// task, feature and N-d-p-K, then re-flags the best row of each task.
pub fn update_summary(path: &Path, reports: &[RunReport]) -> Result<Vec<SummaryRow>> {
    let mut rows = if path.exists() {
        read_summary(path)?
    } else {
        Vec::new()
    };
    for r in reports {
        let new = SummaryRow::from(r);
        rows.retain(|o| {
            (&o.task, &o.feature, &o.n_d_p_k) != (&new.task, &new.feature, &new.n_d_p_k)
        });
        rows.push(new);
    }
    rows.sort_by(|a, b| (&a.task, &a.feature, &a.n_d_p_k).cmp(&(&b.task, &b.feature, &b.n_d_p_k)));
    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let b = best.entry(r.task.clone()).or_insert(i);
        if r.f1 > rows[*b].f1 {
            *b = i;
        }
    }
    for (i, r) in rows.iter_mut().enumerate() {
        r.best = best[&r.task] == i;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// Unweighted mean over tasks of each task's best F1.
pub fn task_mean_f1(rows: &[SummaryRow]) -> Option<f64> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in rows {
        let b = best.entry(&r.task).or_insert(r.f1);
        *b = b.max(r.f1);
    }
    (!best.is_empty()).then(|| best.values().sum::<f64>() / best.len() as f64)
}
