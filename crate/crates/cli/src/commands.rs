use std::io::Write;
use std::path::{Path, PathBuf};

use dysflow::curation::{curate_corpus, read_manifest, DisfluencyType};
use dysflow::experiment::{
    prepare_task, run_prepared, sweep_sdc, task_mean_f1, update_summary, CacheStatus, FeatureCache,
};
use dysflow::Result;
use rayon::prelude::*;

use crate::args::{CurateArgs, ExtractArgs, SweepArgs, TrainArgs};
use crate::config::FileConfig;

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn cache_for(explicit: Option<&Path>, out: &Path) -> FeatureCache {
    match explicit {
        Some(dir) => FeatureCache::new(dir),
        None => FeatureCache::from_env_or(out.join("cache")),
    }
}

pub fn curate(a: &CurateArgs, cfg: &FileConfig, out: &mut impl Write) -> Result<()> {
    let report = curate_corpus(&a.input, &a.labels, &a.out, a.corpus, &cfg.vad)?;
    for r in &report.manifest.rejected {
        log::warn!("rejected {}: {}", r.path.display(), r.reason);
    }
    if report.truncated_events > 0 {
        log::warn!(
            "{} events longer than 3 s were truncated",
            report.truncated_events
        );
    }
    log::info!(
        "{} clips from {} recordings in {}",
        report.manifest.records.len(),
        report.sources,
        a.out.display()
    );
    let counts = report.manifest.counts();
    let _ = writeln!(out, "{:<20} {:>6}", format!("{} type", a.corpus), "clips");
    for t in DisfluencyType::ALL {
        let _ = writeln!(
            out,
            "{:<20} {:>6}",
            t.name(),
            counts.get(&t).copied().unwrap_or(0)
        );
    }
    let _ = writeln!(out, "{:<20} {:>6}", "Total", report.manifest.records.len());
    Ok(())
}

pub fn extract(a: &ExtractArgs, cfg: &FileConfig, out: &mut impl Write) -> Result<()> {
    let records = read_manifest(&a.manifest)?;
    let base = manifest_dir(&a.manifest);
    let cache = FeatureCache::new(&a.out);
    let features = cfg.features();
    let statuses: Vec<CacheStatus> = records
        .par_iter()
        .map(|r| {
            cache
                .load_or_compute(&base.join(&r.clip_path), a.feature, &features)
                .map(|(_, s)| s)
        })
        .collect::<Result<_>>()?;
    let count = |s: CacheStatus| statuses.iter().filter(|&&x| x == s).count();
    let (hit, computed, redone) = (
        count(CacheStatus::Hit),
        count(CacheStatus::Computed),
        count(CacheStatus::Recomputed),
    );
    log::info!(
        "{}: computed {computed}, recomputed {redone}, skipped {hit} up to date",
        a.feature
    );
    let _ = writeln!(
        out,
        "{} clips: {computed} computed, {redone} recomputed, {hit} skipped",
        records.len()
    );
    Ok(())
}

pub fn train(a: &TrainArgs, cfg: &FileConfig, out: &mut impl Write) -> Result<()> {
    let records = read_manifest(&a.manifest)?;
    let mut exp = cfg.experiment();
    if let Some(sdc) = a.sdc {
        exp.sdc = sdc;
    }
    let cache = cache_for(a.cache.as_deref(), &a.out);
    let data = prepare_task(
        &manifest_dir(&a.manifest),
        &records,
        a.task,
        a.feature,
        &exp,
        &cache,
    )?;
    let run = run_prepared(&data, &exp, Some(&a.out))?;
    let rows = update_summary(
        &a.out.join("summary.csv"),
        std::slice::from_ref(&run.report),
    )?;
    if let Some(p) = &run.report_path {
        log::info!("report written to {}", p.display());
    }
    let m = &run.report.metrics;
    let _ = writeln!(
        out,
        "{} {} {}: precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4}",
        run.report.task,
        run.report.feature,
        run.report.n_d_p_k,
        m.precision,
        m.recall,
        m.f1,
        m.accuracy
    );
    if let Some(mean) = task_mean_f1(&rows) {
        log::info!("mean of per-task best F1 in summary: {mean:.4}");
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs, cfg: &FileConfig, out: &mut impl Write) -> Result<()> {
    let records = read_manifest(&a.manifest)?;
    let exp = cfg.experiment();
    let grid = a.grid(exp.sdc.shift);
    let cache = cache_for(a.cache.as_deref(), &a.out);
    let data = prepare_task(
        &manifest_dir(&a.manifest),
        &records,
        a.task,
        a.feature,
        &exp,
        &cache,
    )?;
    let report = sweep_sdc(&data, &grid, &exp, Some(&a.out))?;
    let _ = writeln!(
        out,
        "{:<12} {:>9} {:>9} {:>9} {:>9}",
        "N-d-p-K", "precision", "recall", "f1", "accuracy"
    );
    for (i, r) in report.rows.iter().enumerate() {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4}{}",
            r.n_d_p_k,
            m.precision,
            m.recall,
            m.f1,
            m.accuracy,
            if i == report.best { "  *best" } else { "" }
        );
    }
    log::info!("summary written to {}", a.out.join("summary.csv").display());
    Ok(())
}
