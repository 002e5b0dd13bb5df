use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dysflow::audio::load_wav;
use dysflow::curation::read_manifest;
use dysflow::experiment::read_summary;
use dysflow::sdc::read_ftr;
use dysflow::synth::{generate_disfluency_corpus, generate_mini_corpus, DisfluencyCorpusSpec};

const TINY_MODEL: &str = r#"
[tdnn]
conv1 = { filters = 4, kernel = 3, dilation = 2 }
conv2 = { filters = 4, kernel = 3, dilation = 1 }
fc1_units = 8
fc2_units = 4

[train]
max_epochs = 2
"#;

fn dysflow(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dysflow"));
    cmd.env_remove("DYSFLOW_CACHE_DIR").env_remove("RUST_LOG");
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares against a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn assert_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn mini_corpus(root: &Path) -> (PathBuf, PathBuf, dysflow::synth::MiniCorpus) {
    let (audio, labels) = (root.join("audio"), root.join("labels"));
    let truth = generate_mini_corpus(&audio, &labels, 4, 11).unwrap();
    (audio, labels, truth)
}

#[test]
fn curate_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (audio, labels, truth) = mini_corpus(tmp.path());
    let out = tmp.path().join("clips");
    let o = dysflow(&[
        &"curate",
        &"--in",
        &audio,
        &"--labels",
        &labels,
        &"--out",
        &out,
        &"--corpus",
        &"tisa",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_golden("curate_counts.txt", &text(&o.stdout));
    let manifest = fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_golden("curate_manifest.jsonl", &manifest);

    let records = read_manifest(out.join("manifest.jsonl")).unwrap();
    let expected: usize = truth.expected_counts.values().sum();
    assert_eq!(records.len(), expected);
    assert_eq!(
        dysflow::curation::manifest::type_counts(&records),
        truth.expected_counts
    );
    for r in &records {
        let clip = load_wav(out.join(&r.clip_path)).unwrap();
        assert_eq!(
            (clip.frames(), clip.sample_rate, clip.channels),
            (48000, 16000, 1)
        );
    }
}

#[test]
fn curate_is_independent_of_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    let (audio, labels, _) = mini_corpus(tmp.path());
    let dirs: Vec<PathBuf> = ["1", "3"]
        .iter()
        .map(|jobs| {
            let out = tmp.path().join(format!("out{jobs}"));
            let o = dysflow(&[
                &"--jobs",
                jobs,
                &"curate",
                &"--in",
                &audio,
                &"--labels",
                &labels,
                &"--out",
                &out,
                &"--corpus",
                &"ied",
            ]);
            assert!(o.status.success(), "{}", text(&o.stderr));
            out
        })
        .collect();
    assert_eq!(dir_bytes(&dirs[0]), dir_bytes(&dirs[1]));
}

#[test]
fn curate_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = tmp.path().join("out");
    let o = dysflow(&[
        &"curate",
        &"--in",
        &empty,
        &"--labels",
        &empty,
        &"--out",
        &out,
        &"--corpus",
        &"tisa",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        text(&o.stderr).contains("no WAV files"),
        "{}",
        text(&o.stderr)
    );

    let o = dysflow(&[
        &"curate",
        &"--in",
        &empty,
        &"--labels",
        &empty,
        &"--out",
        &out,
        &"--corpus",
        &"uclass",
    ]);
    assert_eq!(o.status.code(), Some(64));
    let o = dysflow(&[&"frobnicate"]);
    assert_eq!(o.status.code(), Some(64));
    let o = dysflow(&[&"--help"]);
    assert_eq!(o.status.code(), Some(0));
}

fn small_corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    let spec = DisfluencyCorpusSpec {
        speakers_per_class: 4,
        clips_per_speaker: 3,
        seed: 5,
    };
    generate_disfluency_corpus(&dir, &spec).unwrap();
    dir.join("manifest.jsonl")
}

#[test]
fn extract_is_idempotent_and_repairs_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let out = tmp.path().join("ftr");
    let first = dysflow(&[
        &"extract",
        &"--manifest",
        &manifest,
        &"--feature",
        &"pe-ztwcc",
        &"--out",
        &out,
    ]);
    assert!(first.status.success(), "{}", text(&first.stderr));
    assert!(
        text(&first.stdout).contains("24 computed, 0 recomputed, 0 skipped"),
        "{}",
        text(&first.stdout)
    );

    let ftrs: Vec<PathBuf> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ftr"))
        .collect();
    assert_eq!(ftrs.len(), 24);
    for p in &ftrs {
        let m = read_ftr(p).unwrap();
        assert_eq!((m.rows(), m.cols()), (300, 13));
    }

    let again = dysflow(&[
        &"extract",
        &"--manifest",
        &manifest,
        &"--feature",
        &"pe-ztwcc",
        &"--out",
        &out,
    ]);
    assert!(again.status.success());
    assert!(
        text(&again.stderr).contains("computed 0, recomputed 0, skipped 24"),
        "{}",
        text(&again.stderr)
    );

    let before = fs::read(&ftrs[0]).unwrap();
    let mut bad = before.clone();
    bad[100] ^= 0xff;
    fs::write(&ftrs[0], bad).unwrap();
    let repaired = dysflow(&[
        &"extract",
        &"--manifest",
        &manifest,
        &"--feature",
        &"pe-ztwcc",
        &"--out",
        &out,
    ]);
    assert!(repaired.status.success());
    let log = text(&repaired.stderr);
    assert!(log.contains("corrupt") && log.contains("WARN"), "{log}");
    assert!(
        log.contains("computed 0, recomputed 1, skipped 23"),
        "{log}"
    );
    assert_eq!(fs::read(&ftrs[0]).unwrap(), before);
}

#[test]
fn extract_is_independent_of_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let outs: Vec<PathBuf> = ["1", "2"]
        .iter()
        .map(|jobs| {
            let out = tmp.path().join(format!("ftr{jobs}"));
            let o = dysflow(&[
                &"extract",
                &"--jobs",
                jobs,
                &"--manifest",
                &manifest,
                &"--feature",
                &"mfcc",
                &"--out",
                &out,
            ]);
            assert!(o.status.success(), "{}", text(&o.stderr));
            out
        })
        .collect();
    let a = dir_bytes(&outs[0]);
    assert_eq!(a.len(), 48);
    assert_eq!(a, dir_bytes(&outs[1]));
    for (name, bytes) in a.iter().filter(|(n, _)| n.ends_with(".ftr")) {
        let m = dysflow::sdc::decode_ftr(bytes, Path::new(name)).unwrap();
        assert_eq!(m.rows(), 298);
    }
}

#[test]
fn train_is_reproducible_and_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY_MODEL).unwrap();
    let cache = tmp.path().join("cache");
    let reports: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|run| {
            let out = tmp.path().join(run);
            let o = dysflow(&[
                &"train",
                &"--manifest",
                &manifest,
                &"--task",
                &"repetition",
                &"--feature",
                &"pe-ztwcc",
                &"--sdc",
                &"13-2-3-6",
                &"--seed",
                &"9",
                &"--out",
                &out,
                &"--config",
                &cfg,
                &"--cache",
                &cache,
            ]);
            assert!(o.status.success(), "{}", text(&o.stderr));
            let line = text(&o.stdout);
            assert!(
                line.starts_with("repetition pe-ztwcc 13-2-3-6: precision "),
                "{line}"
            );
            assert!(line.contains(" recall ") && line.contains(" f1 "));
            let dir = out.join("repetition/pe-ztwcc");
            assert!(dir.join("13-2-3-6.tdn").is_file());
            let summary = read_summary(&out.join("summary.csv")).unwrap();
            assert_eq!(summary.len(), 1);
            assert!(summary[0].best);
            assert_eq!(summary[0].seed, 9);
            fs::read(dir.join("13-2-3-6.json")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    let json: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(json["n_d_p_k"], "13-2-3-6");
    assert_eq!(json["input_width"], 91);
    assert_eq!(json["input_frames"], 300);
    assert_eq!(json["seed"], 9);
}

#[test]
fn train_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = dysflow(&[
        &"train",
        &"--manifest",
        &"m.jsonl",
        &"--task",
        &"repetition",
        &"--sdc",
        &"13-2-3",
        &"--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(64));
    let o = dysflow(&[
        &"train",
        &"--manifest",
        &"m.jsonl",
        &"--task",
        &"stammer",
        &"--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(64));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochs = 3\n").unwrap();
    let o = dysflow(&[
        &"train",
        &"--manifest",
        &"m.jsonl",
        &"--task",
        &"repetition",
        &"--out",
        &out,
        &"--config",
        &cfg,
    ]);
    assert_eq!(o.status.code(), Some(64));
    assert!(text(&o.stderr).contains("epochs"), "{}", text(&o.stderr));

    let o = dysflow(&[
        &"train",
        &"--manifest",
        &tmp.path().join("missing.jsonl"),
        &"--task",
        &"repetition",
        &"--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_grids_and_cache_override() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY_MODEL).unwrap();
    let env_cache = tmp.path().join("env-cache");

    let out = tmp.path().join("one");
    let o = Command::new(env!("CARGO_BIN_EXE_dysflow"))
        .env("DYSFLOW_CACHE_DIR", &env_cache)
        .args([
            "sweep",
            "--task",
            "repetition",
            "--grid",
            "d=2",
            "K=5",
            "--seed",
            "3",
        ])
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rows = read_summary(&out.join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].n_d_p_k, "13-2-3-5");
    assert!(rows[0].best);
    assert!(text(&o.stdout).contains("*best"));
    assert_eq!(fs::read_dir(&env_cache).unwrap().count(), 48);
    assert!(!out.join("cache").exists());

    let out = tmp.path().join("full");
    let o = dysflow(&[
        &"sweep",
        &"--manifest",
        &manifest,
        &"--task",
        &"repetition",
        &"--out",
        &out,
        &"--config",
        &cfg,
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rows = read_summary(&out.join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows.iter().filter(|r| r.best).count(), 1);
    let best = rows.iter().find(|r| r.best).unwrap();
    assert!(rows.iter().all(|r| r.f1 <= best.f1));
    let header = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(header.starts_with("task,feature,n_d_p_k,precision,recall,f1,accuracy,seed"));
    assert!(out.join("repetition/pe-ztwcc/sweep.json").is_file());
    assert_eq!(text(&o.stdout).lines().count(), 10);
}
