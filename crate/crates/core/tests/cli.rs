use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use fedrec_core::experiment::ExperimentConfig;
use fedrec_core::report;

fn fedrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let out = fedrec(args);
    assert!(
        out.status.success(),
        "fedrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(config: &Path, out: &Path, seed: &str) {
    let (config, out) = (config.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["prepare", "central", "fed", "compare"] {
        run_ok(&[cmd, "--config", config, "--out", out, "--seed", seed]);
    }
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.federated.rounds = 5;
    cfg.central.num_rounds = 20;
    cfg
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&config, &a, "7");
    pipeline(&config, &b, "7");
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (path, bytes) in &sa {
        let other = &sb[path];
        if path.file_name().unwrap() == report::SUMMARY_FILE
            || path.file_name().unwrap() == "comparison.json"
        {
            // Embedded configs record the output directory.
            let strip = |bytes: &[u8], root: &Path| {
                String::from_utf8_lossy(bytes).replace(root.to_str().unwrap(), "")
            };
            assert_eq!(
                strip(bytes, &a),
                strip(other, &b),
                "{} differs",
                path.display()
            );
        } else {
            assert_eq!(bytes, other, "{} differs", path.display());
        }
    }
}

#[test]
fn different_seed_changes_histories() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&config, &a, "1");
    pipeline(&config, &b, "2");
    let h = |root: &Path| fs::read(root.join("fed/fedavg/history.csv")).unwrap();
    assert_ne!(h(&a), h(&b));
}

#[test]
fn missing_config_exits_with_code_2() {
    let out = fedrec(&["prepare", "--config", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not/here.toml"));
}

#[test]
fn invalid_config_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[federated]\nrounds = \"many\"\n").unwrap();
    let out = fedrec(&["fed", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fed_before_prepare_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config());
    let out = fedrec(&[
        "fed",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("empty").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn outputs_cover_every_strategy_and_feature() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let config = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("run");
    pipeline(&config, &out, "42");

    let runs: Vec<String> = cfg.strategies().iter().map(|s| s.run_name()).collect();
    assert_eq!(runs.len(), 4);
    for run in &runs {
        let dir = out.join("fed").join(run);
        let history = report::read_history(&dir.join(report::HISTORY_FILE)).unwrap();
        assert_eq!(history.len(), 5);
        let summary = report::read_summary(&dir).unwrap();
        assert_eq!(&summary.run, run);
        assert!(dir.join("model.fedrec").exists());
    }

    let importance = fs::read_to_string(out.join("central/importance.csv")).unwrap();
    for feature in fedrec_core::boost::FEATURE_NAMES {
        assert!(
            importance.contains(feature),
            "{feature} missing from importance table"
        );
    }
    assert_eq!(importance.lines().count(), 6);

    let comparison = fs::read_to_string(out.join("comparison.txt")).unwrap();
    for run in runs.iter().chain(std::iter::once(&"central".to_string())) {
        assert!(comparison.contains(run.as_str()));
    }
}

#[test]
fn central_best_round_is_history_argmax() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("run");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    run_ok(&["prepare", "--config", c, "--out", o]);
    run_ok(&["central", "--config", c, "--out", o]);

    let dir = out.join("central");
    let history = report::read_history(&dir.join(report::HISTORY_FILE)).unwrap();
    let summary = report::read_summary(&dir).unwrap();
    let best = history
        .iter()
        .fold(
            None::<&fedrec_core::metrics::RoundMetrics>,
            |best, r| match best {
                Some(b) if b.f1 >= r.f1 => Some(b),
                _ => Some(r),
            },
        )
        .unwrap();
    assert_eq!(summary.best_round, Some(best.round));
    assert_eq!(summary.best_f1, Some(best.f1));
    assert_eq!(summary.kind, "central");
}

#[test]
fn eval_scores_a_saved_model() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("run");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    run_ok(&["prepare", "--config", c, "--out", o]);
    run_ok(&["fed", "--config", c, "--out", o]);
    let model = out.join("fed/fedavg/model.fedrec");
    let res = fedrec(&[
        "eval",
        "--config",
        c,
        "--out",
        o,
        "--model",
        model.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("f1="));
}

#[test]
fn synth_writes_interaction_log() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("run");
    run_ok(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("interactions.csv")).unwrap();
    assert!(text.starts_with("user_id,skill_id,correct\n"));
    assert!(text.lines().count() > 50 * 60);
}

#[test]
fn interrupted_fed_run_leaves_no_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.federated.rounds = 100_000;
    cfg.federated.strategies.truncate(1);
    let config = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("run");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    run_ok(&["prepare", "--config", c, "--out", o]);

    let dir = out.join("fed/fedavg");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(report::SUMMARY_FILE), "{}").unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_fedrec"))
        .args(["fed", "--config", c, "--out", o])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let history = dir.join(report::HISTORY_FILE);
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let rows = fs::read_to_string(&history)
            .map(|t| t.lines().count())
            .unwrap_or(0);
        if rows >= 4 || Instant::now() > deadline {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(
        !dir.join(report::SUMMARY_FILE).exists(),
        "stale summary survived"
    );
    let rows = report::read_history(&history).unwrap();
    assert!(rows.len() >= 3);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.round, i + 1);
    }
}
