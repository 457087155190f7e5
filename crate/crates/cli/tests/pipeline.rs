use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fareboost(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fareboost"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = fareboost(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn chain(out: &Path) {
    for args in [
        &["synth"][..],
        &["features"],
        &["train"],
        &["evaluate"],
        &["explain", "--od", "FRA-KUL", "--row", "7"],
        &["simulate"],
    ] {
        ok(out, args);
    }
}

#[test]
fn full_chain_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    chain(a.path());
    ok(b.path(), &["--jobs", "2", "synth"]);
    for args in [&["features"][..], &["train"], &["evaluate"], &["explain", "--od", "FRA-KUL", "--row", "7"], &["simulate"]] {
        let mut v = vec!["--jobs", "2"];
        v.extend_from_slice(args);
        ok(b.path(), &v);
    }

    let fa = files(a.path());
    for name in [
        "reports/comparison.csv",
        "reports/comparison_long.csv",
        "reports/revenue.csv",
        "reports/replications.csv",
        "reports/forecasts.csv",
        "reports/explain_FRA-KUL_7.txt",
        "reports/explain_FRA-KUL_7.csv",
        "models/FRA-KUL.json",
        "models/FRA-KUL_gain.csv",
        "models/FRA-KUL_rmse.csv",
        "features/FRA-KUL.csv",
        "data/scenario.toml",
    ] {
        assert!(fa.contains_key(Path::new(name)), "missing {name}");
    }
    let comparison = String::from_utf8(fa[Path::new("reports/comparison.csv")].clone()).unwrap();
    assert_eq!(comparison.lines().count(), 12);

    // Thread count must not change any byte.
    assert_eq!(fa, files(b.path()));

    for (name, bytes) in &fa {
        let text = String::from_utf8_lossy(bytes);
        if name.extension().is_some_and(|e| e == "json") {
            assert!(text.contains("\"config_hash\"") && text.contains("\"seed\""), "{name:?}");
        } else {
            let first = text.lines().next().unwrap();
            assert!(first.starts_with("# config_hash=") && first.contains(" seed="), "{name:?}: {first}");
        }
    }
}

#[test]
fn train_before_features_names_the_prerequisite() {
    let d = tempfile::tempdir().unwrap();
    let o = fareboost(d.path(), &["train"]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains("fareboost features"), "{err}");
}

#[test]
fn missing_upstream_artifacts_are_reported() {
    let d = tempfile::tempdir().unwrap();
    let o = fareboost(d.path(), &["features"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("fareboost synth"));

    let o = fareboost(d.path(), &["simulate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("fareboost synth"));
}

fn small_spec(dir: &Path) -> PathBuf {
    let path = dir.join("synth.toml");
    fs::write(
        &path,
        r#"seed = 7
n_pool_airlines = 8

[[markets]]
od = "AMS-LHR"
archetype = "schedule"
n_airlines = 3
n_departure_days = 8
dbd_min = -30
dbd_max = -1
signal = 4.0
noise_scale = 0.06
target_prevalence = 0.2
base_fare = 180.0
base_travel_time = 0.9
"#,
    )
    .unwrap();
    path
}

#[test]
fn config_changes_invalidate_models() {
    let d = tempfile::tempdir().unwrap();
    let spec = small_spec(d.path());
    ok(d.path(), &["synth", "--spec", spec.to_str().unwrap()]);
    assert!(!d.path().join("data/scenario.toml").exists());
    ok(d.path(), &["features"]);
    ok(d.path(), &["train"]);
    ok(d.path(), &["evaluate"]);

    let o = fareboost(d.path(), &["--seed", "3", "evaluate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("fareboost train"));

    let o = fareboost(d.path(), &["explain", "--od", "AMS-LHR", "--row", "999999"]);
    assert!(!o.status.success());
}

#[test]
fn config_file_is_validated() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");

    fs::write(&cfg, "seed = 1\nlearning_rate = 0.1\n").unwrap();
    let o = fareboost(d.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    fs::write(&cfg, "seed = 1\n[data]\nlexicon = \"nope.csv\"\n").unwrap();
    let o = fareboost(d.path(), &["--config", cfg.to_str().unwrap(), "features"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));

    fs::write(&cfg, "seed = 1\n[gbt]\nn_trees = 5\nn_passes = 6\n").unwrap();
    let o = fareboost(d.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!o.status.success());
}

#[test]
fn config_selects_ods_and_grid() {
    let d = tempfile::tempdir().unwrap();
    let spec = small_spec(d.path());
    let out = d.path().join("out");
    ok(&out, &["synth", "--spec", spec.to_str().unwrap()]);
    let cfg = d.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 11\nods = [\"AMS-LHR\"]\n[data]\ndir = \"out/data\"\n[grid]\neta = [0.1, 0.3]\nn_trees = [5, 10]\nmax_depth = [2, 3]\nsubsample = [1.0]\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(&out, &["--config", c, "features"]);
    ok(&out, &["--config", c, "train"]);
    let grid = fs::read_to_string(out.join("models/AMS-LHR_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2 + 8);
    assert!(grid.lines().next().unwrap().contains("seed=11"));
}
