use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedcomplex_core::dataset::IdxTensor;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedcomplex"));
    c.env_remove("FEDCOMPLEX_DATA_DIR").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Four-class 4x4 images; class `c` brightens pixels with index % 4 == c.
fn write_toy(dir: &Path, n_train: usize, n_test: usize) {
    fs::create_dir_all(dir).unwrap();
    for (prefix, n, salt) in [("train", n_train, 0u32), ("t10k", n_test, 7)] {
        let mut pixels = Vec::with_capacity(n * 16);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = (i % 4) as u8;
            labels.push(c);
            for j in 0..16u32 {
                let noise = ((i as u32 * 31 + j * 17 + salt) % 50) as u8;
                pixels.push(if j % 4 == c as u32 { 170 + noise } else { 10 + noise });
            }
        }
        let images = IdxTensor::new(vec![n, 4, 4], pixels).unwrap();
        let labels = IdxTensor::new(vec![n], labels).unwrap();
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images.to_bytes()).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels.to_bytes()).unwrap();
    }
}

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    write_toy(&tmp.path().join("toy"), 400, 100);
    tmp
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "{name} differs from the golden file");
}

#[test]
fn help_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    golden("help.txt", &stdout(&run(&["--help"], tmp.path())));
    for sub in ["profile", "fedsim", "score", "study", "paths"] {
        let out = run(&[sub, "--help"], tmp.path());
        assert!(out.status.success());
        golden(&format!("{sub}.txt"), &stdout(&out));
    }
}

#[test]
fn every_flag_documents_its_default() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["profile", "fedsim", "score", "study", "paths"] {
        let text = stdout(&run(&[sub, "--help"], tmp.path()));
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            let flag = line.split_whitespace().next().unwrap();
            if ["--help", "--json", "--isomap", "--no-cache", "--quiet", "--verbose", "--config"].contains(&flag) {
                continue;
            }
            let block: String = text
                .split(line)
                .nth(1)
                .unwrap()
                .lines()
                .take_while(|l| !l.trim_start().starts_with('-'))
                .collect();
            assert!(
                line.contains("[default") || line.contains("[required") || line.contains("[env")
                    || block.contains("[default") || block.contains("[required")
                    || flag == "--x" || flag == "--profile",
                "{sub} {flag} has no documented default"
            );
        }
    }
}

#[test]
fn score_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["score", "--x", "3,4", "--path", "[[0,1]]"], tmp.path());
    assert!(out.status.success());
    assert_eq!(stdout(&out), "f_x 5\nf_d 2\nF 7\n");

    let out = run(&["score", "--x", "3,4", "--path", "[[0,1]]", "--beta", "0"], tmp.path());
    assert!(stdout(&out).ends_with("F 2\n"));

    let out = run(&["score", "--x", "3", "--path", "[[0,1]]"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mismatch"));
}

#[test]
fn usage_and_input_errors_exit_2() {
    let tmp = workspace();
    let out = run(&["profile", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["profile", "--dataset", "missing"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing/train-images-idx3-ubyte"), "{}", stderr(&out));

    let out = run(&["fedsim", "--dataset", "toy", "--path", "rounds=3 clients=2 path=diagonal"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("position 19"), "{}", stderr(&out));

    fs::write(tmp.path().join("bad.json"), r#"{"rounds": 3, "colour": "red"}"#).unwrap();
    let out = run(&["--config", "bad.json", "paths", "--entities", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn profile_json_has_documented_keys() {
    let tmp = workspace();
    let out = run(
        &["profile", "--dataset", "toy", "--json", "--id-subsample", "200", "--id-seeds", "0", "--out-dir", "o"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let flat: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&stdout(&out)).unwrap();
    for key in [
        "n_samples",
        "n_features",
        "n_classes",
        "heterogeneity_bits",
        "sparsity_components@0.8",
        "sparsity_discarded@0.95",
        "ec_features@0",
        "ec_upper@90",
        "intrinsic_dim",
        "intrinsic_dim_seed@0",
        "param.id_subsample",
    ] {
        assert!(flat.contains_key(key), "missing {key}");
    }
    assert_eq!(flat["n_samples"], 400);
    assert_eq!(files_in(&tmp.path().join("o/profiles")).len(), 1);

    let table = stdout(&run(&["profile", "--dataset", "toy", "--id-subsample", "200", "--out-dir", "o"], tmp.path()));
    assert!(table.starts_with("dataset"));
    assert!(table.lines().nth(1).unwrap().starts_with("toy"));
}

#[test]
fn score_from_profiles_and_datasets_agree() {
    let tmp = workspace();
    let out = run(&["profile", "--dataset", "toy", "--id-subsample", "100", "--out-dir", "o"], tmp.path());
    assert!(out.status.success());
    let profile = files_in(&tmp.path().join("o/profiles")).remove(0);
    let p = profile.to_str().unwrap();
    let a = stdout(&run(&["score", "--profile", p, "--profile", p, "--path", "[[0,1]]"], tmp.path()));
    let b = stdout(&run(&["score", "--dataset", "toy", "--path", "[[0,1]]"], tmp.path()));
    assert_eq!(a, b);
    let one = run(&["score", "--profile", p, "--path", "[[0,1]]"], tmp.path());
    assert_eq!(one.status.code(), Some(2));
}

#[test]
fn fedsim_logs_and_reproduces() {
    let tmp = workspace();
    let base = ["fedsim", "--dataset", "toy", "--partition", "iid", "--hidden", "8", "--out-dir"];
    let out = run(&[&base[..], &["a", "--rounds", "1"]].concat(), tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = files_in(&tmp.path().join("a/runs")).into_iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 2);

    let alt = [&base[..], &["b", "--rounds", "4", "--path", "[[0],[1]]", "--clients", "3"]].concat();
    let out = run(&alt, tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let json = files_in(&tmp.path().join("b/runs")).into_iter().find(|p| p.extension().unwrap() == "json").unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(summary["clients"], 3);
    assert_eq!(summary["path"], "[[0],[1]]");
    assert_eq!(summary["rounds"], 4);

    // same seeds, different thread counts: identical files
    let c = [&base[..], &["c", "--rounds", "3", "--seed", "5", "--threads", "1"]].concat();
    let d = [&base[..], &["d", "--rounds", "3", "--seed", "5", "--threads", "3"]].concat();
    assert!(run(&c, tmp.path()).status.success());
    assert!(run(&d, tmp.path()).status.success());
    let read = |dir: &str| -> Vec<(String, Vec<u8>)> {
        files_in(&tmp.path().join(dir).join("runs"))
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect()
    };
    assert_eq!(read("c"), read("d"));
}

#[test]
fn config_file_then_flags() {
    let tmp = workspace();
    fs::write(
        tmp.path().join("cfg.json"),
        r#"{"dataset": "toy", "rounds": 3, "hidden": 8, "partition": "iid", "out_dir": "fromfile"}"#,
    )
    .unwrap();
    let out = run(&["--config", "cfg.json", "fedsim", "--rounds", "2"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = files_in(&tmp.path().join("fromfile/runs")).into_iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 3);
}

const PLAN: &str = r#"{
  "datasets": {"toy": {"train_images": "toy/train-images-idx3-ubyte", "train_labels": "toy/train-labels-idx1-ubyte",
                       "test_images": "toy/t10k-images-idx3-ubyte", "test_labels": "toy/t10k-labels-idx1-ubyte"}},
  "defaults": {"partition": "iid", "train": {"rounds": 3, "hidden": 8}},
  "entries": [ENTRIES],
  "correlations": [{"target": "avg_acc", "predictor": "F"}],
  "plots": [{"x": "F", "y": "avg_acc", "fit": false}]
}"#;

#[test]
fn study_writes_reports_and_uses_cache() {
    let tmp = workspace();
    let plan = PLAN.replace("ENTRIES", r#"{"dataset": "toy", "path": "[[0,1]]"}"#);
    fs::write(tmp.path().join("plan.json"), plan).unwrap();
    let args = ["study", "--plan", "plan.json", "--data-dir", ".", "--out-dir", "o"];
    let out = run(&args, tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let reports = files_in(&tmp.path().join("o/reports"));
    let csv = reports.iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 2);
    assert!(reports.iter().any(|p| p.extension().unwrap() == "json"));
    assert!(reports.iter().any(|p| p.extension().unwrap() == "dat"));

    let again = run(&args, tmp.path());
    assert!(again.status.success());
    assert!(stderr(&again).contains("cache hit"), "{}", stderr(&again));
    assert_eq!(fs::read(csv).unwrap(), fs::read(csv).unwrap());
}

#[test]
fn partial_study_exits_1_and_keeps_records() {
    let tmp = workspace();
    let plan = PLAN.replace(
        "ENTRIES",
        r#"{"dataset": "toy", "path": "[[0,1]]"}, {"dataset": "toy", "path": "[[0]]", "clients": 1000}"#,
    );
    fs::write(tmp.path().join("plan.json"), plan).unwrap();
    let out = run(&["study", "--plan", "plan.json", "--data-dir", ".", "--out-dir", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("plan entry 1"), "{}", stderr(&out));
    let csv = files_in(&tmp.path().join("o/reports")).into_iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 2);
}

#[test]
fn paths_enumerates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["paths", "--entities", "3", "--rounds", "2"], tmp.path());
    assert_eq!(stdout(&out).lines().count(), 49);
    let out = run(&["paths", "--entities", "3", "--rounds", "2", "--cap", "10"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["paths", "--entities", "2", "--rounds", "1", "--policy", "singleton", "--json"], tmp.path());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v, serde_json::json!([{"path": [[0]], "f_d": 1.0}, {"path": [[1]], "f_d": 1.0}]));
}
