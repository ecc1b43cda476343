use std::path::Path;
use std::process::{Command, Output};

const SMALL_DNN: &str = r#"[{"type":"dense","inputs":64,"outputs":16},{"type":"relu"},{"type":"dense","inputs":16,"outputs":10},{"type":"softmax"}]"#;

fn p16(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p16")).args(args).env_remove("P16_MNIST_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn idx_images(n: usize, side: usize, pixel: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut v = Vec::new();
    for x in [2051u32, n as u32, side as u32, side as u32] {
        v.extend_from_slice(&x.to_be_bytes());
    }
    for i in 0..n {
        v.extend((0..side * side).map(|j| pixel(i, j)));
    }
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = 2049u32.to_be_bytes().to_vec();
    v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    v.extend_from_slice(labels);
    v
}

/// A learnable 8x8 IDX dataset: class `c` lights row `c % 8` (and column 0
/// for classes 8 and 9), plus deterministic noise.
fn write_dataset(dir: &Path, train: usize, test: usize) {
    let make = |n: usize, offset: usize| {
        let labels: Vec<u8> = (0..n).map(|i| ((i * 7 + offset) % 10) as u8).collect();
        let images = idx_images(n, 8, |i, j| {
            let c = labels[i] as usize;
            let (r, col) = (j / 8, j % 8);
            let on = r == c % 8 && (c < 8 || col == 0 || col == 7);
            if on {
                220
            } else {
                ((i * 31 + j * 17 + offset) % 40) as u8
            }
        });
        (images, idx_labels(&labels))
    };
    let (ti, tl) = make(train, 0);
    let (vi, vl) = make(test, 3);
    std::fs::write(dir.join("train-images-idx3-ubyte"), ti).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), tl).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), vi).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), vl).unwrap();
}

fn train_args<'a>(data: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = vec![
        "train",
        "--architecture",
        SMALL_DNN,
        "--input_shape",
        "64",
        "--data_dir",
        data,
        "--output_dir",
        out,
        "--train_subset",
        "all",
        "--test_subset",
        "all",
        "--batch_size",
        "16",
    ];
    a.extend_from_slice(extra);
    a
}

fn without_wall_time(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "wall_time").unwrap();
    csv.lines()
        .map(|l| l.split(',').enumerate().filter(|&(i, _)| i != col).map(|(_, f)| f).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn help_lists_subcommands() {
    let o = p16(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in ["train", "compare", "scan", "model-info", "tolerance"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn scan_identity_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = p16(&["scan", "identity", "--output_dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("63487 values"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scan_identity.json")).unwrap()).unwrap();
    assert_eq!(json["max_abs_error"], 0.0);
    assert_eq!(json["nan_count"], 0);
    assert!(dir.path().join("scan_identity.csv").is_file());
}

#[test]
fn scan_rejects_unknown_function() {
    let o = p16(&["scan", "tanh2"]);
    assert!(!o.status.success());
}

#[test]
fn train_zero_epochs_writes_header_and_initial_model() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 64, 32);
    let out = tempfile::tempdir().unwrap();
    let (d, o) = (data.path().to_str().unwrap(), out.path().to_str().unwrap());
    let r = p16(&train_args(d, o, &["--epochs", "0"]));
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["epochs"], 0);
    assert!(json["final_test_acc"].is_null());
    assert!(out.path().join("model.p16n").is_file());
}

#[test]
fn identical_runs_write_identical_metrics() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 256, 64);
    let d = data.path().to_str().unwrap();
    let mut csvs = Vec::new();
    let mut models = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let o = out.path().to_str().unwrap();
        let r = p16(&train_args(d, o, &["--epochs", "3", "--optimizer", "adam", "--seed", "5"]));
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        csvs.push(without_wall_time(&std::fs::read_to_string(out.path().join("metrics.csv")).unwrap()));
        models.push(std::fs::read(out.path().join("model.p16n")).unwrap());
    }
    assert_eq!(csvs[0].lines().count(), 4);
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(models[0], models[1]);
}

#[test]
fn config_file_and_flag_override() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 64, 32);
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("cfg.json");
    let arch: serde_json::Value = serde_json::from_str(SMALL_DNN).unwrap();
    let body = serde_json::json!({
        "architecture": arch,
        "input_shape": [64],
        "precision": "pure32",
        "epochs": 5,
        "data_dir": data.path(),
        "output_dir": out.path(),
        "train_subset": null,
        "test_subset": null,
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let r = p16(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "1"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["precision"], "pure32");
}

#[test]
fn invalid_config_is_rejected() {
    let r = p16(&["train", "--batch_size", "0"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("error"));
    let r = p16(&["train", "--precision", "pure8"]);
    assert!(!r.status.success());
}

#[test]
fn missing_data_is_an_error() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let r = p16(&train_args(o, o, &["--epochs", "1"]));
    assert!(!r.status.success());
}

#[test]
fn unstable_run_exits_nonzero_with_report() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 128, 32);
    let out = tempfile::tempdir().unwrap();
    let (d, o) = (data.path().to_str().unwrap(), out.path().to_str().unwrap());
    let r = p16(&train_args(d, o, &["--epochs", "3", "--optimizer", "sgd", "--lr", "60000"]));
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("unstable"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("instability.json")).unwrap()).unwrap();
    assert!(report["non_finite_fraction"].as_f64().unwrap() > 0.5);
}

#[test]
fn model_info_reports_ratio_and_rejects_corruption() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 64, 32);
    let out = tempfile::tempdir().unwrap();
    let d = data.path().to_str().unwrap();
    let mut paths = Vec::new();
    for p in ["pure16", "pure32"] {
        let o = out.path().join(p);
        let r = p16(&train_args(d, o.to_str().unwrap(), &["--epochs", "0", "--precision", p]));
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        paths.push(o.join("model.p16n"));
    }
    let (a, b) = (paths[0].to_str().unwrap(), paths[1].to_str().unwrap());
    let r = p16(&["model-info", a, b]);
    assert!(r.status.success());
    let text = stdout(&r);
    assert!(text.contains("payload ratio: 0.5\n"), "{text}");
    assert!(text.contains("parameters: 1210"), "{text}");

    let r = p16(&["model-info", "--json", a]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert_eq!(json[0]["precision"], "pure16");
    assert_eq!(json[0]["payload_bytes"], 2420);

    let mut bytes = std::fs::read(&paths[0]).unwrap();
    bytes[0] = b'X';
    std::fs::write(&paths[0], &bytes).unwrap();
    let r = p16(&["model-info", a]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("magic"));
}

#[test]
fn empty_architecture_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let r = p16(&["train", "--architecture", "[]", "--output_dir", out.path().to_str().unwrap(), "--epochs", "0"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("softmax"));
}

#[test]
fn compare_and_tolerance_write_reports() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 256, 64);
    let out = tempfile::tempdir().unwrap();
    let (d, o) = (data.path().to_str().unwrap(), out.path().to_str().unwrap());
    let mut args = train_args(d, o, &["--epochs", "2", "--optimizer", "adam", "--include_mixed", "true"]);
    args[0] = "compare";
    let r = p16(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in
        ["compare.csv", "compare.json", "tolerance.csv", "tolerance.json", "tolerance_epochs.csv", "metrics_pure16.csv"]
    {
        assert!(out.path().join(f).is_file(), "{f} missing");
    }
    let compare = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    assert_eq!(compare.lines().count(), 1 + 3 * 2);
    assert!(stdout(&r).contains("|acc16 - acc32|"));

    let tol_dir = out.path().join("tol");
    let r = p16(&[
        "tolerance",
        out.path().join("model_pure32.p16n").to_str().unwrap(),
        out.path().join("model_pure16.p16n").to_str().unwrap(),
        "--architecture",
        SMALL_DNN,
        "--input_shape",
        "64",
        "--data_dir",
        d,
        "--test_subset",
        "all",
        "--output_dir",
        tol_dir.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(stdout(&r).contains("64 inputs"));
    let csv = std::fs::read_to_string(tol_dir.join("tolerance.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
}
