use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ebdp::io::{read_feature_table, ModelFile};

fn ebdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a labeled CSV with `signal` informative columns out of `cols`.
fn write_dataset(
    dir: &Path,
    name: &str,
    per_class: usize,
    cols: usize,
    signal: usize,
    delta: f64,
) -> PathBuf {
    let mut state = 88172645463325252u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut text = String::new();
    let header: Vec<String> = (0..cols).map(|j| format!("g{j}")).collect();
    text.push_str(&header.join(","));
    text.push_str(",label\n");
    for class in [1, 2] {
        for _ in 0..per_class {
            let row: Vec<String> = (0..cols)
                .map(|j| {
                    let shift = if class == 1 && j < signal { delta } else { 0.0 };
                    format!("{}", shift + next())
                })
                .collect();
            text.push_str(&row.join(","));
            text.push_str(&format!(",{class}\n"));
        }
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn fit_then_predict_recovers_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "train.csv", 12, 40, 4, 2.5);
    let model = dir.path().join("model.json");
    let preds = dir.path().join("pred.csv");

    let out = ebdp(&[
        "fit",
        "--data",
        path_str(&data),
        "--method",
        "sdp",
        "--kappa",
        "0.5",
        "--out",
        path_str(&model),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let file = ModelFile::load(&model).unwrap();
    assert_eq!(file.eta.method.name(), "SparseDP");
    assert_eq!(file.eta.kappa, Some(0.5));
    assert_eq!((file.n1, file.n2), (12, 12));

    let out = ebdp(&[
        "predict",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--out",
        path_str(&preds),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("error rate 0.0000"));

    // Library-level predictions on the deserialized model match the file.
    let classifier = file.classifier().unwrap();
    let table = read_feature_table(&data, Some("label")).unwrap();
    let mut reader = csv::Reader::from_path(&preds).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["row", "score", "label"]);
    for (record, x) in reader.records().zip(table.features.rows()) {
        let record = record.unwrap();
        let score: f64 = record[1].parse().unwrap();
        let expected = classifier.score(&x.to_vec()).unwrap();
        assert_eq!(score, expected);
        let label: u8 = record[2].parse().unwrap();
        assert_eq!(label, classifier.predict(&x.to_vec()).unwrap().as_u8());
    }
}

#[test]
fn predict_drops_label_column_named_label() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "train.csv", 6, 10, 2, 3.0);
    let model = dir.path().join("model.json");
    assert!(ebdp(&[
        "fit",
        "--data",
        path_str(&data),
        "--method",
        "ir",
        "--out",
        path_str(&model)
    ])
    .status
    .success());
    let out = ebdp(&[
        "predict",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 13);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "train.csv", 6, 10, 2, 3.0);

    let out = ebdp(&["fit", "--data", path_str(&data), "--method", "oracle"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "g1,label\n1,1\n2,1\n3,3\n4,2\n").unwrap();
    let out = ebdp(&["fit", "--data", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));

    let constant = dir.path().join("constant.csv");
    fs::write(&constant, "g1,g2,label\n1,5,1\n2,5,1\n3,5,2\n4,5,2\n").unwrap();
    let out = ebdp(&["fit", "--data", path_str(&constant)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("column 1"));

    let out = ebdp(&["simulate", "--study", "1", "--cell", "4,40"]);
    assert_eq!(out.status.code(), Some(2), "seed is required");
    let out = ebdp(&["simulate", "--study", "2", "--cell", "4,40", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2), "conflicting flags");
    let out = ebdp(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // A model of a different width.
    let model = dir.path().join("model.json");
    assert!(ebdp(&[
        "fit",
        "--data",
        path_str(&data),
        "--method",
        "ir",
        "--out",
        path_str(&model)
    ])
    .status
    .success());
    let narrow = write_dataset(dir.path(), "narrow.csv", 3, 4, 1, 1.0);
    let out = ebdp(&[
        "predict",
        "--model",
        path_str(&model),
        "--data",
        path_str(&narrow),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = ebdp(&["fit", "--data", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    let data = write_dataset(dir.path(), "train.csv", 6, 10, 2, 3.0);
    let unwritable = dir.path().join("no-such-dir").join("model.json");
    let out = ebdp(&[
        "fit",
        "--data",
        path_str(&data),
        "--out",
        path_str(&unwritable),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let common = [
        "simulate", "--study", "1", "--cell", "4,40", "--cell", "1,200", "--p", "600", "--reps",
        "3", "--seed", "11",
    ];

    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--workers", "1", "--out", path_str(&a)]);
    assert!(ebdp(&args).status.success());
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--workers", "3", "--out", path_str(&b)]);
    assert!(ebdp(&args).status.success());

    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.reps.csv")).unwrap(),
        fs::read(dir.path().join("b.reps.csv")).unwrap()
    );

    let text = fs::read_to_string(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cell,method,mean_error,reps,seed"));
    assert_eq!(lines.count(), 8);
    let reps = fs::read_to_string(dir.path().join("a.reps.csv")).unwrap();
    assert_eq!(reps.lines().next(), Some("cell,method,rep,error"));
    assert_eq!(reps.lines().count(), 1 + 8 * 3);

    // The long file re-aggregates to the summary.
    let mut reader = csv::Reader::from_reader(reps.as_bytes());
    let mut sum = 0.0;
    for r in reader.records() {
        let r = r.unwrap();
        if &r[0] == "(4,40)" && &r[1] == "IR" {
            sum += r[3].parse::<f64>().unwrap();
        }
    }
    let summary = ebdp::io::read_results_csv(&a).unwrap();
    let row = summary
        .iter()
        .find(|r| r.cell == "(4,40)" && r.method == "IR")
        .unwrap();
    assert!((row.mean_error - sum / 3.0).abs() < 1e-15);
    assert_eq!(row.seed, 11);
}

#[test]
fn config_file_drives_simulate_and_report_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        "study = 2\nrho = [0.3]\nblocks = \"50:1.5\"\np = 500\nreps = 2\nseed = 5\nmethods = [\"dp\", \"sdp\", \"ir\"]\nT = 10\n",
    )
    .unwrap();
    let out_csv = dir.path().join("r.csv");
    let out = ebdp(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out_csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let md = ebdp(&["report", "--input", path_str(&out_csv)]);
    assert!(md.status.success());
    let md = String::from_utf8_lossy(&md.stdout).into_owned();
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("| cell"));
    assert!(lines[0].contains("DP") && lines[0].contains("SparseDP") && lines[0].contains("IR"));
    assert!(lines[2].starts_with("| rho=0.3 50x1.5"));

    let csv_out = ebdp(&["report", "--input", path_str(&out_csv), "--format", "csv"]);
    let text = String::from_utf8_lossy(&csv_out.stdout).into_owned();
    assert_eq!(text.lines().next(), Some("cell,DP,SparseDP,IR"));

    fs::write(&cfg, "study = 2\nrho = [0.3]\nseed = 5\nunknown_key = 1\n").unwrap();
    let out = ebdp(&["simulate", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
}

#[test]
fn model_file_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "train.csv", 9, 25, 3, 2.0);
    let model = dir.path().join("model.json");
    assert!(ebdp(&[
        "fit",
        "--data",
        path_str(&data),
        "--method",
        "dp",
        "--batches",
        "2",
        "--out",
        path_str(&model)
    ])
    .status
    .success());
    let first = ModelFile::load(&model).unwrap();
    assert_eq!(first.folds, 2);
    let copy = dir.path().join("copy.json");
    first.save(&copy).unwrap();
    let second = ModelFile::load(&copy).unwrap();
    assert_eq!(first, second);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&copy).unwrap());
}
