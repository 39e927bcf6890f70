use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ldcd_core::nab::{build_windows, oracle_detections, probation_length, DEFAULT_WINDOW_FRACTION};
use serde_json::Value;

fn ldcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldcd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_manifest(dir: &Path, count: usize, length: usize) -> std::path::PathBuf {
    let specs: Vec<Value> = (0..count)
        .map(|i| {
            serde_json::json!({
                "name": format!("s{i}"),
                "length": length,
                "period": 25.0 + i as f64,
                "noise_sd": 0.1,
                "trend": 0.0,
                "anomalies": [{"index": length * 3 / 4, "kind": "spike", "magnitude": 4.0}],
                "seed": i,
            })
        })
        .collect();
    let p = dir.join("specs.json");
    fs::write(&p, serde_json::json!({ "datasets": specs }).to_string()).unwrap();
    p
}

fn read_report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn normalized(report: &Value, detector: usize) -> Vec<(String, f64)> {
    report["detectors"][detector]["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            (
                s["profile"].as_str().unwrap().to_string(),
                s["normalized"].as_f64().unwrap(),
            )
        })
        .collect()
}

/// Writes a hand-made score file for every dataset in a synth corpus.
fn write_scores(corpus: &Path, scores_dir: &Path, make: impl Fn(usize, &[usize]) -> Vec<f64>) {
    let labels: serde_json::Map<String, Value> =
        serde_json::from_str(&fs::read_to_string(corpus.join("labels.json")).unwrap()).unwrap();
    fs::create_dir_all(scores_dir).unwrap();
    for (name, stamps) in labels {
        let data = fs::read_to_string(corpus.join(&name)).unwrap();
        let rows: Vec<&str> = data.lines().skip(1).collect();
        let idx: Vec<usize> = stamps
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_str().unwrap().parse().unwrap())
            .collect();
        let scores = make(rows.len(), &idx);
        let mut out = String::from("timestamp,value,abnormality\n");
        for (row, sc) in rows.iter().zip(scores) {
            out += &format!("{row},{sc}\n");
        }
        fs::write(scores_dir.join(&name), out).unwrap();
    }
}

#[test]
fn synth_writes_csvs_labels_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let specs = synth_manifest(dir.path(), 10, 400);
    let out = dir.path().join("corpus");
    let o = ldcd(&["synth", "--manifest", s(&specs), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 10);
    assert!(out.join("labels.json").exists());
    assert!(out.join("manifest.json").exists());

    // Same seeds, same bytes.
    let again = dir.path().join("again");
    assert!(
        ldcd(&["synth", "--manifest", s(&specs), "--output", s(&again)])
            .status
            .success()
    );
    for name in ["s0.csv", "s9.csv", "labels.json", "manifest.json"] {
        assert_eq!(
            fs::read(out.join(name)).unwrap(),
            fs::read(again.join(name)).unwrap()
        );
    }
}

#[test]
fn synth_rejects_anomaly_in_probation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(
        &p,
        r#"{"datasets": [{"name": "x", "length": 1000, "period": 20, "noise_sd": 0.1,
            "anomalies": [{"index": 100, "kind": "spike", "magnitude": 3}], "seed": 1}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = ldcd(&["synth", "--manifest", s(&p), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("x.csv").exists());
}

#[test]
fn empty_corpus_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty");
    fs::create_dir(&corpus).unwrap();
    let out = dir.path().join("out");
    let o = ldcd(&["run", "--corpus", s(&corpus), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let report = read_report(&out);
    assert_eq!(report["detectors"][0]["datasets_scored"], 0);
    assert!(report["detectors"][0]["scores"]
        .as_array()
        .unwrap()
        .is_empty());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(
        ldcd(&["run", "--corpus", d, "--output", d, "--k", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ldcd(&["run", "--corpus", d, "--output", d, "--train-frac", "0.9"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ldcd(&["run", "--corpus", d, "--output", d, "--profile", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ldcd(&["run", "--corpus", &format!("{d}/missing"), "--output", d])
            .status
            .code(),
        Some(2)
    );
}

fn two_detector_manifest(dir: &Path, corpus: &Path, out: &Path) -> std::path::PathBuf {
    let p = dir.join("run.json");
    let m = serde_json::json!({
        "corpus_dir": corpus,
        "labels_path": corpus.join("labels.json"),
        "output_dir": out,
        "detectors": [
            {"k": 3, "embed_dim": 4, "method": "ldcd", "pruning": true},
            {"k": 3, "embed_dim": 4, "method": "dynr", "pruning": true}
        ],
        "profiles": ["LowFN", "LowFP", "Standard"],
        "parallelism": 2
    });
    fs::write(&p, m.to_string()).unwrap();
    p
}

#[test]
fn two_detectors_give_two_score_files_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let specs = synth_manifest(dir.path(), 1, 600);
    let corpus = dir.path().join("corpus");
    assert!(
        ldcd(&["synth", "--manifest", s(&specs), "--output", s(&corpus)])
            .status
            .success()
    );

    let out = dir.path().join("out");
    let m = two_detector_manifest(dir.path(), &corpus, &out);
    let o = ldcd(&["run", "--manifest", s(&m)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = out.join("scores/ldcd-k3-l4-pruning/s0.csv");
    let b = out.join("scores/dynr-k3-l4-pruning/s0.csv");
    let header = fs::read_to_string(&a).unwrap();
    assert!(header.starts_with("timestamp,value,abnormality\n"));
    assert_eq!(header.lines().count(), 601);
    assert!(b.exists());

    let report = fs::read(out.join("report.json")).unwrap();
    let table = fs::read(out.join("report.txt")).unwrap();
    let score_a = fs::read(&a).unwrap();
    // A rerun reproduces every byte.
    let o = ldcd(&["run", "--manifest", s(&m)]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("report.json")).unwrap(), report);
    assert_eq!(fs::read(out.join("report.txt")).unwrap(), table);
    assert_eq!(fs::read(&a).unwrap(), score_a);

    let table = String::from_utf8(table).unwrap();
    assert!(table.starts_with("detector"));
    assert!(table.lines().next().unwrap().ends_with("Standard"));
    assert_eq!(table.lines().count(), 3);
}

fn scored_corpus(dir: &Path) -> std::path::PathBuf {
    let specs = synth_manifest(dir, 4, 1000);
    let corpus = dir.join("corpus");
    assert!(
        ldcd(&["synth", "--manifest", s(&specs), "--output", s(&corpus)])
            .status
            .success()
    );
    corpus
}

fn score_with(dir: &Path, corpus: &Path, name: &str, extra: &[&str]) -> Value {
    let out = dir.join(format!("out-{name}"));
    let scores = out.join("scores").join("ldcd-k27-l19-pruning");
    let make: Box<dyn Fn(usize, &[usize]) -> Vec<f64>> = match name {
        "oracle" => Box::new(|len, labels| {
            let w = build_windows(labels, len, DEFAULT_WINDOW_FRACTION).unwrap();
            oracle_detections(len, &w, probation_length(len))
        }),
        "silent" => Box::new(|len, _| vec![0.0; len]),
        "fp-only" => Box::new(|len, _| {
            // Fires just after probation, well before any window.
            let mut v = vec![0.0; len];
            v[probation_length(len) + 5] = 1.0;
            v
        }),
        _ => unreachable!(),
    };
    write_scores(corpus, &scores, make);
    let mut args = vec!["score", "--corpus", s(corpus), "--output", s(&out)];
    let labels = corpus.join("labels.json");
    args.extend(["--labels", s(&labels)]);
    args.extend_from_slice(extra);
    let o = ldcd(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    read_report(&out)
}

#[test]
fn scorer_endpoints_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = scored_corpus(dir.path());

    let oracle = score_with(dir.path(), &corpus, "oracle", &[]);
    let cols = normalized(&oracle, 0);
    assert_eq!(cols.len(), 3);
    for (profile, v) in &cols {
        assert!((v - 100.0).abs() < 1e-9, "{profile}: {v}");
    }

    for (_, v) in normalized(&score_with(dir.path(), &corpus, "silent", &[]), 0) {
        assert!(v.abs() < 1e-9);
    }

    // An optimized threshold can always silence a detector, so the
    // false-positive-only case is scored at a fixed threshold.
    let fp = score_with(dir.path(), &corpus, "fp-only", &["--threshold", "0.5"]);
    let standard = normalized(&fp, 0)
        .into_iter()
        .find(|(p, _)| p == "Standard")
        .unwrap()
        .1;
    assert!(standard < 0.0, "{standard}");
    assert_eq!(fp["detectors"][0]["scores"][2]["threshold"], 0.5);
    let optimized = score_with(dir.path(), &corpus, "fp-only", &[]);
    for (_, v) in normalized(&optimized, 0) {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn missing_score_file_is_skipped_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = scored_corpus(dir.path());
    let out = dir.path().join("out");
    let scores = out.join("scores/ldcd-k27-l19-pruning");
    write_scores(&corpus, &scores, |len, _| vec![0.0; len]);
    fs::remove_file(scores.join("s2.csv")).unwrap();
    let o = ldcd(&[
        "score",
        "--corpus",
        s(&corpus),
        "--labels",
        s(&corpus.join("labels.json")),
        "--output",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let report = read_report(&out);
    let skipped = report["detectors"][0]["skipped"].as_array().unwrap();
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0]["dataset"], "s2.csv");
    assert_eq!(report["detectors"][0]["datasets_scored"], 3);
}
