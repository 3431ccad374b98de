use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "--set",
    "epochs=2",
    "--set",
    "batch=64",
    "--set",
    "extractor_hidden=16",
    "--set",
    "embed_dim=8",
    "--set",
    "disc_hidden=8",
];

fn paa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paa"))
        .args(args)
        .env("PAA_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = paa(args);
    assert!(
        out.status.success(),
        "paa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Small generated corpora in `dir/data`.
fn corpora(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let mut args = vec!["gen", "--seed", "4", "--n-source", "240", "--n-target", "240", "--out", s(&data)];
    args.extend_from_slice(extra);
    ok(&args);
    (data.join("source.json"), data.join("target.json"))
}

fn with_corpora<'a>(head: &[&'a str], src: &'a Path, tgt: &'a Path, out: &'a Path) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(&["--source", s(src), "--target", s(tgt), "--out", s(out)]);
    v.extend_from_slice(TINY);
    v
}

fn schema(name: &str) -> jsonschema::JSONSchema {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let text = fs::read_to_string(path).expect("schema file");
    let value: Value = serde_json::from_str(&text).expect("schema json");
    jsonschema::JSONSchema::compile(&value).expect("schema compiles")
}

fn validate(name: &str, path: &Path) -> Value {
    let doc: Value = serde_json::from_str(&fs::read_to_string(path).expect("output json")).expect("valid json");
    let compiled = schema(name);
    if let Err(errors) = compiled.validate(&doc) {
        let msgs: Vec<String> = errors.map(|e| format!("{e} at {}", e.instance_path)).collect();
        panic!("{} violates {name}: {msgs:?}", path.display());
    }
    doc
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).expect("csv opens");
    r.records().map(|x| x.expect("csv row")).collect()
}

#[test]
fn gen_is_deterministic_and_validates_classes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["gen", "--seed", "7", "--dim", "16", "--classes", "3", "--shift", "1.0", "--n-source", "300", "--n-target", "300", "--out", s(d)]);
    }
    for f in ["source.json", "source.features.bin", "target.features.bin", "target.labels.bin", "target.subjects.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let bad = paa(&["gen", "--classes", "1", "--out", s(&dir.path().join("c"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(paa(&["gen", "--bogus"]).status.code(), Some(2));
}

#[test]
fn gen_prior_follows_chi_square() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--seed", "2", "--prior", "0.2,0.3,0.5", "--n-source", "30", "--n-target", "10000", "--out", s(dir.path())]);
    let labels = fs::read(dir.path().join("target.labels.bin")).unwrap();
    let mut counts = [0f64; 3];
    for w in labels.chunks_exact(4) {
        counts[i32::from_le_bytes(w.try_into().unwrap()) as usize] += 1.0;
    }
    let chi2: f64 = counts
        .iter()
        .zip([0.2, 0.3, 0.5])
        .map(|(o, p)| (o - p * 10000.0).powi(2) / (p * 10000.0))
        .sum();
    // 99th percentile of chi-square with 2 degrees of freedom: -2 ln 0.01.
    assert!(chi2 < -2.0 * 0.01f64.ln(), "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn train_report_checkpoint_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    for r in [&r1, &r2] {
        ok(&with_corpora(&["train", "--variant", "M", "--seed", "3"], &src, &tgt, r));
    }
    let doc = validate("run_report", &r1.join("report.json"));
    assert_eq!(doc["variant"], "M");
    assert_eq!(doc["final"]["seed"], 3);
    assert_eq!(doc["epochs"]["target_acc"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read(r1.join("report.json")).unwrap(), fs::read(r2.join("report.json")).unwrap());
    assert_eq!(fs::read(r1.join("model.ckpt")).unwrap(), fs::read(r2.join("model.ckpt")).unwrap());

    // Degenerate but legal.
    let r3 = dir.path().join("r3");
    let mut args = with_corpora(&["train", "--variant", "M", "--set", "lambda3=0.0", "--set", "stage3_disc=false"], &src, &tgt, &r3);
    args.push("--seed");
    args.push("3");
    ok(&args);
    validate("run_report", &r3.join("report.json"));
}

#[test]
fn resume_continues_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let rest = dir.path().join("rest");
    ok(&with_corpora(&["train", "--variant", "C"], &src, &tgt, &full));
    ok(&with_corpora(&["train", "--variant", "C", "--until", "1"], &src, &tgt, &part));
    let ckpt = part.join("model.ckpt");
    ok(&["train", "--resume", s(&ckpt), "--source", s(&src), "--target", s(&tgt), "--out", s(&rest)]);
    assert_eq!(fs::read(full.join("report.json")).unwrap(), fs::read(rest.join("report.json")).unwrap());
    assert_eq!(fs::read(full.join("model.ckpt")).unwrap(), fs::read(rest.join("model.ckpt")).unwrap());
}

#[test]
fn config_contradictions_and_errors_have_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let out = dir.path().join("x");
    let bad = paa(&with_corpora(&["train", "--variant", "L", "--set", "lambda3=1"], &src, &tgt, &out));
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("lambda3"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "variant = L\nnot_a_key = 3\n").unwrap();
    let bad = paa(&with_corpora(&["train", "--config", s(&cfg)], &src, &tgt, &out));
    assert_eq!(bad.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let bad = paa(&with_corpora(&["train", "--variant", "L"], &missing, &tgt, &out));
    assert_eq!(bad.status.code(), Some(3));

    let nan = paa(&with_corpora(&["train", "--variant", "L", "--set", "lr=1e300"], &src, &tgt, &out));
    assert_eq!(nan.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&nan.stderr);
    assert!(msg.contains("epoch 0") && msg.contains(" in "), "{msg}");
}

#[test]
fn protocol_results_predictions_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let p1 = dir.path().join("p1");
    ok(&with_corpora(&["protocol", "--variant", "L", "--protocol", "1"], &src, &tgt, &p1));
    let doc = validate("protocol_result", &p1.join("protocol.json"));
    assert_eq!(doc["folds"].as_array().unwrap().len(), 1);
    assert_eq!(doc["std_accuracy"].as_f64(), Some(0.0));
    let cm: Vec<Vec<u64>> = serde_json::from_value(doc["confusion_matrix"].clone()).unwrap();
    let trace: u64 = (0..cm.len()).map(|c| cm[c][c]).sum();
    let total: u64 = cm.iter().flatten().sum();
    assert!((trace as f64 / total as f64 - doc["mean_accuracy"].as_f64().unwrap()).abs() < 1e-12);
    let confusion = read_csv(&p1.join("confusion.csv"));
    assert_eq!(confusion.len(), 3);
    assert_eq!(confusion[0][1].parse::<u64>().unwrap(), cm[0][0]);

    // Embedding predictions agree with the protocol's at the same checkpoint.
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    let ckpt = p1.join("fold0.ckpt");
    for e in [&e1, &e2] {
        ok(&["embed", "--checkpoint", s(&ckpt), "--source", s(&src), "--target", s(&tgt), "--out", s(e)]);
    }
    assert_eq!(fs::read(e1.join("embeddings.csv")).unwrap(), fs::read(e2.join("embeddings.csv")).unwrap());
    let rows = read_csv(&e1.join("embeddings.csv"));
    assert_eq!(rows.len(), 480);
    assert_eq!(rows[0].len(), 4 + 8);
    let embedded: std::collections::HashMap<String, String> = rows
        .iter()
        .filter(|r| &r[1] == "target")
        .map(|r| (r[0].to_string(), r[3].to_string()))
        .collect();
    let preds = read_csv(&p1.join("predictions.csv"));
    assert!(!preds.is_empty());
    for p in &preds {
        assert_eq!(embedded[&p[2]], p[4], "sample {}", &p[2]);
    }

    let p3 = dir.path().join("p3");
    ok(&with_corpora(&["protocol", "--variant", "L", "--protocol", "3", "--threads", "2"], &src, &tgt, &p3));
    let doc = validate("protocol_result", &p3.join("protocol.json"));
    assert_eq!(doc["folds"].as_array().unwrap().len(), 15);

    let bad = paa(&with_corpora(&["protocol", "--variant", "L", "--protocol", "5"], &src, &tgt, &p3));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn loso_without_subjects_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let subjects = dir.path().join("data").join("target.subjects.bin");
    let n = fs::read(&subjects).unwrap().len();
    fs::write(&subjects, vec![0u8; n]).unwrap();
    let out = dir.path().join("p");
    let bad = paa(&with_corpora(&["protocol", "--variant", "L", "--protocol", "3"], &src, &tgt, &out));
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("subject"));
}

#[test]
fn noise_sweep_output() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let out = dir.path().join("n");
    ok(&with_corpora(&["noise", "--variant", "L", "--seed", "5"], &src, &tgt, &out));
    let doc = validate("noise_sweep", &out.join("noise.json"));
    let cell = |strategy: &str, ratio: f64| {
        doc["cells"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["strategy"] == strategy && c["ratio"].as_f64() == Some(ratio))
            .unwrap()["accuracy"]
            .as_f64()
            .unwrap()
    };
    let gap = cell("SSL", 0.1) - cell("SSL", 0.4);
    assert!((doc["gap_ssl"].as_f64().unwrap() - gap).abs() < 1e-15);
    assert_eq!(read_csv(&out.join("noise.csv")).len(), 10);

    let plain = dir.path().join("plain");
    ok(&with_corpora(&["train", "--variant", "L", "--seed", "5"], &src, &tgt, &plain));
    let report: Value = serde_json::from_str(&fs::read_to_string(plain.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["final"]["accuracy"].as_f64(), Some(cell("RaL", 0.0)));
}

#[test]
fn ablation_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = corpora(dir.path(), &[]);
    let out = dir.path().join("a");
    let head = ["ablate", "--variant", "M", "--switch", "none", "--switch", "no-discriminator", "--switch", "no-stage2+3"];
    ok(&with_corpora(&head, &src, &tgt, &out));
    let doc = validate("ablation", &out.join("ablation.json"));
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["switch"], "full");

    let plain = dir.path().join("plain");
    ok(&with_corpora(&["train", "--variant", "M"], &src, &tgt, &plain));
    let report: Value = serde_json::from_str(&fs::read_to_string(plain.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["final"]["accuracy"], rows[0]["accuracy"]);
    assert_eq!(report["final"]["config_hash"], rows[0]["config_hash"]);

    let bad = paa(&with_corpora(&["ablate", "--variant", "L", "--switch", "no-stage2"], &src, &tgt, &out));
    assert_eq!(bad.status.code(), Some(2));
    let bad = paa(&with_corpora(&["ablate", "--variant", "L", "--switch", "no-such"], &src, &tgt, &out));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn de_features_of_white_noise() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("sig.bin");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let bytes: Vec<u8> = (0..2000)
        .flat_map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (v as f32).to_le_bytes()
        })
        .collect();
    fs::write(&raw, bytes).unwrap();
    fs::write(dir.path().join("sig.bin.json"), r#"{"fs": 200.0, "channel_name": "Fz"}"#).unwrap();
    ok(&["de", "--raw", s(&raw), "--out", s(dir.path())]);
    let rows = read_csv(&dir.path().join("de.csv"));
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0].len(), 6);
}
