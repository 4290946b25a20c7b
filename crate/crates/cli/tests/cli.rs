mod common;

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::Path;

use common::{devid, ok, p, write_corpus, DEVICES};
use devid_core::aggregate::{aggregate, mixed, AggregationConfig};
use devid_core::MacAddr;

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn extract_writes_the_dataset_header() {
    let dir = tempfile::tempdir().unwrap();
    let pcaps = write_corpus(dir.path(), 1, 5);
    let out = dir.path().join("feats.csv");
    ok(&["extract", "--pcap-dir", p(&pcaps), "--label-map", p(&dir.path().join("labels.csv")), "--out", p(&out)]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header[..5], ["mac", "label", "transfer", "capture_id", "index"]);
    assert_eq!(header.len(), 5 + devid_core::FeatureCatalogue::default_catalogue().len());
    assert_eq!(rows.len(), 15);
    assert_eq!((rows[0][1].as_str(), rows[0][3].as_str(), rows[0][4].as_str()), ("Bulb", "Bulb/cap0.pcap", "0"));
    assert!(dir.path().join("feats.csv.manifest.json").exists());
}

#[test]
fn evaluate_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("t.csv");
    let pred = dir.path().join("p.csv");
    fs::write(&truth, "capture_id,index,label\na.pcap,0,X\na.pcap,1,Y\nb.pcap,0,X\n").unwrap();
    fs::write(&pred, "capture_id,index,mixed\nb.pcap,0,X\na.pcap,1,Y\na.pcap,0,X\n").unwrap();
    let report = dir.path().join("report.csv");
    ok(&["evaluate", "--truth", p(&truth), "--pred", p(&pred), "--method", "mixed", "--out", p(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("\naccuracy,,,1,3\n") || text.contains("\naccuracy,,,1.000000,3\n"), "{text}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(summary["accuracy"], 1.0);
    assert_eq!(summary["macro_f1"], 1.0);
    assert!(dir.path().join("report.confusion.csv").exists());
    assert!(dir.path().join("report.devices.csv").exists());
}

/// Runs every stage into `out` with a fixed seed.
fn pipeline(root: &Path, pcaps: &Path, out: &Path) {
    let labels = root.join("labels.csv");
    let o = |name: &str| out.join(name).to_str().unwrap().to_string();
    ok(&["--seed", "7", "split", "--pcap-dir", p(pcaps), "--ratio", "0.6", "--out", &o("plan.json")]);
    for part in ["train", "test"] {
        ok(&[
            "--seed", "7", "extract", "--pcap-dir", p(pcaps), "--label-map", p(&labels), "--split", &o("plan.json"),
            "--partition", part, "--out", &o(&format!("{part}.csv")),
        ]);
    }
    ok(&["--seed", "7", "select-features", "--features", &o("train.csv"), "--population", "8", "--generations", "3", "--trees", "3", "--out", &o("mask.txt")]);
    ok(&["--seed", "7", "tune", "--features", &o("train.csv"), "--mask", &o("mask.txt"), "--folds", "3", "--iters", "4", "--out", &o("tune.json")]);
    ok(&["--seed", "7", "train", "--features", &o("train.csv"), "--mask", &o("mask.txt"), "--params", &o("tune.json"), "--out", &o("model.json")]);
    ok(&["--seed", "7", "predict", "--features", &o("test.csv"), "--model", &o("model.json"), "--out", &o("pred.csv")]);
    ok(&["--seed", "7", "evaluate", "--truth", &o("test.csv"), "--pred", &o("pred.csv"), "--out", &o("report.csv")]);
    ok(&["--seed", "7", "sweep-group-size", "--truth", &o("test.csv"), "--pred", &o("pred.csv"), "--g-max", "20", "--out", &o("sweep.csv")]);
    ok(&["--seed", "7", "audit-leakage", "--pcap-dir", p(pcaps), "--label-map", p(&labels), "--folds", "3", "--max-depth", "6", "--out", &o("audit.csv")]);
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|path| !path.to_str().unwrap().ends_with(".manifest.json"))
        .map(|path| (path.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&path).unwrap()))
        .collect()
}

#[test]
fn pipeline_is_deterministic_and_aggregation_helps() {
    let dir = tempfile::tempdir().unwrap();
    let pcaps = write_corpus(dir.path(), 4, 120);
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    pipeline(dir.path(), &pcaps, &a);
    pipeline(dir.path(), &pcaps, &b);
    if let Ok(keep) = std::env::var("DEVID_KEEP_PIPELINE") {
        let _ = fs::remove_dir_all(&keep);
        fs::create_dir_all(&keep).unwrap();
        for e in fs::read_dir(&a).unwrap() {
            let e = e.unwrap();
            fs::copy(e.path(), Path::new(&keep).join(e.file_name())).unwrap();
        }
    }
    let (oa, ob) = (outputs(&a), outputs(&b));
    assert_eq!(oa.keys().collect::<Vec<_>>(), ob.keys().collect::<Vec<_>>());
    for (name, bytes) in &oa {
        assert!(bytes == &ob[name], "{name} differs between runs");
    }
    for name in ["mask.votes.csv", "mask.trace.csv", "report.json", "report.confusion.csv", "report.devices.csv", "audit.json"] {
        assert!(oa.contains_key(name), "missing {name}");
    }
    for name in ["plan.json", "train.csv", "test.csv", "mask.txt", "tune.json", "model.json", "pred.csv", "report.csv", "sweep.csv", "audit.csv"] {
        assert!(oa.contains_key(name), "missing {name}");
        assert!(a.join(format!("{name}.manifest.json")).exists(), "no manifest for {name}");
    }

    let (_, devices) = read_csv(&a.join("report.devices.csv"));
    assert_eq!(devices.len(), DEVICES.len());
    let (header, rows) = read_csv(&a.join("sweep.csv"));
    assert_eq!(header, ["g", "accuracy", "macro_f1"]);
    assert_eq!(rows.len(), 20);
    let acc = |g: usize| rows[g - 1][1].parse::<f64>().unwrap();
    assert!(acc(13) > acc(1), "g=13 {} vs g=1 {}", acc(13), acc(1));
}

#[test]
fn mixed_column_is_individual_plus_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let pcaps = write_corpus(dir.path(), 2, 60);
    let out = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let labels = out("labels.csv");
    ok(&["extract", "--pcap-dir", p(&pcaps), "--label-map", &labels, "--out", &out("all.csv")]);
    ok(&["train", "--features", &out("all.csv"), "--max-depth", "3", "--out", &out("model.json")]);
    ok(&["predict", "--features", &out("all.csv"), "--model", &out("model.json"), "--g", "5", "--method", "individual", "--out", &out("ind.csv")]);
    ok(&["predict", "--features", &out("all.csv"), "--model", &out("model.json"), "--g", "5", "--method", "mixed", "--out", &out("mix.csv")]);

    let (header, ind_rows) = read_csv(Path::new(&out("ind.csv")));
    assert_eq!(header, ["capture_id", "index", "mac", "individual", "confidence", "aggregated", "mixed", "predicted"]);
    let (_, mix_rows) = read_csv(Path::new(&out("mix.csv")));
    let macs: Vec<MacAddr> = ind_rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let individual: Vec<String> = ind_rows.iter().map(|r| r[7].clone()).collect();
    assert!(ind_rows.iter().all(|r| r[7] == r[3]));

    let cfg = AggregationConfig::with_g(NonZeroUsize::new(5).unwrap());
    let result = aggregate(&macs, &individual, &cfg).unwrap();
    let composed = mixed(&macs, &individual, &result);
    let predicted: Vec<String> = mix_rows.iter().map(|r| r[7].clone()).collect();
    assert_eq!(predicted, composed);
    let aggregated: Vec<String> = mix_rows.iter().map(|r| r[5].clone()).collect();
    assert_eq!(aggregated, result.new_labels);
}

#[test]
fn exit_codes() {
    assert_eq!(devid(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(devid(&["split", "--bogus"]).status.code(), Some(2));
    assert_eq!(devid(&["evaluate", "--truth", "x.csv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = devid(&["train", "--features", p(&missing), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: DatasetError::Io"), "{stderr}");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "mac,label\n").unwrap();
    let out = devid(&["train", "--features", p(&bad), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DatasetError::SchemaMismatch"));
}

#[test]
fn out_dir_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let pcaps = write_corpus(dir.path(), 2, 3);
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_devid"))
        .args(["split", "--pcap-dir", p(&pcaps), "--out", "plan.json"])
        .env("DEVID_OUT_DIR", dir.path().join("outs"))
        .env("DEVID_SEED", "3")
        .status()
        .unwrap();
    assert!(status.success());
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("outs/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["seed"], 3);
}
