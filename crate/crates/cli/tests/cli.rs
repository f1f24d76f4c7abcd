use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn trialsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trialsynth"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("spawn trialsynth")
}

fn ok(args: &[&str]) -> String {
    let out = trialsynth(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest(dir: &Path) {
    let xml = fixtures().join("xml");
    let labels = fixtures().join("labels.csv");
    ok(&["ingest", "--xml", s(&xml), "--labels", s(&labels), "--out-dir", s(dir)]);
}

fn generate(dir: &Path) {
    let vocab = fixtures().join("drugs.txt");
    let mock = fixtures().join("mock_e2e.json");
    ok(&[
        "generate",
        "--vocab",
        s(&vocab),
        "--mock",
        s(&mock),
        "--total",
        "2",
        "--label-policy",
        "success",
        "--seed",
        "42",
        "--out-dir",
        s(dir),
    ]);
}

#[test]
fn ingest_writes_labeled_trials() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let corpus = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    // 19 parseable files, one of them unlabeled
    assert_eq!(corpus.lines().count(), 18);
    assert!(!corpus.contains("Terminated"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ingest"]["parsed_records"], 19);
    assert_eq!(manifest["ingest"]["failed_records"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = trialsynth(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = trialsynth(&["retrieve", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn retrieve_lists_eligible_drugs() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let vocab = fixtures().join("drugs.txt");
    ok(&["retrieve", "--vocab", s(&vocab), "--out-dir", s(dir.path())]);
    let report = fs::read_to_string(dir.path().join("eligibility.csv")).unwrap();
    assert_eq!(report, "intervention,success_count,failure_count\naspirin,3,3\n");
}

#[test]
fn mock_generation_is_reproducible() {
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        ingest(dir.path());
        generate(dir.path());
        outputs.push((
            fs::read(dir.path().join("synthetic.jsonl")).unwrap(),
            fs::read(dir.path().join("generation_run.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(String::from_utf8_lossy(&outputs[0].0).lines().count(), 2);
}

#[test]
fn generation_without_key_or_mock_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let vocab = fixtures().join("drugs.txt");
    let out = trialsynth(&[
        "generate",
        "--vocab",
        s(&vocab),
        "--total",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("OPENAI_API_KEY"));
}

#[test]
fn split_writes_manifests_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    generate(dir.path());
    ok(&[
        "split",
        "--seeds",
        "1,2",
        "--ratio-train-size",
        "2",
        "--ratio-eval-size",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    for seed in [1, 2] {
        let seed_dir = dir.path().join(format!("splits/seed_{seed}"));
        let mut names: Vec<_> = fs::read_dir(&seed_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 12, "{names:?}");
        let hybrid: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(seed_dir.join("in_distribution-hybrid.json")).unwrap()).unwrap();
        // 2 synthetic + floor(0.6 * 6) real
        assert_eq!(hybrid["train"].as_array().unwrap().len(), 5);
    }
}

fn write_predictions(dir: &Path, name: &str, scores: &[(u8, f64)]) -> PathBuf {
    let mut text = String::from("item_id,label,score\n");
    for (i, (label, score)) in scores.iter().enumerate() {
        text.push_str(&format!("t{i},{label},{score}\n"));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn evaluate_aggregates_seeds_into_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [
        write_predictions(
            dir.path(),
            "preds_seed40.csv",
            &[(1, 0.9), (0, 0.2), (1, 0.3), (0, 0.8)],
        ),
        write_predictions(
            dir.path(),
            "preds_seed41.csv",
            &[(1, 0.9), (0, 0.1), (1, 0.7), (0, 0.2)],
        ),
        write_predictions(
            dir.path(),
            "preds_seed42.csv",
            &[(1, 0.6), (0, 0.4), (1, 0.8), (0, 0.3)],
        ),
    ];
    let out = dir.path().join("report.csv");
    ok(&[
        "evaluate",
        s(&runs[0]),
        s(&runs[1]),
        s(&runs[2]),
        "--name",
        "hybrid",
        "--out",
        s(&out),
    ]);
    let report = fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = report.lines().collect();
    assert_eq!(lines.len(), 2, "{report}");
    // accuracies 0.5, 1, 1: mean 0.8333, sample std sqrt(1/12)
    assert!(lines[1].starts_with("hybrid,0.8333,0.2887,"), "{}", lines[1]);
}

fn write_embeddings(path: &Path, prefix: &str, n: usize) {
    let mut text = String::new();
    for i in 0..n {
        let v: Vec<String> = (0..4)
            .map(|d| format!("{}", ((i * 7 + d * 3) % 11) as f64 - 5.0 + 0.5))
            .collect();
        text.push_str(&format!("{{\"id\":\"{prefix}{i}\",\"vector\":[{}]}}\n", v.join(",")));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn analyze_writes_pairs_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let real = dir.path().join("real.jsonl");
    let syn = dir.path().join("syn.jsonl");
    write_embeddings(&real, "NCT", 12);
    write_embeddings(&syn, "SYN-", 9);
    let out_dir = dir.path().join("analysis");
    ok(&[
        "analyze",
        "--real",
        s(&real),
        "--synthetic",
        s(&syn),
        "--pairs",
        "500",
        "--bins",
        "10",
        "--seed",
        "3",
        "--out-dir",
        s(&out_dir),
    ]);
    let pairs = fs::read_to_string(out_dir.join("pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 3 * 500);
    for mode in ["real_real", "syn_syn", "real_syn"] {
        let hist = fs::read_to_string(out_dir.join(format!("histogram_{mode}.csv"))).unwrap();
        let total: u64 = hist
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 500, "{mode}");
    }
}
