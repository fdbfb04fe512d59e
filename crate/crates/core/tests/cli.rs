use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attribens"))
        .args(args)
        .env_remove("ATTRIBENS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn make_codes_picks_minimal_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["make-codes", "--items", "10000", "--out", p(dir.path())]);
    assert!(out.contains("n=16 h=8"), "{out}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dataset"]["items"], 10000);
}

#[test]
fn seven_classes_get_walsh_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["make-codes", "--classes", "7", "--out", p(dir.path())]);
    assert!(out.contains("n=7 h=3 C(n,h)=35 groups=7"), "{out}");
    let book: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("codebook.json")).unwrap()).unwrap();
    let codes: Vec<&str> = book["groups"].as_array().unwrap().iter().map(|g| g["code"].as_str().unwrap()).collect();
    assert_eq!(codes[0], "0101010");
}

#[test]
fn make_codes_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["make-codes", "--items", "300", "--seed", "5", "--out", p(d.path())]);
    }
    for file in ["codebook.json", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap()
        );
    }
}

#[test]
fn capacity_and_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["make-codes", "--items", "21", "--n", "6", "--h", "3", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C(6,3) = 20"));
    assert_eq!(run(&["make-codes", "--out", p(dir.path())]).status.code(), Some(2));
    assert_eq!(run(&["train", "--manifest", p(&dir.path().join("missing.json"))]).status.code(), Some(1));
}

#[test]
fn oracle_commands_pass() {
    let out = ok(&["oracle", "--theorem", "2", "--ground", "4"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 3);
    let out = ok(&["oracle", "--theorem", "1", "--codebooks", "20"]);
    assert!(!out.contains("FAIL"), "{out}");
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = d.join("manifest.json");
    ok(&[
        "make-codes", "--items", "20", "--n", "6", "--h", "3", "--dataset", "mixture", "--steps", "10",
        "--epochs", "3", "--hidden", "8,8", "--seed", "3", "--out", p(d),
    ]);
    let out = ok(&["train", "--manifest", p(&manifest)]);
    assert_eq!(out.lines().count(), 6);

    let samples = d.join("samples");
    std::fs::create_dir(&samples).unwrap();
    ok(&["sample", "--manifest", p(&manifest), "--samples", "2", "--seed", "8", "--out", p(&samples)]);
    let again = d.join("again");
    std::fs::create_dir(&again).unwrap();
    ok(&["sample", "--manifest", p(&manifest), "--samples", "2", "--seed", "8", "--out", p(&again)]);
    let s0 = samples.join("sample_0000.json");
    assert_eq!(std::fs::read(&s0).unwrap(), std::fs::read(again.join("sample_0000.json")).unwrap());

    let cf = d.join("cf.json");
    let out = ok(&["counterfactual", "--manifest", p(&manifest), "--sample", p(&s0), "--group", "4", "--out", p(&cf)]);
    assert!(out.starts_with("distance"));
    ok(&["jacobian", "--manifest", p(&manifest), "--sample", p(&s0), "--out", p(d)]);
    assert_eq!(std::fs::read_to_string(d.join("jacobian.csv")).unwrap().lines().count(), 2);

    let ranked = d.join("ranked");
    std::fs::create_dir(&ranked).unwrap();
    ok(&[
        "rank", "--manifest", p(&manifest), "--sample", p(&s0), "--sample", p(&samples.join("sample_0001.json")),
        "--top", "10", "--out", p(&ranked),
    ]);
    let csv = std::fs::read_to_string(ranked.join("ranking.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("sample_0000,")).count(), 10);
    let out = run(&[
        "rank", "--manifest", p(&manifest), "--sample", p(&s0), "--sample", p(&samples.join("sample_0001.json")),
        "--top", "3", "--dedup", "--out", p(&ranked),
    ]);
    match out.status.code() {
        Some(0) => assert!(ranked.join("ranking_dedup.csv").exists()),
        // identical rankings cannot be made disjoint
        code => assert_eq!(code, Some(1), "{}", String::from_utf8_lossy(&out.stderr)),
    }

    let exp = d.join("exp");
    std::fs::create_dir(&exp).unwrap();
    ok(&["experiment", "--manifest", p(&manifest), "--name", "convergence", "--samples", "3", "--out", p(&exp)]);
    assert!(exp.join("summary.json").exists() && exp.join("convergence.csv").exists());

    // A tampered member is refused before any sampling.
    std::fs::write(d.join("member_002.ensd"), b"xx").unwrap();
    let out = run(&["sample", "--manifest", p(&manifest), "--out", p(&samples)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest mismatch"));
}
