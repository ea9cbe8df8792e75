use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_attrgan")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn corpus_corrupt_and_audit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let noisy = dir.path().join("noisy");
    run(&["corpus", "generate", "--root", s(&root), "--classes", "6", "--train-classes", "4", "--per-class", "3", "--size", "32"]);
    let v = run(&["corpus", "validate", "--root", s(&root)]);
    assert!(v.starts_with("ok: 12 train samples over 4 classes, 6 test samples over 2 classes"), "{v}");

    let c = run(&["corpus", "corrupt", "--root", s(&root), "--out", s(&noisy), "--flip-rate", "0.3", "--seed", "1"]);
    assert!(c.contains("of 228 bits"), "{c}");
    let flips = std::fs::read_to_string(noisy.join("flips.csv")).unwrap();
    assert_eq!(flips.lines().next(), Some("id,attribute"));
    run(&["corpus", "validate", "--root", s(&noisy)]);

    let audit = dir.path().join("audit");
    let summary = run(&[
        "audit",
        "--before",
        s(&root.join("train")),
        "--after",
        s(&noisy.join("train")),
        "--attr",
        "4",
        "--oracle",
        s(&root.join("train")),
        "--out",
        s(&audit),
    ]);
    assert!(!summary.trim().is_empty());
    let files: Vec<_> = std::fs::read_dir(&audit).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(files.iter().any(|f| f.starts_with("audit_04_") && f.ends_with(".csv")), "{files:?}");
    assert!(files.iter().any(|f| f.ends_with(".png")), "{files:?}");
}

#[test]
fn attribute_encoding_prints_global_and_locals() {
    let out = run(&["attr", "encode", "--attrs", "0100010000010000000"]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("global "));
    assert_eq!(lines.iter().filter(|l| l.starts_with("local ")).count(), 3);
}

#[test]
fn bad_input_fails_with_a_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_attrgan")).args(["attr", "encode", "--attrs", "0000"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
