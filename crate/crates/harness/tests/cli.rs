use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roc(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_roc")).args(args).env_remove("ROC_SEED").output().unwrap();
    assert!(out.status.success(), "roc {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(path: &Path, seed: &str) -> Vec<u8> {
    roc(&["-q", "--preset", "desk", "--set", "synth.bars=400", "--seed", seed, "synth", "--out", path.to_str().unwrap()]);
    fs::read(path).unwrap()
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a.csv"), "7");
    let b = synth(&dir.path().join("b.csv"), "7");
    let c = synth(&dir.path().join("c.csv"), "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("timestamp,open,high,low,close\n"));
    assert_eq!(text.lines().count(), 401);
}

#[test]
fn denoise_then_features() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    synth(&raw, "3");
    let smooth = dir.path().join("smooth.csv");
    roc(&["-q", "denoise", "--input", raw.to_str().unwrap(), "--out", smooth.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(&smooth).unwrap().lines().count(), 401);

    let feats = dir.path().join("features");
    roc(&["-q", "features", "--input", raw.to_str().unwrap(), "--denoise", "--out-dir", feats.to_str().unwrap()]);
    assert!(fs::read_dir(&feats).unwrap().count() > 0);
}

#[test]
fn rejects_unknown_override() {
    let out = Command::new(env!("CARGO_BIN_EXE_roc"))
        .args(["--set", "cnn.no_such_key=1", "synth", "--out", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn ingest_rejects_malformed_bars() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "timestamp,open,high,low,close\n0,1.0,0.5,0.9,1.0\n300,1.0,1.1,0.9,1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_roc")).args(["ingest", "--input", bad.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
}
