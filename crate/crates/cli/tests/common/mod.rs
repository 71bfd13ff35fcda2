#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn nestfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestfuse"))
        .args(args)
        .output()
        .expect("run nestfuse")
}

/// Runs the binary and fails the test on a nonzero exit.
pub fn ok(args: &[&str]) -> String {
    let out = nestfuse(args);
    assert!(
        out.status.success(),
        "nestfuse {args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 3 x 3-parent synthetic dataset.
pub fn small_dataset(dir: &Path) -> PathBuf {
    let ds = dir.join("ds");
    ok(&["gen-synth", "--out", s(&ds), "--width", "24", "--height", "24", "--classes", "3"]);
    ds
}

pub fn train(ds: &Path, out: &Path, model: &str, latent_dim: u32, steps: u32) {
    ok(&[
        "train",
        "--data",
        s(ds),
        "--out",
        s(out),
        "--model",
        model,
        "--latent-dim",
        &latent_dim.to_string(),
        "--steps",
        &steps.to_string(),
    ]);
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
