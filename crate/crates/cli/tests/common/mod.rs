#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

/// Runs the `dha` binary with `root` as the output root.
pub fn dha(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dha"))
        .args(args)
        .env("DHA_OUTPUT_ROOT", root)
        .output()
        .expect("dha runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Exit status 0 and exactly one summary line.
pub fn assert_ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
    let out = stdout(o);
    assert_eq!(out.lines().count(), 1, "{out}");
    out
}

/// Relative path → SHA-256 of every file below `dir`.
pub fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    fn walk(base: &Path, dir: &Path, acc: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, acc);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                acc.insert(rel, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

/// One hash over a whole tree.
pub fn tree_hash(dir: &Path) -> String {
    let mut h = Sha256::new();
    for (k, v) in tree_hashes(dir) {
        h.update(k.as_bytes());
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())
}

/// A C2 configuration small enough to train in well under a second.
pub const TINY: &[&str] = &[
    "--set=group=C2",
    "--set=state_dim=4",
    "--set=latent_dim=4",
    "--set=dataset.n_train=6",
    "--set=dataset.n_test=4",
    "--set=dataset.horizon=12",
    "--set=training.horizon=3",
    "--set=training.epochs=3",
    "--set=training.batch=8",
    "--set=training.hidden=[4]",
    "--set=eval.horizon=5",
];

pub fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
