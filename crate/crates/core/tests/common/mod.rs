#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub command: String,
    pub config: String,
    pub exit: i32,
}

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

pub fn cases() -> Vec<Case> {
    let text = fs::read_to_string(corpus_dir().join("cases.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Runs every corpus case into `out/<name>` and returns `(name, expected, got)`.
pub fn run_corpus(out: &Path) -> Vec<(String, i32, i32)> {
    cases()
        .into_iter()
        .map(|case| {
            let status = Command::new(env!("CARGO_BIN_EXE_mrayleigh"))
                .arg("--quiet")
                .arg("--config")
                .arg(corpus_dir().join(&case.config))
                .arg("--out")
                .arg(out.join(&case.name))
                .arg(&case.command)
                .env("MRAYLEIGH_THREADS", "2")
                .stderr(Stdio::null())
                .status()
                .expect("spawn mrayleigh");
            (case.name, case.exit, status.code().unwrap_or(-1))
        })
        .collect()
}

/// Every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
