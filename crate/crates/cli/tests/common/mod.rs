//! Helpers shared by the CLI integration tests. `@` in a step argument
//! stands for the run directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Run the CLI in-process; returns the exit code.
pub fn bin(args: &[&str]) -> i32 {
    binvis_cli::run_from(std::iter::once("binvis").chain(args.iter().copied()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub const CNN_TRAIN: &[&str] = &[
    "--seed", "7", "train", "--model", "cnn", "--store", "@/small.mimg", "--split", "@/split.json",
];

pub const HEAD_TRAIN: &[&str] = &[
    "--seed", "7", "train", "--model", "softmax", "--embeddings", "@/emb.memb", "--corpus",
    "@/big.mimg.corpus.json", "--split", "@/split.json",
];

/// The full synthetic experiment: corpus, rendering, split, three
/// models, evaluation, ensemble and one explanation.
pub fn pipeline_steps(threads: usize) -> Vec<Vec<String>> {
    let t = threads.to_string();
    let s = |v: &[&str]| -> Vec<String> {
        ["--threads", t.as_str()].iter().chain(v).map(|x| x.to_string()).collect()
    };
    let with = |base: &[&str], extra: &[&str]| s(&[base, extra].concat());
    let mut steps = vec![
        s(&["--seed", "7", "synth", "--out", "@/corpus", "--embeddings", "@/emb.memb"]),
        s(&["convert", "--manifest", "@/corpus/manifest.csv", "--out-store", "@/big.mimg", "--small-out", "@/small.mimg"]),
        s(&["--seed", "7", "split", "--store", "@/big.mimg", "--out", "@/split.json"]),
        with(CNN_TRAIN, &["--out", "@/cnn.mmod"]),
        with(HEAD_TRAIN, &["--out", "@/head.mmod"]),
        s(&["--seed", "7", "train", "--model", "knn", "--pca", "20", "--store", "@/big.mimg", "--split", "@/split.json", "--out", "@/knn.mmod"]),
    ];
    let inputs = |name: &str| -> Vec<&'static str> {
        match name {
            "cnn" => vec!["--store", "@/small.mimg"],
            "head" => vec!["--embeddings", "@/emb.memb", "--corpus", "@/big.mimg.corpus.json"],
            _ => vec!["--store", "@/big.mimg"],
        }
    };
    for (name, subsets) in [("cnn", &["test", "val"][..]), ("head", &["test", "val"][..]), ("knn", &["test"][..])] {
        for subset in subsets {
            let model = format!("@/{name}.mmod");
            let report = format!("@/{name}.{subset}.json");
            let mut v = vec!["eval", "--model", model.as_str(), "--split", "@/split.json", "--subset", subset, "--report", report.as_str()];
            v.extend(inputs(name));
            steps.push(s(&v));
        }
    }
    steps.push(s(&[
        "ensemble", "--probs", "@/cnn.val.mprob", "@/head.val.mprob", "--labels", "@/cnn.val.labels.csv", "--out", "@/ensemble.json",
    ]));
    steps.push(s(&[
        "--seed", "7", "explain", "--model", "@/cnn.mmod", "--store", "@/small.mimg", "--image-id", "checker/checker_003.bin",
        "--superpixels", "50", "--samples", "300", "--top", "2", "--out", "@/explain.json",
    ]));
    steps
}

/// Every regular file under `root`, sorted.
pub fn list_files(root: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Drop the run directory and thread count from a resolved config.
pub fn normalize_config(bytes: &[u8], dir: &Path) -> Vec<u8> {
    let text = String::from_utf8(bytes.to_vec()).unwrap().replace(dir.to_str().unwrap(), "@");
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["threads"] = serde_json::Value::Null;
    serde_json::to_vec(&v).unwrap()
}

/// Run `steps` under `dir`, panicking on the first nonzero exit.
pub fn run_steps(dir: &Path, steps: &[Vec<String>]) {
    let d = dir.to_str().unwrap();
    for step in steps {
        let args: Vec<String> = step.iter().map(|a| a.replace('@', d)).collect();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(bin(&args), 0, "step failed: {args:?}");
    }
}
