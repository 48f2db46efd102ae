//! Compiles a C program against the generated header and static library.

use std::path::PathBuf;
use std::process::Command;

use modelrec::synth::{generate, SynthConfig};
use modelrec::train::{train, TrainConfig};

/// `target/<profile>`, found from this test binary's location.
fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_ranks() {
    let lib = target_dir().join("libmodelrec_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));

    let cfg = SynthConfig { n_models: 12, n_datasets: 3, seed: 9, ..SynthConfig::default() };
    let (corpus, _) = generate(&cfg).unwrap();
    let empty = modelrec::corpus::Corpus::empty(corpus.registry().clone());
    let ckpt = train(&corpus, &empty, &TrainConfig { max_epochs: 1, ..TrainConfig::default() }, None).unwrap();
    let ck = dir.path().join("ck.bin");
    ckpt.save(&ck).unwrap();

    let run = Command::new(&exe).arg(&ck).output().unwrap();
    assert!(run.status.success(), "smoke failed: {}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let (count, json) = stdout.trim().split_once(' ').unwrap();
    assert_eq!(count, "12");
    let ranked: Vec<serde_json::Value> = serde_json::from_str(json).unwrap();
    assert_eq!(ranked.len(), 3);
}
