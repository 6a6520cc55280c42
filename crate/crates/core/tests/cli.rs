use std::path::Path;
use std::process::{Command, Output};

use neuroencode::pipeline::RunConfig;

fn neuroencode(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroencode"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env("NEUROENCODE_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn summary(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn commands_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    let mut cfg = RunConfig::small("ignored");
    cfg.train.epochs = 1;
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = dir.path().join("out");

    let gen = summary(&neuroencode(&["gen", "--seed", "3"], &cfg_path, &out));
    assert_eq!(gen["subjects"].as_array().unwrap().len(), 2);
    summary(&neuroencode(&["features"], &cfg_path, &out));
    summary(&neuroencode(&["fit"], &cfg_path, &out));
    let ft = summary(&neuroencode(&["finetune", "--roi", "ac", "--subject", "S2", "--seed", "3"], &cfg_path, &out));
    assert_eq!(ft["runs"][0]["subject"], "S2");
    assert!(out.join("runs/S2/ac/best.bin").exists());
    assert!(!out.join("runs/S1").exists());
    let ev = summary(&neuroencode(&["eval"], &cfg_path, &out));
    assert_eq!(ev["runs"][0]["train_roi"], "ac");
    let rep = summary(&neuroencode(&["report"], &cfg_path, &out));
    assert_eq!(rep["roi_improvement_source"], "eval");

    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifests/finetune.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["train"], 3);
    assert_eq!(m["dataset_checksum"], gen["checksum"]);
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, "{}").unwrap();
    let out = dir.path().join("out");
    assert!(!neuroencode(&["report"], &cfg_path, &out).status.success());
    assert!(!neuroencode(&["gen", "--roi", "cortex"], &cfg_path, &out).status.success());
    assert!(!neuroencode(&["train"], &cfg_path, &out).status.success());
    let o = neuroencode(&["features"], &cfg_path, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run gen first"));
    let o = neuroencode(&["fit"], &dir.path().join("missing.json"), &out);
    assert_eq!(o.status.code(), Some(1));
}
