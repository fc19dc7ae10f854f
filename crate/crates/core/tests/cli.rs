use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--d-psi", "8", "--d-phi", "4", "--d-g", "8", "--knn-k", "4", "--batch-size", "32",
    "--epochs-pretrain", "2", "--epochs-finetune", "2", "--encoder-hidden", "16", "--gate-hidden", "8",
    "--head-hidden", "8", "--kmeans-restarts", "2", "--seed", "3",
];

fn moegcl(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_moegcl")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "moegcl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_export_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    moegcl(&["synth", "--out", path(&data), "--clusters", "3", "--per-cluster", "15", "--dims", "6,5"]);
    let manifest = data.join("manifest.txt");
    assert!(data.join("view2.csv").exists() && data.join("labels.csv").exists());

    let ckpt = dir.path().join("model.moeg");
    let record = dir.path().join("run.txt");
    let mut args = vec!["train", "--manifest", path(&manifest), "--checkpoint", path(&ckpt), "--record", path(&record)];
    args.extend_from_slice(SMALL);
    moegcl(&args);
    let text = fs::read_to_string(&record).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,rec_loss,egc_loss,total_loss");
    assert_eq!(lines.len(), 1 + 4 + 1);
    assert!(lines[5].starts_with("metrics,"));
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"MOEG");

    let mut args = vec!["eval", "--manifest", path(&manifest), "--checkpoint", path(&ckpt)];
    args.extend_from_slice(SMALL);
    let out = String::from_utf8(moegcl(&args).stdout).unwrap();
    assert_eq!(out.trim(), lines[5]);

    let emb = dir.path().join("emb.csv");
    let mut args = vec!["export", "--manifest", path(&manifest), "--checkpoint", path(&ckpt), "--out", path(&emb)];
    args.extend_from_slice(SMALL);
    moegcl(&args);
    assert_eq!(fs::read_to_string(&emb).unwrap().lines().count(), 45);
    let side = fs::read_to_string(dir.path().join("emb.csv.assignments.csv")).unwrap();
    assert_eq!(side.lines().next(), Some("assignment,label"));

    let mut args = vec!["ablate", "--variant", "no-gcn", "--manifest", path(&manifest)];
    args.extend_from_slice(SMALL);
    let out = String::from_utf8(moegcl(&args).stdout).unwrap();
    assert!(out.lines().last().unwrap().starts_with("metrics,"));
}

#[test]
fn pretrain_then_train_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    moegcl(&["synth", "--out", path(&data), "--clusters", "2", "--per-cluster", "10", "--dims", "4"]);
    let manifest = data.join("manifest.txt");
    let pre = dir.path().join("pre.moeg");
    let mut args = vec!["pretrain", "--manifest", path(&manifest), "--checkpoint", path(&pre)];
    args.extend_from_slice(SMALL);
    let out = String::from_utf8(moegcl(&args).stdout).unwrap();
    assert_eq!(out.lines().count(), 1 + 2);

    let fine = dir.path().join("fine.moeg");
    let mut args = vec!["train", "--manifest", path(&manifest), "--checkpoint", path(&fine), "--init", path(&pre)];
    args.extend_from_slice(SMALL);
    let out = String::from_utf8(moegcl(&args).stdout).unwrap();
    assert_eq!(out.lines().count(), 1 + 2 + 1);
}

#[test]
fn bad_variant_and_missing_manifest_fail_cleanly() {
    let bin = env!("CARGO_BIN_EXE_moegcl");
    let out = Command::new(bin)
        .args(["ablate", "--variant", "no-such", "--manifest", "/nonexistent/m.txt"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
