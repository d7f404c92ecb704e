use std::path::Path;
use std::process::{Command, Output};

use balora::adapters::checkpoint::Checkpoint;
use balora::linalg::Matrix;

fn balora(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balora"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("{key} missing in\n{out}"))
        .parse()
        .unwrap()
}

fn write_weights(dir: &Path) {
    let mut ck = Checkpoint::new();
    ck.push("w", Matrix::from_diag(&[3.0, 2.0, 1.0]));
    ck.save(dir.join("w.balr")).unwrap();
}

const SMALL: &str = r#"{
  "data": {"pretrain_size": 200, "finetune_size": 120, "test_size": 100},
  "pretrain": {"epochs": 2},
  "optim": {"lr": 1e-3, "batch_size": 32, "epochs": 1},
  "seeds": 2
}"#;

#[test]
fn pissa_adapter_reconstructs_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    write_weights(dir.path());
    let o = balora(
        &["init-adapter", "--weights", "w.balr", "--rank", "1", "--kind", "pissa", "--out", "a.balr"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(field(&out, "reconstruction_error") < 1e-10);
    assert!((field(&out, "ab_frobenius") - 3.0).abs() < 1e-12);
    assert!(out.contains("residual_spectrum: count 2 max 2.000000e0"));
    assert!(dir.path().join("a.balr").exists());
}

#[test]
fn lora_adapter_starts_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_weights(dir.path());
    let o = balora(
        &["init-adapter", "--weights", "w.balr", "--rank", "2", "--kind", "lora", "--out", "a.balr"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    assert_eq!(field(&stdout(&o), "ab_frobenius"), 0.0);
    assert_eq!(field(&stdout(&o), "reconstruction_error"), 0.0);
}

#[test]
fn oversized_rank_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_weights(dir.path());
    let o = balora(
        &["init-adapter", "--weights", "w.balr", "--rank", "4", "--kind", "pissa", "--out", "a.balr"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("broken.json", "{\"seeds\": "),
        ("unknown.json", "{\"sedes\": 3}"),
        ("invalid.json", "{\"optim\": {\"lr\": -1.0}}"),
    ] {
        std::fs::write(dir.path().join(name), text).unwrap();
        let o = balora(&["train", "--config", name], dir.path());
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = balora(&["train"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_outputs_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    let o = balora(&["train", "--config", "small.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(dir.path().join("small-report.json")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("small-report.csv")).unwrap();
    // header plus one row per method
    assert_eq!(csv.lines().count(), 5);

    let o = balora(&["train", "--config", "small.json"], dir.path());
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(dir.path().join("small-report.json")).unwrap());

    let ckpt = dir.path().join("small-checkpoints/ba_lora.balr");
    let bytes = std::fs::read(&ckpt).unwrap();
    let copy = dir.path().join("copy.balr");
    Checkpoint::load(&ckpt).unwrap().save(&copy).unwrap();
    assert_eq!(bytes, std::fs::read(&copy).unwrap());

    let o = balora(
        &["gen-data", "--config", "small.json", "--split", "ood", "--out", "ood.balr", "--seed", "0"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let o = balora(
        &["eval", "--checkpoint", "small-checkpoints/ba_lora.balr", "--data", "ood.balr"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(field(&out, "rows"), 100.0);
    let acc = field(&out, "accuracy");
    assert!((0.0..=1.0).contains(&acc));
    assert!(field(&out, "perplexity") >= 1.0);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = balora(&["grad-check", "--trials", "3"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(" ok")).count(), 8);
}

#[test]
fn quant_error_reports_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let mut ck = Checkpoint::new();
    ck.push("w", Matrix::from_fn(16, 16, |i, j| 1.0 / (1.0 + i as f64 + j as f64)));
    ck.save(dir.path().join("h.balr")).unwrap();
    let o = balora(&["quant-error", "--weights", "h.balr", "--rank", "4"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let ratio = field(&stdout(&o).replace("ratio ", "ratio: "), "ratio");
    assert!(ratio.is_finite() && ratio > 0.0);
}
