mod common;

use std::path::Path;
use std::process::{Command, Output};

use siamddi::checkpoint::Checkpoint;
use siamddi::data::{write_interactions, write_manifest, DrugRecord, Interaction};
use siamddi::eval::EvalReport;

fn siamddi(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamddi"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_one_line_error(o: &Output) {
    assert!(!o.status.success());
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with("error: kind="), "stderr: {err}");
}

/// Writes a 16-drug glyph dataset with a 32 px tower config into `dir`.
fn small_dataset(dir: &Path) {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut records = Vec::new();
    for i in 0..16u64 {
        let id = (500 + i).to_string();
        common::glyph(32, i)
            .save_png(&images.join(format!("{id}.png")))
            .unwrap();
        records.push(DrugRecord {
            drug_id: id.clone(),
            name: format!("drug {id}"),
            image_path: format!("{id}.png"),
        });
    }
    let mut rows = Vec::new();
    for i in 0..16 {
        for j in i + 1..16 {
            if (i * 7 + j * 3) % 4 == 0 {
                continue;
            }
            rows.push(Interaction {
                drug_id_a: records[i].drug_id.clone(),
                drug_id_b: records[j].drug_id.clone(),
                label: ((i + j) % 3 == 0) as u8,
            });
        }
    }
    write_manifest(&dir.join("manifest.csv"), &records).unwrap();
    write_interactions(&dir.join("interactions.csv"), &rows).unwrap();
    std::fs::write(
        dir.join("run.conf"),
        "image_size = 32\nconv_filters = 8,8\nkernel = 5\npool = 2\nfc_sizes = 16,8\n\
         lr = 0.001\nmanifest = manifest.csv\ninteractions = interactions.csv\nimages = images\n",
    )
    .unwrap();
}

fn train(dir: &Path, ckpt: &str, epochs: &str) -> Output {
    siamddi(
        &[
            "train",
            "--config",
            "run.conf",
            "--checkpoint",
            ckpt,
            "--epochs",
            epochs,
        ],
        dir,
    )
}

#[test]
fn predict_missing_image_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    assert!(train(dir.path(), "m.ckpt", "1").status.success());
    let o = siamddi(
        &[
            "predict",
            "--checkpoint",
            "m.ckpt",
            "images/500.png",
            "nope/missing.png",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_one_line_error(&o);
    assert!(stderr(&o).contains("nope/missing.png"));
}

#[test]
fn predict_line_format_and_threshold_override() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    assert!(train(dir.path(), "m.ckpt", "2").status.success());
    let o = siamddi(
        &[
            "predict",
            "--checkpoint",
            "m.ckpt",
            "--threshold",
            "0.65",
            "images/500.png",
            "images/501.png",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim().split(' ').collect();
    assert_eq!(fields.len(), 3);
    let d: f64 = fields[0]
        .strip_prefix("distance=")
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(fields[1], "threshold=0.65");
    let verdict: bool = fields[2]
        .strip_prefix("interact=")
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(verdict, d >= 0.65);
}

#[test]
fn eval_honors_threshold_verbatim_and_writes_text_report() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    assert!(train(dir.path(), "m.ckpt", "1").status.success());
    let o = siamddi(
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--threshold",
            "0.65",
            "--report",
            "r.txt",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "threshold=0.65"));
    let json = out
        .lines()
        .find_map(|l| l.strip_prefix("report_json="))
        .unwrap();
    let r = EvalReport::from_json(json).unwrap();
    assert_eq!(r.threshold, 0.65);
    let text = std::fs::read_to_string(dir.path().join("r.txt")).unwrap();
    assert_eq!(text, r.to_text());
}

#[test]
fn zero_epochs_still_writes_a_usable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let o = train(dir.path(), "zero.ckpt", "0");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("epoch=1"));
    assert!(stdout(&o).contains("epochs=0"));
    let o = siamddi(&["eval", "--checkpoint", "zero.ckpt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let a = train(dir.path(), "a.ckpt", "2");
    let b = train(dir.path(), "b.ckpt", "2");
    assert!(a.status.success() && b.status.success());
    let epoch_lines = |o: &Output| -> Vec<String> {
        stdout(o)
            .lines()
            .filter(|l| l.starts_with("epoch="))
            .map(String::from)
            .collect()
    };
    assert_eq!(epoch_lines(&a), epoch_lines(&b));
    let ca = Checkpoint::load(&dir.path().join("a.ckpt")).unwrap();
    let cb = Checkpoint::load(&dir.path().join("b.ckpt")).unwrap();
    assert_eq!(ca.tensors, cb.tensors);
}

#[test]
fn wrong_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.ckpt"), b"NOPE\x01\x00\x00\x00rest").unwrap();
    let o = siamddi(&["eval", "--checkpoint", "bad.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_one_line_error(&o);
    assert!(stderr(&o).contains("kind=checkpoint"), "{}", stderr(&o));
}

#[test]
fn incompatible_architecture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    assert!(train(dir.path(), "m.ckpt", "0").status.success());
    let o = siamddi(&["eval", "--checkpoint", "m.ckpt", "--stn"], dir.path());
    assert_one_line_error(&o);
    assert!(stderr(&o).contains("kind=incompatible"), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_are_single_lines() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["train", "--epochs", "many"],
        vec!["train", "--optimizer", "sgd", "--checkpoint", "x.ckpt"],
        vec!["build-pairs", "--output", "p.csv"],
        vec!["baseline", "--kind", "nothing"],
    ] {
        let o = siamddi(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_one_line_error(&o);
    }
}

#[test]
fn unknown_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.conf"), "epochz = 3\n").unwrap();
    let o = siamddi(&["train", "--config", "c.conf"], dir.path());
    assert_one_line_error(&o);
    assert!(stderr(&o).contains("epochz"));
}

#[test]
fn ssim_baseline_reports() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let o = siamddi(
        &["baseline", "--config", "run.conf", "--kind", "ssim"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("report_json=").map(String::from))
        .unwrap();
    let r = EvalReport::from_json(&json).unwrap();
    assert!(r.confusion.total() > 0);
    assert!((0.0..=1.0).contains(&r.accuracy));
}

#[test]
fn build_pairs_collapses_reciprocal_rows() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    std::fs::write(
        dir.path().join("raw.csv"),
        "drug_id_a,drug_id_b,label\n500,501,1\n501,500,1\n502,502,0\n503,500,0\n",
    )
    .unwrap();
    let o = siamddi(
        &[
            "build-pairs",
            "--config",
            "run.conf",
            "--interactions",
            "raw.csv",
            "--output",
            "p.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("pairs=2 positives=1 negatives=1"));
    let written = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(written, "drug_id_a,drug_id_b,label\n500,501,1\n500,503,0\n");
}
