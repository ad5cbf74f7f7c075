mod common;

use std::path::Path;
use std::process::{Command, Output};

use otshift::dataset::{Cohort, DatasetManifest, Label, Timepoint};
use otshift::io::save_png;
use otshift::metrics::{Condition, PredictionRecord};

use common::*;

fn otshift(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otshift"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("OTSHIFT_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_dataset(dir: &Path, n: usize) -> DatasetManifest {
    save_png(&endoscopy_like(77, 24, 24), &dir.join("ref.png"), None).unwrap();
    let mut records = Vec::new();
    for i in 0..n {
        let rel = format!("img/f{i}.png");
        save_png(&endoscopy_like(i as u64, 30, 20), &dir.join(&rel), None).unwrap();
        let label = if i < n / 2 { Label::Tumor } else { Label::NoTumor };
        records.push(record(&rel, label, Timepoint::Followup, &format!("p{i}"), Cohort::FollowupLr));
    }
    let m = DatasetManifest {
        records,
        ..Default::default()
    };
    m.write(&dir.join("m.tsv")).unwrap();
    m
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = otshift(&["--help"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for sub in ["preprocess", "shift", "score", "report", "evaluate", "OTSHIFT_THREADS"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn shift_score_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let m = small_dataset(d, 6);
    let o = otshift(
        &["shift", "--manifest", "m.tsv", "--reference", "ref.png", "--out", "sh", "--l-bins", "32", "--ab-bins", "12"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("shifted 6 of 6 images"));
    assert!(d.join("sh/images/f0.png").is_file());
    assert!(d.join("sh/shift_report.json").is_file());

    let mut preds = Vec::new();
    for (condition, base) in [(Condition::NoShift, ""), (Condition::ColorShift, "images/")] {
        for (i, r) in m.records.iter().enumerate() {
            let image_path = match condition {
                Condition::NoShift => r.image_path.clone(),
                Condition::ColorShift => format!("{base}f{i}.png"),
            };
            preds.push(PredictionRecord {
                image_path,
                prob_tumor: if i % 3 == 0 { 0.2 } else { 0.9 },
                model_id: "swin_base".into(),
                run_seed: 1,
                condition,
            });
        }
    }
    let (plain, shifted): (Vec<_>, Vec<_>) = preds.into_iter().partition(|p| p.condition == Condition::NoShift);
    write_predictions(&d.join("plain.jsonl"), &plain);
    write_predictions(&d.join("shifted.jsonl"), &shifted);

    let o = otshift(
        &["score", "--predictions", "plain.jsonl", "--manifest", "m.tsv", "--cohort", "followup_lr", "--out", "s1"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("swin_base seed 1 no_shift followup_lr"));
    let o = otshift(
        &["score", "--predictions", "shifted.jsonl", "--manifest", "sh/manifest.tsv", "--cohort", "followup_lr", "--out", "s2"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = otshift(&["report", "--runs", "s1/runs.json", "s2/runs.json", "--out", "rep"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(d.join("rep/table_followup_lr.txt")).unwrap();
    assert!(table.contains("swin_base") && table.contains("| Color Shift"), "{table}");
}

#[test]
fn score_rejects_orphans_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d, 2);
    let preds = vec![PredictionRecord {
        image_path: "img/unknown.png".into(),
        prob_tumor: 0.5,
        model_id: "m".into(),
        run_seed: 0,
        condition: Condition::NoShift,
    }];
    write_predictions(&d.join("p.jsonl"), &preds);
    let o = otshift(
        &["score", "--predictions", "p.jsonl", "--manifest", "m.tsv", "--cohort", "followup_lr", "--out", "s"],
        d,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("img/unknown.png"));
}

#[test]
fn evaluate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let study = build_study(
        dir.path(),
        &StudySpec {
            models: &["m"],
            seeds: &[0],
            cohorts: &[(Cohort::Ood, 4)],
            side: 16,
        },
    );
    let cfg = study.config.to_str().unwrap();
    let o = otshift(&["evaluate", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("table_ood.txt"));

    std::fs::remove_file(study.root.join("preds/m/0/no_shift/ood.jsonl")).unwrap();
    let o = otshift(&["evaluate", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("missing: model m seed 0 condition no_shift"));

    let text = std::fs::read_to_string(&study.config).unwrap();
    std::fs::write(&study.config, text.replace("seeds = [0]", "seeds = []")).unwrap();
    let o = otshift(&["evaluate", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));
}

#[test]
fn preprocess_writes_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d, 3);
    let o = otshift(&["preprocess", "--manifest", "m.tsv", "--out", "t"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let index = std::fs::read_to_string(d.join("t/index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 4);
    let bytes = std::fs::read(d.join("t/f0.npy")).unwrap();
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    assert_eq!(bytes.len(), 10 + header_len + 4 * 3 * 224 * 224);
    assert!(String::from_utf8_lossy(&bytes[10..10 + header_len]).contains("(3, 224, 224)"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_otshift"))
        .args(["evaluate", "--config", "none.toml"])
        .current_dir(dir.path())
        .env("OTSHIFT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("OTSHIFT_THREADS"));
}
