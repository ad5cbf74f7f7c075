//! File formats shared with the prediction producer, and property tests
//! over the public API.

mod common;

use proptest::prelude::*;

use otshift::color::RgbImage;
use otshift::dataset::{parse_manifest, Cohort, DatasetManifest, Label, Timepoint};
use otshift::metrics::{
    aggregate_runs, confusion, parse_predictions, Condition, ConfusionMatrix, Metrics,
    PredictionRecord, RunMetrics,
};
use otshift::transfer::{transfer_colors, transfer_colors_detailed};

use common::*;

#[test]
fn prediction_line_format() {
    let line = r#"{"image_path":"images/a.png","prob_tumor":0.75,"model_id":"vit_base16","run_seed":4,"condition":"color_shift"}"#;
    let recs = parse_predictions(line, "x").unwrap();
    assert_eq!(
        recs,
        vec![PredictionRecord {
            image_path: "images/a.png".into(),
            prob_tumor: 0.75,
            model_id: "vit_base16".into(),
            run_seed: 4,
            condition: Condition::ColorShift,
        }]
    );
    assert_eq!(serde_json::to_string(&recs[0]).unwrap(), line);
    assert!(parse_predictions(&line.replace("0.75", "-0.1"), "x").is_err());
    assert!(parse_predictions(&line.replace("\"run_seed\":4,", ""), "x").is_err());
}

#[test]
fn manifest_text_round_trips() {
    let mut m = study_shaped_manifest();
    m.provenance.insert("source".into(), "synthetic".into());
    let (back, warnings) = parse_manifest(&m.to_text(), "mem").unwrap();
    assert!(warnings.is_empty());
    assert_eq!(back.records, m.records);
    assert_eq!(back.provenance, m.provenance);
}

#[test]
fn color_shift_header_marks_records() {
    let text = "# color_shift: true\nimages/a.png\ttumor\tfollowup\tp1\tfollowup_lr\n";
    let (m, _) = parse_manifest(text, "mem").unwrap();
    assert!(m.records[0].color_shift);
}

#[test]
fn split_header_mismatch_is_rejected() {
    let text = "# split: ood=2\na.png\ttumor\texternal\tp1\tood\n";
    assert!(parse_manifest(text, "mem").is_err());
}

fn labelled(labels: &[bool], probs: &[f64]) -> (DatasetManifest, Vec<PredictionRecord>) {
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let l = if t { Label::Tumor } else { Label::NoTumor };
            record(&format!("{i}"), l, Timepoint::External, "p", Cohort::Ood)
        })
        .collect();
    let preds = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| PredictionRecord {
            image_path: format!("{i}"),
            prob_tumor: p,
            model_id: "m".into(),
            run_seed: 0,
            condition: Condition::NoShift,
        })
        .collect();
    (DatasetManifest { records, ..Default::default() }, preds)
}

fn run_with(acc: f64, seed: u64) -> RunMetrics {
    RunMetrics {
        model_id: "m".into(),
        run_seed: seed,
        condition: Condition::ColorShift,
        cohort: Cohort::Ood,
        confusion: ConfusionMatrix::default(),
        metrics: Metrics { accuracy: acc, sensitivity: None, specificity: Some(acc) },
        n_unscored: 0,
    }
}

proptest! {
    #[test]
    fn confusion_ignores_prediction_order(
        data in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..60),
        rot in 0usize..60,
    ) {
        let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
        let probs: Vec<f64> = data.iter().map(|d| d.1).collect();
        let (m, mut preds) = labelled(&labels, &probs);
        let a = confusion(&preds, &m, 0.5).unwrap();
        let k = rot % preds.len();
        preds.rotate_left(k);
        preds.reverse();
        prop_assert_eq!(a, confusion(&preds, &m, 0.5).unwrap());
        prop_assert_eq!(a.total(), labels.len());
    }

    #[test]
    fn identical_runs_have_zero_spread(acc in 0.0f64..=1.0, n in 1u64..12) {
        let runs: Vec<_> = (0..n).map(|s| run_with(acc, s)).collect();
        let agg = aggregate_runs(&runs).unwrap();
        prop_assert_eq!(agg.accuracy.std, Some(0.0));
        prop_assert_eq!(agg.accuracy.mean, Some(acc));
        prop_assert_eq!(agg.sensitivity.n_undefined, n as usize);
    }

    #[test]
    fn aggregates_stay_in_unit_range(accs in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let runs: Vec<_> = accs.iter().enumerate().map(|(s, &a)| run_with(a, s as u64)).collect();
        let agg = aggregate_runs(&runs).unwrap();
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!((agg.accuracy.mean.unwrap() - mean).abs() < 1e-9);
        prop_assert!((agg.accuracy.std.unwrap() - std).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&agg.accuracy.mean.unwrap()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transfer_keeps_luminance_order(seed in 0u64..10_000, ref_seed in 0u64..10_000, g in 0.7f64..1.3) {
        let src = endoscopy_like(seed, 24, 20);
        let reference = tint(&endoscopy_like(ref_seed, 24, 20), [g, 1.0, 2.0 - g], [0.0; 3]);
        let out = transfer_colors_detailed(&src, &reference, &small_transfer(), None).unwrap();
        let report = &out.report;
        prop_assert!(report.lum_w1_post <= report.lum_w1_pre + 1e-12);
        prop_assert!((0.0..=1.0).contains(&report.clamped_fraction));
        let map = &out.detail.luminance_map;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=400 {
            let v = map.apply(i as f64 / 4.0);
            prop_assert!(v >= prev - 1e-12, "map decreases at L={}", i as f64 / 4.0);
            prev = v;
        }
        let out = out.image;
        prop_assert!(out.pixels().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn uniform_image_is_a_fixed_point() {
    let img = RgbImage::filled(10, 8, [0.6, 0.3, 0.3]).unwrap();
    let (out, _) = transfer_colors(&img, &img, &small_transfer()).unwrap();
    for (a, b) in img.pixels().iter().zip(out.pixels()) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-9);
        }
    }
}
