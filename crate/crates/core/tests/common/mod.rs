#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otshift::color::RgbImage;
use otshift::dataset::{Cohort, DatasetManifest, DatasetRecord, Label, Timepoint};
use otshift::io::save_png;
use otshift::metrics::{predictions_to_jsonl, Condition, PredictionRecord};
use otshift::shift::output_names;
use otshift::transfer::TransferConfig;

/// Colonoscopy-like frame: pink mucosa with smooth shading, darker vessels,
/// specular highlights and a dark circular border, quantized to 8 bits.
pub fn endoscopy_like(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [
        rng.random_range(0.62..0.85),
        rng.random_range(0.25..0.42),
        rng.random_range(0.22..0.38),
    ];
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..6.3),
                rng.random_range(0.03..0.09),
            ]
        })
        .collect();
    let vessels: Vec<[f64; 4]> = (0..rng.random_range(3..7))
        .map(|_| {
            [
                rng.random_range(0.2..0.8),
                rng.random_range(0.05..0.2),
                rng.random_range(2.0..9.0),
                rng.random_range(0.0..6.3),
            ]
        })
        .collect();
    let spots: Vec<[f64; 3]> = (0..rng.random_range(3..9))
        .map(|_| {
            [
                rng.random_range(0.15..0.85),
                rng.random_range(0.15..0.85),
                rng.random_range(0.006..0.03),
            ]
        })
        .collect();
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let v = (y as f64 + 0.5) / h as f64;
            let r2 = (u - 0.5).powi(2) + (v - 0.5).powi(2);
            let mut shade = 1.0 - 1.6 * r2;
            for [fx, fy, ph, amp] in &waves {
                shade += amp * (fx * 6.28 * u + fy * 6.28 * v + ph).sin();
            }
            let mut c = base.map(|b| b * shade);
            for [y0, amp, freq, ph] in &vessels {
                let d = (v - y0 - amp * (freq * u + ph).sin()).abs();
                let k = (-(d / 0.012).powi(2)).exp() * 0.55;
                let vessel = [0.45 * shade, 0.1 * shade, 0.14 * shade];
                for i in 0..3 {
                    c[i] += k * (vessel[i] - c[i]);
                }
            }
            for [sx, sy, s] in &spots {
                let k = (-((u - sx).powi(2) + (v - sy).powi(2)) / (2.0 * s * s)).exp();
                for ch in &mut c {
                    *ch += k * (0.98 - *ch);
                }
            }
            if r2 > 0.22 {
                c = [0.02, 0.015, 0.015];
            }
            let noise: f64 = rng.random_range(-0.012..0.012);
            px.push(c.map(|ch| ((ch + noise).clamp(0.0, 1.0) * 255.0).round() / 255.0));
        }
    }
    RgbImage::new(w, h, px).unwrap()
}

/// Per-channel gain then offset, clamped and quantized.
pub fn tint(img: &RgbImage, gain: [f64; 3], offset: [f64; 3]) -> RgbImage {
    let px = img
        .pixels()
        .iter()
        .map(|p| {
            let mut o = [0.0; 3];
            for c in 0..3 {
                o[c] = ((p[c] * gain[c] + offset[c]).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
            o
        })
        .collect();
    RgbImage::new(img.width(), img.height(), px).unwrap()
}

pub fn record(path: &str, label: Label, timepoint: Timepoint, patient: &str, cohort: Cohort) -> DatasetRecord {
    DatasetRecord {
        image_path: path.to_string(),
        label,
        timepoint,
        patient_id: patient.to_string(),
        cohort,
        color_shift: false,
    }
}

/// Cohort sizes and class balance from the study: (cohort, tumor, no_tumor).
/// The per-split class balance of the ID data is not published; these
/// splits sum to the published ID totals.
pub const STUDY_SHAPE: [(Cohort, usize, usize); 5] = [
    (Cohort::IdTrain, 691, 646),
    (Cohort::IdVal, 232, 216),
    (Cohort::IdTest, 406, 379),
    (Cohort::FollowupLr, 80, 72),
    (Cohort::Ood, 31, 19),
];

pub fn study_shaped_manifest() -> DatasetManifest {
    let mut records = Vec::new();
    let id_timepoints = [Timepoint::Baseline, Timepoint::During, Timepoint::Restaging, Timepoint::Followup];
    for &(cohort, tumor, no_tumor) in &STUDY_SHAPE {
        for i in 0..tumor + no_tumor {
            let label = if i < tumor { Label::Tumor } else { Label::NoTumor };
            let (timepoint, patient) = match cohort {
                Cohort::FollowupLr => (Timepoint::Followup, format!("ww{:03}", i / 3)),
                Cohort::Ood => (Timepoint::External, format!("hk{i:03}")),
                _ => {
                    // 200 ID patients, each confined to one split.
                    let offset = match cohort {
                        Cohort::IdTrain => 0,
                        Cohort::IdVal => 104,
                        _ => 139,
                    };
                    let span = match cohort {
                        Cohort::IdTrain => 104,
                        Cohort::IdVal => 35,
                        _ => 61,
                    };
                    (id_timepoints[i % 4], format!("p{:03}", offset + i % span))
                }
            };
            records.push(record(&format!("{cohort}/{i:04}.jpg"), label, timepoint, &patient, cohort));
        }
    }
    DatasetManifest {
        records,
        ..Default::default()
    }
}

pub fn small_transfer() -> TransferConfig {
    TransferConfig {
        l_bins: 64,
        ab_bins: 16,
        ..Default::default()
    }
}

/// A study directory with images, manifests, a reference image, synthetic
/// predictions and `run.toml`.
pub struct Study {
    pub root: PathBuf,
    pub config: PathBuf,
}

pub struct StudySpec<'a> {
    pub models: &'a [&'a str],
    pub seeds: &'a [u64],
    pub cohorts: &'a [(Cohort, usize)],
    pub side: usize,
}

fn synthetic_prob(model: &str, seed: u64, condition: Condition, path: &str, label: Label) -> f64 {
    let mut h: u64 = 1469598103934665603;
    for b in model.bytes().chain(path.bytes()).chain(condition.as_str().bytes()) {
        h = (h ^ u64::from(b)).wrapping_mul(1099511628211);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h ^ seed);
    let noise: f64 = rng.random_range(-0.45..0.45);
    let center = if label == Label::Tumor { 0.68 } else { 0.32 };
    (center + noise).clamp(0.0, 1.0)
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, predictions_to_jsonl(preds).unwrap()).unwrap();
}

pub fn build_study(root: &Path, spec: &StudySpec) -> Study {
    let side = spec.side;
    save_png(&endoscopy_like(9999, side, side), &root.join("reference.png"), None).unwrap();
    let mut toml = String::from("output_root = \"out\"\nreference_image = \"reference.png\"\n");
    toml += &format!("seeds = {:?}\n", spec.seeds);
    toml += &format!("models = {:?}\n\n", spec.models);
    toml += "[transfer]\nl_bins = 64\nab_bins = 16\n\n";
    for (ci, &(cohort, n)) in spec.cohorts.iter().enumerate() {
        let mut records = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Tumor } else { Label::NoTumor };
            let rel = format!("images/{cohort}_{i:03}.png");
            let gain = [1.0 + 0.05 * (i % 3) as f64, 0.9 + 0.04 * (i % 4) as f64, 1.0];
            let img = tint(&endoscopy_like((ci * 1000 + i) as u64, side, side), gain, [0.0; 3]);
            save_png(&img, &root.join(&rel), None).unwrap();
            let tp = if cohort == Cohort::Ood { Timepoint::External } else { Timepoint::Followup };
            records.push(record(&rel, label, tp, &format!("{cohort}{i}"), cohort));
        }
        let m = DatasetManifest {
            records,
            ..Default::default()
        };
        let name = format!("{cohort}.tsv");
        m.write(&root.join(&name)).unwrap();
        toml += &format!("[cohorts.{cohort}]\nmanifest = \"{name}\"\n\n");

        let shifted = output_names(&m.records);
        for model in spec.models {
            for &seed in spec.seeds {
                for &condition in Condition::ALL {
                    let preds: Vec<PredictionRecord> = m
                        .records
                        .iter()
                        .zip(&shifted)
                        .map(|(r, stem)| {
                            let image_path = match condition {
                                Condition::NoShift => r.image_path.clone(),
                                Condition::ColorShift => format!("images/{stem}.png"),
                            };
                            PredictionRecord {
                                prob_tumor: synthetic_prob(model, seed, condition, &image_path, r.label),
                                image_path,
                                model_id: model.to_string(),
                                run_seed: seed,
                                condition,
                            }
                        })
                        .collect();
                    let p = root.join(format!("preds/{model}/{seed}/{condition}/{cohort}.jsonl"));
                    write_predictions(&p, &preds);
                }
            }
        }
    }
    let config = root.join("run.toml");
    std::fs::write(&config, toml).unwrap();
    Study {
        root: root.to_path_buf(),
        config,
    }
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
