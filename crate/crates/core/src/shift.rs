//! Color-shifting a whole manifest against one reference image.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, DatasetRecord, COLOR_SHIFT_KEY, SPLIT_KEY};
use crate::error::{Error, Result};
use crate::io::{load_image, save_png, write_text};
use crate::provenance::{sha256_file, Provenance, StampBuilder};
use crate::transfer::{transfer_colors_detailed, TransferConfig, TransferReport};

pub const SHIFTED_MANIFEST: &str = "manifest.tsv";
pub const SHIFT_REPORT: &str = "shift_report.json";

/// Smallest coupling entry written to diagnostics dumps.
const DIAGNOSTICS_MIN_ENTRY: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOptions {
    /// The run fails when more than this fraction of records fail.
    pub failure_threshold: f64,
    pub dump_histograms: bool,
    pub dump_diagnostics: bool,
    /// Stamp written into every output; defaults to [`shift_provenance`].
    pub provenance: Option<Provenance>,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        Self {
            failure_threshold: 0.1,
            dump_histograms: false,
            dump_diagnostics: false,
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub row: usize,
    pub image_path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub image_path: String,
    pub output_path: String,
    pub report: TransferReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub provenance: Provenance,
    pub reference: String,
    pub reference_sha256: String,
    pub config: TransferConfig,
    pub n_records: usize,
    pub n_succeeded: usize,
    pub failures: Vec<RecordFailure>,
    pub mean_lum_w1_pre: Option<f64>,
    pub mean_lum_w1_post: Option<f64>,
    pub mean_chroma_cost_pre: Option<f64>,
    pub mean_chroma_cost_post: Option<f64>,
    pub mean_clamped_fraction: Option<f64>,
    pub records: Vec<RecordReport>,
}

#[derive(Debug, Clone)]
pub struct ShiftOutcome {
    pub manifest: DatasetManifest,
    pub summary: ShiftSummary,
}

/// Stamp for a shift run: transfer config plus reference image bytes.
pub fn shift_provenance(reference: &Path, cfg: &TransferConfig) -> Result<Provenance> {
    Ok(StampBuilder::new().json(cfg)?.file(reference)?.finish())
}

/// Shifts every record toward `reference`, writing PNGs under
/// `out_dir/images`, the new manifest and `shift_report.json`.
pub fn shift_dataset(
    manifest: &DatasetManifest,
    reference: &Path,
    cfg: &TransferConfig,
    out_dir: &Path,
    opts: &ShiftOptions,
) -> Result<ShiftOutcome> {
    cfg.validate()?;
    let ref_img = load_image(reference)?;
    let provenance = match &opts.provenance {
        Some(p) => p.clone(),
        None => shift_provenance(reference, cfg)?,
    };
    let stamp = provenance.to_string();
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;

    let names = output_names(&manifest.records);
    if opts.dump_histograms {
        let src = crate::color::rgb_to_lab(&ref_img);
        let l = crate::histogram::build_luminance_hist(&src, cfg.l_bins)?;
        let ab = crate::histogram::build_chroma_hist(&src, cfg.ab_bins, cfg.ab_bins)?;
        write_text(&out_dir.join("histograms/reference_L.tsv"), &l.to_columns())?;
        write_text(&out_dir.join("histograms/reference_ab.tsv"), &ab.to_columns())?;
    }

    let results: Vec<Result<(String, TransferReport)>> = manifest
        .records
        .par_iter()
        .zip(names.par_iter())
        .map(|(record, name)| {
            let src = load_image(&manifest.resolve(record))?;
            let min_entry = opts.dump_diagnostics.then_some(DIAGNOSTICS_MIN_ENTRY);
            let out = transfer_colors_detailed(&src, &ref_img, cfg, min_entry)?;
            let rel = format!("images/{name}.png");
            save_png(&out.image, &out_dir.join(&rel), Some(&stamp))?;
            if opts.dump_histograms {
                let d = &out.detail;
                write_text(&out_dir.join(format!("histograms/{name}_L.tsv")), &d.src_luminance.to_columns())?;
                write_text(&out_dir.join(format!("histograms/{name}_ab.tsv")), &d.src_chroma.to_columns())?;
            }
            if let Some(diag) = &out.detail.plan_diagnostics {
                let text = serde_json::to_string(diag)?;
                write_text(&out_dir.join(format!("diagnostics/{name}.json")), &text)?;
            }
            Ok((rel, out.report))
        })
        .collect();

    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (row, (record, result)) in manifest.records.iter().zip(results).enumerate() {
        match result {
            Ok((rel, report)) => {
                records.push(DatasetRecord {
                    image_path: rel.clone(),
                    color_shift: true,
                    ..record.clone()
                });
                reports.push(RecordReport {
                    image_path: record.image_path.clone(),
                    output_path: rel,
                    report,
                });
            }
            Err(e) => {
                log::warn!("{}: {e}", record.image_path);
                failures.push(RecordFailure {
                    row,
                    image_path: record.image_path.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let total = manifest.len();
    if total > 0 && failures.len() as f64 > opts.failure_threshold * total as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
            threshold: opts.failure_threshold,
        });
    }

    let mut prov = manifest.provenance.clone();
    if !failures.is_empty() {
        prov.remove(SPLIT_KEY);
    }
    let reference_sha256 = sha256_file(reference)?;
    prov.insert(COLOR_SHIFT_KEY.into(), "true".into());
    prov.insert("reference".into(), reference.display().to_string());
    prov.insert("reference_sha256".into(), reference_sha256.clone());
    prov.insert("provenance".into(), stamp);
    let shifted = DatasetManifest {
        records,
        provenance: prov,
        base_dir: out_dir.to_path_buf(),
    };
    shifted.write(&out_dir.join(SHIFTED_MANIFEST))?;

    let mean = |f: fn(&TransferReport) -> f64| -> Option<f64> {
        (!reports.is_empty())
            .then(|| reports.iter().map(|r| f(&r.report)).sum::<f64>() / reports.len() as f64)
    };
    let summary = ShiftSummary {
        provenance,
        reference: reference.display().to_string(),
        reference_sha256,
        config: cfg.clone(),
        n_records: total,
        n_succeeded: reports.len(),
        failures,
        mean_lum_w1_pre: mean(|r| r.lum_w1_pre),
        mean_lum_w1_post: mean(|r| r.lum_w1_post),
        mean_chroma_cost_pre: mean(|r| r.chroma_cost_pre),
        mean_chroma_cost_post: mean(|r| r.chroma_cost_post),
        mean_clamped_fraction: mean(|r| r.clamped_fraction),
        records: reports,
    };
    write_text(
        &out_dir.join(SHIFT_REPORT),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok(ShiftOutcome {
        manifest: shifted,
        summary,
    })
}

/// Output file stems for `records`, made unique by appending the row.
pub fn output_names(records: &[DatasetRecord]) -> Vec<String> {
    let mut used = HashSet::new();
    records
        .iter()
        .enumerate()
        .map(|(row, r)| {
            let stem = Path::new(&r.image_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| format!("image{row}"));
            let name = if used.contains(&stem) {
                format!("{stem}_{row}")
            } else {
                stem
            };
            used.insert(name.clone());
            name
        })
        .collect()
}

/// Where [`shift_dataset`] puts a given manifest's shifted copy.
pub fn shifted_manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join(SHIFTED_MANIFEST)
}
