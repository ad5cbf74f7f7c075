//! End-to-end evaluation from a declarative run config.
//!
//! ```toml
//! output_root = "out"
//! reference_image = "reference.png"
//! seeds = [0, 1, 2]
//! models = ["resnet50", "swin_base"]
//! predictions = "preds/{model}/{seed}/{condition}/{cohort}.jsonl"
//!
//! [transfer]
//! epsilon = 0.01
//!
//! [cohorts.id_test]
//! manifest = "manifests/id_test.tsv"
//! ```
//!
//! Relative paths resolve against the config file's directory. Outputs:
//! `shifted/<cohort>/` per cohort and `report/` with tables and figures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, Cohort, DatasetManifest};
use crate::error::{Error, Result};
use crate::io::write_text;
use crate::metrics::{
    build_report, check_threshold, load_predictions, render_report, score_predictions, Condition,
    MetricsReport, MissingCell, RunMetrics, DEFAULT_THRESHOLD,
};
use crate::provenance::{Provenance, StampBuilder};
use crate::shift::{shift_dataset, ShiftOptions, ShiftSummary};
use crate::transfer::TransferConfig;

pub const DEFAULT_PREDICTIONS: &str = "preds/{model}/{seed}/{condition}/{cohort}.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_root: PathBuf,
    pub reference_image: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub models: Vec<String>,
    /// Prediction file per cell; `{model}`, `{seed}`, `{condition}` and
    /// `{cohort}` are substituted. Records for other cells are ignored.
    #[serde(default = "default_predictions")]
    pub predictions: String,
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: f64,
    #[serde(default)]
    pub transfer: TransferConfig,
    pub cohorts: BTreeMap<Cohort, CohortConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_predictions() -> String {
    DEFAULT_PREDICTIONS.to_string()
}

fn default_failure_threshold() -> f64 {
    ShiftOptions::default().failure_threshold
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn prediction_path(&self, model: &str, seed: u64, condition: Condition, cohort: Cohort) -> PathBuf {
        let rel = self
            .predictions
            .replace("{model}", model)
            .replace("{seed}", &seed.to_string())
            .replace("{condition}", condition.as_str())
            .replace("{cohort}", cohort.as_str());
        self.resolve(Path::new(&rel))
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        self.transfer.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.models.is_empty() {
            return fail("models must not be empty".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.is_empty() || self.models[..i].contains(m) {
                return fail(format!("model {m:?} is empty or listed twice"));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return fail(format!("seed {s} listed twice"));
            }
        }
        if self.cohorts.is_empty() {
            return fail("no cohorts configured".into());
        }
        if let Some(c) = self.cohorts.keys().find(|c| !c.is_evaluation()) {
            return fail(format!("cohort {c} is not an evaluation cohort"));
        }
        if !self.predictions.contains("{cohort}") {
            return fail("predictions pattern must contain {cohort}".into());
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return fail(format!("failure_threshold {} outside [0, 1]", self.failure_threshold));
        }
        let reference = self.resolve(&self.reference_image);
        if !reference.is_file() {
            return fail(format!("reference image {} not found", reference.display()));
        }
        for (c, cc) in &self.cohorts {
            let m = self.resolve(&cc.manifest);
            if !m.is_file() {
                return fail(format!("manifest for {c} not found: {}", m.display()));
            }
        }
        Ok(())
    }
}

/// Tool version plus a hash of the config and the reference image bytes.
pub fn version_stamp(cfg: &RunConfig) -> Result<Provenance> {
    Ok(StampBuilder::new()
        .json(cfg)?
        .file(&cfg.resolve(&cfg.reference_image))?
        .finish())
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub provenance: Provenance,
    pub report: MetricsReport,
    pub shift: BTreeMap<Cohort, ShiftSummary>,
    pub files: Vec<PathBuf>,
}

impl EvaluateOutcome {
    pub fn is_partial(&self) -> bool {
        !self.report.missing.is_empty()
    }
}

struct Cell {
    model: String,
    seed: u64,
    condition: Condition,
    cohort: Cohort,
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvaluateOutcome> {
    cfg.validate()?;
    let provenance = version_stamp(cfg)?;
    let root = cfg.resolve(&cfg.output_root);
    let reference = cfg.resolve(&cfg.reference_image);

    let mut plain: BTreeMap<Cohort, DatasetManifest> = BTreeMap::new();
    for (&c, cc) in &cfg.cohorts {
        let m = load_manifest(&cfg.resolve(&cc.manifest))?;
        let sub = m.cohort(c);
        if sub.is_empty() {
            return Err(Error::Config(format!("manifest for {c} has no {c} records")));
        }
        plain.insert(c, sub);
    }
    let mut config_json = serde_json::to_value(cfg)?;
    config_json["provenance"] = serde_json::to_value(&provenance)?;
    write_text(
        &root.join("run_config.json"),
        &(serde_json::to_string_pretty(&config_json)? + "\n"),
    )?;

    let opts = ShiftOptions {
        failure_threshold: cfg.failure_threshold,
        provenance: Some(provenance.clone()),
        ..Default::default()
    };
    let mut shifted = BTreeMap::new();
    let mut shift_errors = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    for (&c, m) in &plain {
        log::info!("shifting {} {c} records", m.len());
        match shift_dataset(m, &reference, &cfg.transfer, &root.join("shifted").join(c.as_str()), &opts) {
            Ok(out) => {
                summaries.insert(c, out.summary);
                shifted.insert(c, out.manifest);
            }
            Err(e) => {
                log::error!("shifting {c} failed: {e}");
                shift_errors.insert(c, e.to_string());
            }
        }
    }

    let mut cells = Vec::new();
    for &cohort in cfg.cohorts.keys() {
        for &condition in Condition::ALL {
            for model in &cfg.models {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        model: model.clone(),
                        seed,
                        condition,
                        cohort,
                    });
                }
            }
        }
    }
    let results: Vec<std::result::Result<RunMetrics, MissingCell>> = cells
        .par_iter()
        .map(|cell| {
            let missing = |reason: String| MissingCell {
                model_id: cell.model.clone(),
                run_seed: cell.seed,
                condition: cell.condition,
                cohort: cell.cohort,
                reason,
            };
            let labels = match cell.condition {
                Condition::NoShift => &plain[&cell.cohort],
                Condition::ColorShift => match shifted.get(&cell.cohort) {
                    Some(m) => m,
                    None => return Err(missing(format!("shift failed: {}", shift_errors[&cell.cohort]))),
                },
            };
            let path = cfg.prediction_path(&cell.model, cell.seed, cell.condition, cell.cohort);
            if !path.is_file() {
                return Err(missing(format!("prediction file {} not found", path.display())));
            }
            let preds: Vec<_> = load_predictions(&path)
                .map_err(|e| missing(e.to_string()))?
                .into_iter()
                .filter(|p| p.model_id == cell.model && p.run_seed == cell.seed && p.condition == cell.condition)
                .collect();
            if preds.is_empty() {
                return Err(missing(format!("no records for this cell in {}", path.display())));
            }
            let mut runs = score_predictions(&preds, labels, cell.cohort, cfg.threshold)
                .map_err(|e| missing(e.to_string()))?;
            Ok(runs.remove(0))
        })
        .collect();
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(m) => {
                log::warn!("missing cell: {m}");
                missing.push(m);
            }
        }
    }

    let report = build_report(
        runs,
        missing,
        Some(cfg.models.clone()),
        cfg.threshold,
        Some(provenance.to_string()),
    )?;
    let files = render_report(&report, &root.join("report"))?;
    Ok(EvaluateOutcome {
        provenance,
        report,
        shift: summaries,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
output_root = "out"
reference_image = "ref.png"
seeds = [0, 1]
models = ["a", "b"]

[transfer]
epsilon = 0.02

[cohorts.ood]
manifest = "ood.tsv"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(CONFIG, Path::new("/base")).unwrap();
        assert_eq!(cfg.threshold, 0.5);
        assert_eq!(cfg.transfer.epsilon, 0.02);
        assert_eq!(cfg.transfer.l_bins, 256);
        assert_eq!(
            cfg.prediction_path("a", 1, Condition::ColorShift, Cohort::Ood),
            PathBuf::from("/base/preds/a/1/color_shift/ood.jsonl")
        );
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{CONFIG}\nbogus = 1\n");
        assert!(RunConfig::from_toml(&text, Path::new(".")).is_err());
        let text = CONFIG.replace("[cohorts.ood]", "[cohorts.external]");
        assert!(RunConfig::from_toml(&text, Path::new(".")).is_err());
    }

    #[test]
    fn validation_failures() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml(CONFIG, dir.path()).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("reference image"), "{msg}");
        let mut c = cfg.clone();
        c.seeds.clear();
        assert!(c.validate().unwrap_err().to_string().contains("seeds"));
        let mut c = cfg;
        c.cohorts.insert(Cohort::IdTrain, CohortConfig { manifest: "x".into() });
        assert!(c.validate().unwrap_err().to_string().contains("id_train"));
    }

    #[test]
    fn stamp_tracks_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ref.png"), b"not really a png").unwrap();
        let cfg = RunConfig::from_toml(CONFIG, dir.path()).unwrap();
        let a = version_stamp(&cfg).unwrap();
        assert_eq!(a, version_stamp(&cfg).unwrap());
        assert_eq!(a.config_hash.len(), 64);
        let mut c = cfg.clone();
        c.transfer.epsilon = 0.03;
        assert_ne!(a, version_stamp(&c).unwrap());
        std::fs::write(dir.path().join("ref.png"), b"another").unwrap();
        assert_ne!(a, version_stamp(&cfg).unwrap());
    }
}
