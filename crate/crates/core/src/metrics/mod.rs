//! Scoring prediction files against manifest labels and aggregating runs.
//!
//! A prediction file is JSON lines, one object per image:
//!
//! ```text
//! {"image_path":"images/p001_a.png","prob_tumor":0.91,"model_id":"swin_base","run_seed":0,"condition":"no_shift"}
//! ```
//!
//! `image_path` must equal the `image_path` column of exactly one manifest
//! record; `color_shift` predictions are scored against the shifted manifest.

mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, DatasetManifest, Label};
use crate::error::{Error, Result};

pub use report::{render_cm_png, render_report, render_table};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

vocabulary!(Condition, "condition" {
    NoShift => "no_shift",
    ColorShift => "color_shift",
});

impl Condition {
    pub fn title(self) -> &'static str {
        match self {
            Condition::NoShift => "No Color Shift",
            Condition::ColorShift => "Color Shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_path: String,
    pub prob_tumor: f64,
    pub model_id: String,
    pub run_seed: u64,
    pub condition: Condition,
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Prediction {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.prob_tumor) {
            return Err(err(format!("prob_tumor {} outside [0, 1]", rec.prob_tumor)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}

pub fn predictions_to_jsonl(preds: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Tumor, Label::Tumor) => self.tp += 1,
            (Label::Tumor, Label::NoTumor) => self.fn_ += 1,
            (Label::NoTumor, Label::Tumor) => self.fp += 1,
            (Label::NoTumor, Label::NoTumor) => self.tn += 1,
        }
    }
}

impl std::ops::AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")))
    }
}

/// Ties at the threshold count as tumor.
pub fn predicted_label(prob_tumor: f64, threshold: f64) -> Label {
    if prob_tumor >= threshold {
        Label::Tumor
    } else {
        Label::NoTumor
    }
}

pub fn confusion(
    preds: &[PredictionRecord],
    labels: &DatasetManifest,
    threshold: f64,
) -> Result<ConfusionMatrix> {
    check_threshold(threshold)?;
    let truth: HashMap<&str, Label> = labels
        .records
        .iter()
        .map(|r| (r.image_path.as_str(), r.label))
        .collect();
    let mut seen = HashSet::new();
    let mut orphans = Vec::new();
    let mut cm = ConfusionMatrix::default();
    for p in preds {
        let Some(&label) = truth.get(p.image_path.as_str()) else {
            if !orphans.contains(&p.image_path) {
                orphans.push(p.image_path.clone());
            }
            continue;
        };
        if !seen.insert(p.image_path.as_str()) {
            return Err(Error::DuplicatePrediction(p.image_path.clone()));
        }
        cm.add(label, predicted_label(p.prob_tumor, threshold));
    }
    if !orphans.is_empty() {
        return Err(Error::OrphanPredictions(orphans));
    }
    Ok(cm)
}

/// Sensitivity and specificity are `None` when their class is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl Metrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => Some(self.accuracy),
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
        }
    }
}

pub fn metrics_from_cm(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Undefined("accuracy of an empty confusion matrix"));
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / n as f64,
        sensitivity: ratio(cm.tp, cm.positives()),
        specificity: ratio(cm.tn, cm.negatives()),
    })
}

vocabulary!(Metric, "metric" {
    Accuracy => "accuracy",
    Sensitivity => "sensitivity",
    Specificity => "specificity",
});

impl Metric {
    pub fn short(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc",
            Metric::Sensitivity => "Sens",
            Metric::Specificity => "Spec",
        }
    }
}

/// Identifies one aggregate: all seeds of one model, condition and cohort.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model_id: String,
    pub condition: Condition,
    pub cohort: Cohort,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model_id, self.condition, self.cohort)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub model_id: String,
    pub run_seed: u64,
    pub condition: Condition,
    pub cohort: Cohort,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Manifest records of the cohort with no prediction.
    pub n_unscored: usize,
}

impl RunMetrics {
    pub fn key(&self) -> CellKey {
        CellKey {
            model_id: self.model_id.clone(),
            condition: self.condition,
            cohort: self.cohort,
        }
    }
}

/// Scores every (model, seed, condition) group in `preds` against the
/// records of `cohort` in `labels`.
pub fn score_predictions(
    preds: &[PredictionRecord],
    labels: &DatasetManifest,
    cohort: Cohort,
    threshold: f64,
) -> Result<Vec<RunMetrics>> {
    let sub = labels.cohort(cohort);
    let mut groups: BTreeMap<(String, u64, Condition), Vec<PredictionRecord>> = BTreeMap::new();
    for p in preds {
        groups
            .entry((p.model_id.clone(), p.run_seed, p.condition))
            .or_default()
            .push(p.clone());
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((model_id, run_seed, condition), group) in groups {
        let cm = confusion(&group, &sub, threshold)?;
        let n_unscored = sub.len() - cm.total();
        if n_unscored > 0 {
            log::warn!("{model_id} seed {run_seed} {condition} {cohort}: {n_unscored} records have no prediction");
        }
        out.push(RunMetrics {
            metrics: metrics_from_cm(&cm)?,
            model_id,
            run_seed,
            condition,
            cohort,
            confusion: cm,
            n_unscored,
        });
    }
    Ok(out)
}

/// Mean and population standard deviation over the runs where the metric
/// is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_undefined: usize,
}

impl Summary {
    pub fn from_values(values: &[Option<f64>]) -> Summary {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let n_undefined = values.len() - defined.len();
        let Some(&x0) = defined.first() else {
            return Summary {
                mean: None,
                std: None,
                n_undefined,
            };
        };
        // Shifting by the first value keeps identical runs at exactly zero spread.
        let n = defined.len() as f64;
        let shift = defined.iter().map(|x| x - x0).sum::<f64>() / n;
        let var = defined.iter().map(|x| (x - x0 - shift).powi(2)).sum::<f64>() / n;
        Summary {
            mean: Some(x0 + shift),
            std: Some(var.sqrt()),
            n_undefined,
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => f.write_str(&format_mean_std(m, s)),
            _ => f.write_str("undefined"),
        }
    }
}

/// Two-decimal `m ± s`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub key: CellKey,
    pub seeds: Vec<u64>,
    pub accuracy: Summary,
    pub sensitivity: Summary,
    pub specificity: Summary,
    /// Confusion matrices summed over runs.
    pub pooled: ConfusionMatrix,
}

impl Aggregate {
    pub fn summary(&self, m: Metric) -> &Summary {
        match m {
            Metric::Accuracy => &self.accuracy,
            Metric::Sensitivity => &self.sensitivity,
            Metric::Specificity => &self.specificity,
        }
    }
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<Aggregate> {
    let Some(first) = runs.first() else {
        return Err(Error::Config("no runs to aggregate".into()));
    };
    let key = first.key();
    let mut seeds = Vec::with_capacity(runs.len());
    let mut pooled = ConfusionMatrix::default();
    for r in runs {
        if r.key() != key {
            return Err(Error::MixedCells(format!("{} and {}", key, r.key())));
        }
        if seeds.contains(&r.run_seed) {
            return Err(Error::MixedCells(format!("{key} has seed {} twice", r.run_seed)));
        }
        seeds.push(r.run_seed);
        pooled += r.confusion;
    }
    let summary = |m: Metric| {
        Summary::from_values(&runs.iter().map(|r| r.metrics.get(m)).collect::<Vec<_>>())
    };
    Ok(Aggregate {
        key,
        seeds,
        accuracy: summary(Metric::Accuracy),
        sensitivity: summary(Metric::Sensitivity),
        specificity: summary(Metric::Specificity),
        pooled,
    })
}

/// A (model, seed, condition, cohort) combination with no usable result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCell {
    pub model_id: String,
    pub run_seed: u64,
    pub condition: Condition,
    pub cohort: Cohort,
    pub reason: String,
}

impl fmt::Display for MissingCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model {} seed {} condition {} cohort {}: {}",
            self.model_id, self.run_seed, self.condition, self.cohort, self.reason
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Option<String>,
    pub threshold: f64,
    pub std_kind: String,
    /// Row order for tables and figures.
    pub models: Vec<String>,
    pub runs: Vec<RunMetrics>,
    pub aggregates: Vec<Aggregate>,
    pub missing: Vec<MissingCell>,
}

impl MetricsReport {
    pub fn aggregate(&self, model: &str, condition: Condition, cohort: Cohort) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| {
            a.key.model_id == model && a.key.condition == condition && a.key.cohort == cohort
        })
    }

    pub fn cohorts(&self) -> Vec<Cohort> {
        Cohort::ALL
            .iter()
            .copied()
            .filter(|c| {
                self.aggregates.iter().any(|a| a.key.cohort == *c)
                    || self.missing.iter().any(|m| m.cohort == *c)
            })
            .collect()
    }
}

/// Groups runs into aggregates. Models keep their first-appearance order
/// unless `models` lists them.
pub fn build_report(
    runs: Vec<RunMetrics>,
    missing: Vec<MissingCell>,
    models: Option<Vec<String>>,
    threshold: f64,
    provenance: Option<String>,
) -> Result<MetricsReport> {
    check_threshold(threshold)?;
    let mut order = models.unwrap_or_default();
    for name in runs.iter().map(|r| &r.model_id).chain(missing.iter().map(|m| &m.model_id)) {
        if !order.contains(name) {
            order.push(name.clone());
        }
    }
    let rank = |m: &str| order.iter().position(|o| o == m).unwrap_or(usize::MAX);
    let mut runs = runs;
    runs.sort_by(|a, b| {
        (rank(&a.model_id), a.cohort, a.condition, a.run_seed)
            .cmp(&(rank(&b.model_id), b.cohort, b.condition, b.run_seed))
    });
    let mut aggregates = Vec::new();
    for chunk in runs.chunk_by(|a, b| a.key() == b.key()) {
        aggregates.push(aggregate_runs(chunk)?);
    }
    Ok(MetricsReport {
        provenance,
        threshold,
        std_kind: "population".into(),
        models: order,
        runs,
        aggregates,
        missing,
    })
}
