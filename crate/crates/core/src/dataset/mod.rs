//! Dataset manifests, cohort accounting, preprocessing and balanced batch
//! plans.
//!
//! A manifest is UTF-8 text with one tab-separated record per line:
//!
//! ```text
//! # reference: ref.png
//! # split: id_train=1337,id_val=448,id_test=785
//! images/p001_a.jpg	tumor	baseline	p001	id_train
//! ```
//!
//! Lines starting with `#` are `key: value` provenance entries. Two keys are
//! interpreted: `color_shift: true` marks every record as color shifted, and
//! `split: cohort=count,...` declares expected cohort sizes, checked on load.
//! Relative image paths resolve against the manifest's directory.

mod preprocess;
mod sampling;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use preprocess::{preprocess, resize_bilinear, NormalizedTensor, PreprocessedTensorSpec};
pub use sampling::balanced_batch_plan;

pub const COLOR_SHIFT_KEY: &str = "color_shift";
pub const SPLIT_KEY: &str = "split";

vocabulary!(
    /// Binary target; `tumor` is the positive class.
    Label, "label" {
        Tumor => "tumor",
        NoTumor => "no_tumor",
    }
);

vocabulary!(Timepoint, "timepoint" {
    Baseline => "baseline",
    During => "during",
    Restaging => "restaging",
    Followup => "followup",
    External => "external",
});

vocabulary!(Cohort, "cohort" {
    IdTrain => "id_train",
    IdVal => "id_val",
    IdTest => "id_test",
    FollowupLr => "followup_lr",
    Ood => "ood",
});

impl Cohort {
    /// Cohorts that are only ever scored, never trained on.
    pub fn is_evaluation(self) -> bool {
        matches!(self, Cohort::IdTest | Cohort::FollowupLr | Cohort::Ood)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_path: String,
    pub label: Label,
    pub timepoint: Timepoint,
    pub patient_id: String,
    pub cohort: Cohort,
    pub color_shift: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<DatasetRecord>,
    /// Header entries, in key order.
    pub provenance: BTreeMap<String, String>,
    /// Directory relative image paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &DatasetRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Records restricted to one cohort, keeping provenance.
    pub fn cohort(&self, cohort: Cohort) -> DatasetManifest {
        DatasetManifest {
            records: self
                .records
                .iter()
                .filter(|r| r.cohort == cohort)
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.provenance {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.image_path, r.label, r.timepoint, r.patient_id, r.cohort
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut manifest, warnings) = parse_manifest(&text, &path.display().to_string())?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok(manifest)
}

/// Parses manifest text. `origin` names the source in error messages.
/// Returns the manifest and any non-fatal warnings.
pub fn parse_manifest(text: &str, origin: &str) -> Result<(DatasetManifest, Vec<String>)> {
    let err = |line: usize, message: String| Error::Manifest {
        path: origin.to_string(),
        line,
        message,
    };
    let mut provenance = BTreeMap::new();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if let Some((k, v)) = header.split_once(':') {
                provenance.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(err(
                line_no,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let image_path = fields[0].trim();
        if image_path.is_empty() {
            return Err(err(line_no, "empty image_path".into()));
        }
        let label = fields[1]
            .trim()
            .parse::<Label>()
            .map_err(|m| err(line_no, format!("{m} at line {line_no}")))?;
        let timepoint = fields[2]
            .trim()
            .parse::<Timepoint>()
            .map_err(|m| err(line_no, format!("{m} at line {line_no}")))?;
        let patient_id = fields[3].trim();
        if patient_id.is_empty() {
            return Err(err(line_no, "empty patient_id".into()));
        }
        let cohort = fields[4]
            .trim()
            .parse::<Cohort>()
            .map_err(|m| err(line_no, format!("{m} at line {line_no}")))?;
        if !seen.insert(image_path.to_string()) {
            return Err(err(
                line_no,
                format!("duplicate image_path {image_path:?} at line {line_no}"),
            ));
        }
        records.push(DatasetRecord {
            image_path: image_path.to_string(),
            label,
            timepoint,
            patient_id: patient_id.to_string(),
            cohort,
            color_shift: false,
        });
    }

    let shifted = match provenance.get(COLOR_SHIFT_KEY).map(String::as_str) {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => {
            return Err(err(0, format!("color_shift must be true or false, got {other:?}")))
        }
    };
    records.iter_mut().for_each(|r| r.color_shift = shifted);

    let manifest = DatasetManifest {
        records,
        provenance,
        base_dir: PathBuf::new(),
    };
    if let Some(decl) = manifest.provenance.get(SPLIT_KEY) {
        check_split(&manifest, decl).map_err(|m| err(0, m))?;
    }
    if manifest.is_empty() {
        warnings.push("manifest has no records".to_string());
    }
    Ok((manifest, warnings))
}

fn check_split(manifest: &DatasetManifest, decl: &str) -> std::result::Result<(), String> {
    let summary = split_summary(manifest);
    for part in decl.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, count) = part
            .split_once('=')
            .ok_or_else(|| format!("malformed split entry {part:?}"))?;
        let cohort: Cohort = name.trim().parse()?;
        let want: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("split count for {cohort} is not a number: {count:?}"))?;
        let have = summary.cohort(cohort).total();
        if have != want {
            return Err(format!("split declares {want} {cohort} records, found {have}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tumor: usize,
    pub no_tumor: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.tumor + self.no_tumor
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Tumor => self.tumor += 1,
            Label::NoTumor => self.no_tumor += 1,
        }
    }
}

/// A patient seen in the training cohort and in an evaluation cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub patient_id: String,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub by_cohort: BTreeMap<Cohort, LabelCounts>,
    pub totals: LabelCounts,
    pub patients: usize,
    pub leakage: Vec<Leak>,
}

impl SplitSummary {
    pub fn cohort(&self, cohort: Cohort) -> LabelCounts {
        self.by_cohort.get(&cohort).copied().unwrap_or_default()
    }
}

impl fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>7} {:>9} {:>7}", "cohort", "tumor", "no_tumor", "total")?;
        for (c, n) in &self.by_cohort {
            writeln!(f, "{:<12} {:>7} {:>9} {:>7}", c, n.tumor, n.no_tumor, n.total())?;
        }
        writeln!(
            f,
            "{:<12} {:>7} {:>9} {:>7}",
            "all", self.totals.tumor, self.totals.no_tumor, self.totals.total()
        )?;
        writeln!(f, "patients: {}", self.patients)?;
        for leak in &self.leakage {
            writeln!(
                f,
                "warning: patient {} appears in id_train and {}",
                leak.patient_id, leak.cohort
            )?;
        }
        Ok(())
    }
}

pub fn split_summary(manifest: &DatasetManifest) -> SplitSummary {
    let mut summary = SplitSummary::default();
    let mut patients = BTreeSet::new();
    let mut cohorts_of: BTreeMap<&str, BTreeSet<Cohort>> = BTreeMap::new();
    for r in &manifest.records {
        summary.by_cohort.entry(r.cohort).or_default().add(r.label);
        summary.totals.add(r.label);
        patients.insert(r.patient_id.as_str());
        cohorts_of.entry(&r.patient_id).or_default().insert(r.cohort);
    }
    summary.patients = patients.len();
    for (patient, cohorts) in cohorts_of {
        if !cohorts.contains(&Cohort::IdTrain) {
            continue;
        }
        for &c in cohorts.iter().filter(|c| c.is_evaluation()) {
            summary.leakage.push(Leak {
                patient_id: patient.to_string(),
                cohort: c,
            });
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# source: unit\n\
a.png\ttumor\tbaseline\tp1\tid_train\n\
b.png\tno_tumor\tduring\tp2\tid_train\n\
\n\
c.png\ttumor\trestaging\tp1\tid_test\n";

    #[test]
    fn parses_records_and_provenance() {
        let (m, warnings) = parse_manifest(SAMPLE, "sample").unwrap();
        assert!(warnings.is_empty());
        assert_eq!(m.len(), 3);
        assert_eq!(m.provenance["source"], "unit");
        assert_eq!(m.records[2].timepoint, Timepoint::Restaging);
        assert!(!m.records[0].color_shift);
    }

    #[test]
    fn empty_text_is_valid_with_warning() {
        let (m, warnings) = parse_manifest("", "empty").unwrap();
        assert!(m.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn unknown_label_names_line() {
        let text = "a.png\ttumor\tbaseline\tp1\tid_train\nb.png\tpolyp\tbaseline\tp2\tood\n";
        match parse_manifest(text, "m").unwrap_err() {
            Error::Manifest { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("unknown label"), "{message}");
                assert!(message.contains("at line 2"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let dup = "a.png\ttumor\tbaseline\tp1\tid_train\na.png\ttumor\tbaseline\tp1\tid_val\n";
        assert!(matches!(parse_manifest(dup, "m"), Err(Error::Manifest { line: 2, .. })));
        let short = "a.png\ttumor\tbaseline\n";
        assert!(matches!(parse_manifest(short, "m"), Err(Error::Manifest { line: 1, .. })));
        let cohort = "a.png\ttumor\tbaseline\tp\ttraining\n";
        assert!(parse_manifest(cohort, "m").is_err());
    }

    #[test]
    fn color_shift_header_marks_records() {
        let text = format!("# color_shift: true\n{SAMPLE}");
        let (m, _) = parse_manifest(&text, "m").unwrap();
        assert!(m.records.iter().all(|r| r.color_shift));
    }

    #[test]
    fn split_declaration_is_checked() {
        let ok = format!("# split: id_train=2,id_test=1\n{SAMPLE}");
        assert!(parse_manifest(&ok, "m").is_ok());
        let bad = format!("# split: id_train=3\n{SAMPLE}");
        assert!(parse_manifest(&bad, "m").is_err());
    }

    #[test]
    fn text_round_trip() {
        let (m, _) = parse_manifest(SAMPLE, "m").unwrap();
        let (again, _) = parse_manifest(&m.to_text(), "m").unwrap();
        assert_eq!(m.records, again.records);
        assert_eq!(m.provenance, again.provenance);
    }

    #[test]
    fn leakage_is_reported() {
        let (m, _) = parse_manifest(SAMPLE, "m").unwrap();
        let s = split_summary(&m);
        assert_eq!(
            s.leakage,
            vec![Leak {
                patient_id: "p1".into(),
                cohort: Cohort::IdTest
            }]
        );
        assert_eq!(s.patients, 2);
        assert!(s.to_string().contains("warning: patient p1"));
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let (mut m, _) = parse_manifest(SAMPLE, "m").unwrap();
        m.base_dir = PathBuf::from("/data/set");
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/data/set/a.png"));
    }
}
