use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::io::{write_png_rgb8, write_text};
use crate::metrics::{Condition, ConfusionMatrix, Metric, MetricsReport};

const METRICS: [Metric; 3] = [Metric::Accuracy, Metric::Sensitivity, Metric::Specificity];
const CELL: usize = 13;

/// Writes `report.json`, one `table_<cohort>.txt` per scored cohort other
/// than `id_test`, and for `id_test` a text listing plus one confusion
/// matrix PNG per (model, condition), pooled over seeds. Returns the paths
/// written, in order.
pub fn render_report(report: &MetricsReport, out: &Path) -> Result<Vec<PathBuf>> {
    if report.aggregates.is_empty() && report.missing.is_empty() {
        return Err(Error::Config("nothing to report".into()));
    }
    let mut written = Vec::new();
    let path = out.join("report.json");
    write_text(&path, &(serde_json::to_string_pretty(report)? + "\n"))?;
    written.push(path);
    for cohort in report.cohorts() {
        if cohort == Cohort::IdTest {
            let path = out.join("confusion_id_test.txt");
            write_text(&path, &render_confusion_text(report, cohort))?;
            written.push(path);
            for model in &report.models {
                for &condition in Condition::ALL {
                    let Some(agg) = report.aggregate(model, condition, cohort) else {
                        continue;
                    };
                    let path = out.join(format!("cm_{}_{}.png", file_safe(model), condition));
                    render_cm_png(&agg.pooled, &path, report.provenance.as_deref())?;
                    written.push(path);
                }
            }
        } else {
            let path = out.join(format!("table_{cohort}.txt"));
            write_text(&path, &render_table(report, cohort))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn header(report: &MetricsReport, title: &str) -> String {
    let mut s = format!("{title}\n");
    let _ = writeln!(
        s,
        "threshold {}; mean ± {} std over runs",
        report.threshold, report.std_kind
    );
    if let Some(p) = &report.provenance {
        let _ = writeln!(s, "provenance: {p}");
    }
    s
}

fn has_condition(report: &MetricsReport, cohort: Cohort, condition: Condition) -> bool {
    report.aggregates.iter().any(|a| a.key.cohort == cohort && a.key.condition == condition)
        || report.missing.iter().any(|m| m.cohort == cohort && m.condition == condition)
}

/// Plain-text table for one cohort: a row per model, a column group per
/// condition.
pub fn render_table(report: &MetricsReport, cohort: Cohort) -> String {
    let mut out = header(report, &format!("cohort {cohort}"));
    let conditions: Vec<Condition> = Condition::ALL
        .iter()
        .copied()
        .filter(|&c| has_condition(report, cohort, c))
        .collect();
    let models: Vec<&String> = report
        .models
        .iter()
        .filter(|m| {
            conditions.iter().any(|&c| report.aggregate(m, c, cohort).is_some())
                || report.missing.iter().any(|x| &&x.model_id == m && x.cohort == cohort)
        })
        .collect();
    let width = models.iter().map(|m| m.chars().count()).chain([5]).max().unwrap_or(5);
    let group = METRICS.len() * CELL;

    out.push('\n');
    let mut line = format!("{:<width$}", "");
    for c in &conditions {
        let _ = write!(line, " | {:<group$}", c.title());
    }
    out.push_str(line.trim_end());
    out.push('\n');
    let mut line = format!("{:<width$}", "Model");
    for _ in &conditions {
        line.push_str(" | ");
        for m in METRICS {
            let _ = write!(line, "{:<CELL$}", m.short());
        }
    }
    out.push_str(line.trim_end());
    out.push('\n');
    let mut line = "-".repeat(width);
    for _ in &conditions {
        line.push_str("-+-");
        line.push_str(&"-".repeat(group));
    }
    out.push_str(&line);
    out.push('\n');

    let mut notes = Vec::new();
    for model in &models {
        let mut line = format!("{model:<width$}");
        for &c in &conditions {
            line.push_str(" | ");
            match report.aggregate(model, c, cohort) {
                Some(agg) => {
                    for m in METRICS {
                        let s = agg.summary(m);
                        let mut text = s.to_string();
                        if s.n_undefined > 0 && s.mean.is_some() {
                            text.push('*');
                        }
                        if s.n_undefined > 0 {
                            notes.push(format!(
                                "* {model} {c} {m}: undefined in {} of {} runs, excluded from the mean",
                                s.n_undefined,
                                agg.seeds.len()
                            ));
                        }
                        let _ = write!(line, "{text:<CELL$}");
                    }
                }
                None => {
                    for _ in METRICS {
                        let _ = write!(line, "{:<CELL$}", "missing");
                    }
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }

    for &c in Condition::ALL {
        if !conditions.contains(&c) {
            notes.push(format!(
                "note: no {c} results; the {} column group is omitted",
                c.title()
            ));
        }
    }
    for m in report.missing.iter().filter(|m| m.cohort == cohort) {
        notes.push(format!("missing: {m}"));
    }
    let seeds: Vec<usize> = report
        .aggregates
        .iter()
        .filter(|a| a.key.cohort == cohort)
        .map(|a| a.seeds.len())
        .collect();
    if let (Some(lo), Some(hi)) = (seeds.iter().min(), seeds.iter().max()) {
        if lo == hi {
            notes.push(format!("runs per cell: {lo}"));
        } else {
            notes.push(format!("runs per cell: {lo} to {hi}"));
        }
    }
    if !notes.is_empty() {
        out.push('\n');
        for n in notes {
            out.push_str(&n);
            out.push('\n');
        }
    }
    out
}

fn render_confusion_text(report: &MetricsReport, cohort: Cohort) -> String {
    let mut out = header(
        report,
        &format!("cohort {cohort} confusion matrices, summed over runs; rows are truth"),
    );
    for model in &report.models {
        for &c in Condition::ALL {
            let Some(agg) = report.aggregate(model, c, cohort) else {
                continue;
            };
            let cm = &agg.pooled;
            let seeds: Vec<String> = agg.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "\n{model} / {} (seeds {})", c.title(), seeds.join(", "));
            let _ = writeln!(out, "{:<10}{:>14}{:>14}", "", "pred no_tumor", "pred tumor");
            let _ = writeln!(out, "{:<10}{:>14}{:>14}", "no_tumor", format!("TN {}", cm.tn), format!("FP {}", cm.fp));
            let _ = writeln!(out, "{:<10}{:>14}{:>14}", "tumor", format!("FN {}", cm.fn_), format!("TP {}", cm.tp));
        }
    }
    for m in report.missing.iter().filter(|m| m.cohort == cohort) {
        let _ = writeln!(out, "\nmissing: {m}");
    }
    out
}

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

fn glyph(c: char) -> [u8; GLYPH_H] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        _ => [0; GLYPH_H],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [u8; 3]) {
        for y in y0..(y0 + h).min(self.h) {
            for x in x0..(x0 + w).min(self.w) {
                let k = 3 * (y * self.w + x);
                self.px[k..k + 3].copy_from_slice(&rgb);
            }
        }
    }

    /// Text centered on `(cx, cy)`.
    fn text(&mut self, s: &str, cx: usize, cy: usize, scale: usize, rgb: [u8; 3]) {
        let n = s.chars().count();
        let tw = (n * (GLYPH_W + 1) - 1) * scale;
        let th = GLYPH_H * scale;
        let x0 = cx.saturating_sub(tw / 2);
        let y0 = cy.saturating_sub(th / 2);
        for (i, c) in s.chars().enumerate() {
            let rows = glyph(c);
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits & (0x10 >> col) != 0 {
                        let x = x0 + (i * (GLYPH_W + 1) + col) * scale;
                        self.fill(x, y0 + r * scale, scale, scale, rgb);
                    }
                }
            }
        }
    }
}

/// White through orange to dark red.
fn heat(t: f64) -> [u8; 3] {
    let stops = [[255.0, 255.0, 255.0], [250.0, 160.0, 60.0], [170.0, 20.0, 20.0]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let i = (t.floor() as usize).min(1);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (stops[i][c] + f * (stops[i + 1][c] - stops[i][c])).round() as u8;
    }
    out
}

/// 2×2 grid laid out `[[TN, FP], [FN, TP]]` (rows truth, columns
/// prediction), each cell shaded by its share of the true class.
pub fn render_cm_png(cm: &ConfusionMatrix, path: &Path, provenance: Option<&str>) -> Result<()> {
    const SIDE: usize = 112;
    const GAP: usize = 6;
    let dim = 2 * SIDE + 3 * GAP;
    let mut canvas = Canvas {
        w: dim,
        h: dim,
        px: vec![64; 3 * dim * dim],
    };
    let cells = [[("TN", cm.tn), ("FP", cm.fp)], [("FN", cm.fn_), ("TP", cm.tp)]];
    for (r, row) in cells.iter().enumerate() {
        let total = row[0].1 + row[1].1;
        for (c, &(name, count)) in row.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let x0 = GAP + c * (SIDE + GAP);
            let y0 = GAP + r * (SIDE + GAP);
            canvas.fill(x0, y0, SIDE, SIDE, heat(share));
            let ink = if share < 0.6 { [0, 0, 0] } else { [255, 255, 255] };
            canvas.text(name, x0 + SIDE / 2, y0 + SIDE / 4 + 4, 2, ink);
            canvas.text(&count.to_string(), x0 + SIDE / 2, y0 + 2 * SIDE / 3, 3, ink);
        }
    }
    write_png_rgb8(path, dim as u32, dim as u32, &canvas.px, provenance)
}
