use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use otshift::dataset::{load_manifest, preprocess, split_summary, Cohort, PreprocessedTensorSpec};
use otshift::io::{load_image, write_npy_f32, write_text};
use otshift::metrics::{build_report, load_predictions, render_report, score_predictions, RunMetrics};
use otshift::ot::KernelMode;
use otshift::pipeline::{evaluate, RunConfig};
use otshift::provenance::StampBuilder;
use otshift::shift::{output_names, shift_dataset, ShiftOptions};
use otshift::transfer::TransferConfig;
use otshift::{Error, Result};

const THREADS_ENV: &str = "OTSHIFT_THREADS";

/// Optimal-transport color shifting and robustness scoring for endoscopy
/// image classifiers.
///
/// Exit status: 0 success, 1 runtime failure, 2 invalid input,
/// 3 partial results.
#[derive(Parser)]
#[command(name = "otshift", version, after_help = "Set OTSHIFT_THREADS to bound the worker thread count.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resize and normalize manifest images into `.npy` CHW float32 tensors.
    Preprocess(PreprocessArgs),
    /// Color-shift every manifest image toward a reference image.
    Shift(ShiftArgs),
    /// Score a prediction file against manifest labels for one cohort.
    Score(ScoreArgs),
    /// Aggregate scored runs into tables and confusion matrix figures.
    Report(ReportArgs),
    /// Run shifting, scoring and reporting from a TOML run config.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset manifest (TSV).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for tensors and index.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Only preprocess records of this cohort.
    #[arg(long)]
    cohort: Option<Cohort>,
    /// Output side length in pixels.
    #[arg(long, default_value_t = 224)]
    side: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Dense,
    Separable,
}

#[derive(Args)]
struct TransferArgs {
    /// TOML file with transfer settings; flags below override it.
    #[arg(long)]
    transfer_config: Option<PathBuf>,
    /// Entropic regularization relative to the largest ground cost.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Luminance histogram bins.
    #[arg(long)]
    l_bins: Option<usize>,
    /// Chroma histogram bins per axis.
    #[arg(long)]
    ab_bins: Option<usize>,
    /// Sinkhorn marginal tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Sinkhorn iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Histogram floor mass per bin.
    #[arg(long)]
    floor: Option<f64>,
    /// Gibbs kernel representation.
    #[arg(long, value_enum)]
    kernel: Option<Kernel>,
    /// Skip edge-aware smoothing of the chroma displacement.
    #[arg(long)]
    no_smooth: bool,
    /// Use raw barycentric displacements.
    #[arg(long)]
    no_debias: bool,
}

impl TransferArgs {
    fn config(&self) -> Result<TransferConfig> {
        let mut cfg = match &self.transfer_config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => TransferConfig::default(),
        };
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.l_bins {
            cfg.l_bins = v;
        }
        if let Some(v) = self.ab_bins {
            cfg.ab_bins = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.floor {
            cfg.floor = v;
        }
        if let Some(k) = self.kernel {
            cfg.kernel = match k {
                Kernel::Dense => KernelMode::Dense,
                Kernel::Separable => KernelMode::Separable,
            };
        }
        cfg.post_smooth &= !self.no_smooth;
        cfg.debias &= !self.no_debias;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ShiftArgs {
    /// Dataset manifest (TSV).
    #[arg(long)]
    manifest: PathBuf,
    /// Reference image whose color statistics are imposed.
    #[arg(long)]
    reference: PathBuf,
    /// Output directory for images/, manifest.tsv and shift_report.json.
    #[arg(long)]
    out: PathBuf,
    /// Only shift records of this cohort.
    #[arg(long)]
    cohort: Option<Cohort>,
    /// Abort when more than this fraction of images fail.
    #[arg(long, default_value_t = 0.1)]
    failure_threshold: f64,
    /// Write source and reference histograms under histograms/.
    #[arg(long)]
    dump_histograms: bool,
    /// Write solver diagnostics and sparse couplings under diagnostics/.
    #[arg(long)]
    dump_diagnostics: bool,
    #[command(flatten)]
    transfer: TransferArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Prediction records, one JSON object per line.
    #[arg(long)]
    predictions: PathBuf,
    /// Manifest holding the labels the predictions refer to.
    #[arg(long)]
    manifest: PathBuf,
    /// Cohort to score.
    #[arg(long)]
    cohort: Cohort,
    /// Output directory; receives runs.json.
    #[arg(long)]
    out: PathBuf,
    /// Probability at or above which an image is called tumor.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// runs.json files written by `score`.
    #[arg(long = "runs", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Row order, comma separated; defaults to first appearance.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Threshold recorded in the report header.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Shift(a) => cmd_shift(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<u8> {
    let mut manifest = load_manifest(&a.manifest)?;
    if let Some(c) = a.cohort {
        manifest = manifest.cohort(c);
    }
    print!("{}", split_summary(&manifest));
    let spec = PreprocessedTensorSpec {
        side: a.side,
        ..PreprocessedTensorSpec::IMAGENET_224
    };
    if spec.side == 0 {
        return Err(Error::Config("side must be positive".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    let names = output_names(&manifest.records);
    let mut index = String::from("image_path\ttensor\tlabel\tcohort\n");
    let mut failed = 0;
    for (r, name) in manifest.records.iter().zip(&names) {
        let img = match load_image(&manifest.resolve(r)) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("{}: {e}", r.image_path);
                failed += 1;
                continue;
            }
        };
        let t = preprocess(&img, &spec);
        let file = format!("{name}.npy");
        write_npy_f32(&a.out.join(&file), &t.shape(), &t.data)?;
        index.push_str(&format!("{}\t{file}\t{}\t{}\n", r.image_path, r.label, r.cohort));
    }
    write_text(&a.out.join("index.tsv"), &index)?;
    println!("wrote {} tensors to {}", manifest.len() - failed, a.out.display());
    Ok(if failed > 0 { 3 } else { 0 })
}

fn cmd_shift(a: ShiftArgs) -> Result<u8> {
    let cfg = a.transfer.config()?;
    let mut manifest = load_manifest(&a.manifest)?;
    if let Some(c) = a.cohort {
        manifest = manifest.cohort(c);
    }
    let opts = ShiftOptions {
        failure_threshold: a.failure_threshold,
        dump_histograms: a.dump_histograms,
        dump_diagnostics: a.dump_diagnostics,
        provenance: None,
    };
    let out = shift_dataset(&manifest, &a.reference, &cfg, &a.out, &opts)?;
    let s = &out.summary;
    println!("shifted {} of {} images into {}", s.n_succeeded, s.n_records, a.out.display());
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("mean luminance W1: {} -> {}", show(s.mean_lum_w1_pre), show(s.mean_lum_w1_post));
    println!("mean chroma cost: {} -> {}", show(s.mean_chroma_cost_pre), show(s.mean_chroma_cost_post));
    println!("provenance: {}", s.provenance);
    for f in &s.failures {
        println!("failed: {} ({})", f.image_path, f.error);
    }
    Ok(if s.failures.is_empty() { 0 } else { 3 })
}

fn cmd_score(a: ScoreArgs) -> Result<u8> {
    let manifest = load_manifest(&a.manifest)?;
    let preds = load_predictions(&a.predictions)?;
    let runs = score_predictions(&preds, &manifest, a.cohort, a.threshold)?;
    for r in &runs {
        let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        println!(
            "{} seed {} {} {}: acc {:.4} sens {} spec {} (tp {} fp {} tn {} fn {})",
            r.model_id,
            r.run_seed,
            r.condition,
            r.cohort,
            r.metrics.accuracy,
            show(r.metrics.sensitivity),
            show(r.metrics.specificity),
            r.confusion.tp,
            r.confusion.fp,
            r.confusion.tn,
            r.confusion.fn_
        );
    }
    let path = a.out.join("runs.json");
    write_text(&path, &(serde_json::to_string_pretty(&runs)? + "\n"))?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    let mut runs: Vec<RunMetrics> = Vec::new();
    let mut stamp = StampBuilder::new().part(format!("threshold={}", a.threshold).as_bytes());
    for p in &a.runs {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        stamp = stamp.part(text.as_bytes());
        let mut r: Vec<RunMetrics> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        runs.append(&mut r);
    }
    let report = build_report(runs, vec![], a.models, a.threshold, Some(stamp.finish().to_string()))?;
    for f in render_report(&report, &a.out)? {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<u8> {
    let cfg = RunConfig::load(&a.config)?;
    let out = evaluate(&cfg)?;
    println!("provenance: {}", out.provenance);
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    for m in &out.report.missing {
        println!("missing: {m}");
    }
    Ok(if out.is_partial() { 3 } else { 0 })
}
