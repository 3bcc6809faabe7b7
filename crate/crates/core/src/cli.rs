//! The `depthkit` command line.
//!
//! Each subcommand first resolves its flags (and any weights file) into a
//! [`RunConfig`], then executes purely from that config. The config is
//! embedded in the report, so `depthkit replay --report FILE` reruns the
//! exact same job.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{
    read_depth, read_mask, read_normals, read_rgb, write_normals, write_pfm, write_png16,
};
use crate::curate::{curate, CurateOptions, REPORT_FILE};
use crate::dnesa::{
    combined_score, evaluate_depth_map, evaluate_normal_map, DepthQuality, NormalQuality,
    ScoreWeights, Scores,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, ImageGrid, Mask};
use crate::losses::{fd_check, total_loss, FdReport, LossConfig, LossReport, Rho};
use crate::metrics::{
    align_for_eval, angular_errors, depth_accumulate, mean_depth_records, mean_normal_records,
    normal_record_from_angles, AlignMode, DepthAccumulator, DepthMetricRecord, NormalMetricRecord,
    DELTA_THRESHOLDS,
};
use crate::net::{NetConfig, Network, MAX_STRIDE};
use crate::report::{
    fmt_f64, to_csv_string, to_json_string, ReportFormat, RunConfig, Tabular, TOOL_VERSION,
};

/// Exit status for malformed command lines.
pub const EXIT_USAGE: i32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "depthkit",
    version,
    about = "Depth and normal pseudo-label curation and evaluation"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every model's candidates per RGB image and keep the best pair.
    Curate(CurateArgs),
    /// Score a single depth/normal candidate against its RGB image.
    Score(ScoreArgs),
    /// Depth benchmark metrics over a directory of predictions.
    EvalDepth(EvalArgs),
    /// Angular-error metrics over a directory of predicted normal maps.
    EvalNormals(EvalArgs),
    /// Scale-and-shift-invariant loss of one prediction.
    Loss(LossArgs),
    /// Run the seeded encoder-decoder on one image.
    NetForward(NetArgs),
    /// Rerun a job from the config embedded in one of its reports.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct WorkerArgs {
    /// Worker threads (results do not depend on this).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
}

impl WorkerArgs {
    fn resolve(&self) -> usize {
        self.workers
            .map(|w| w as usize)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    rgb_dir: PathBuf,
    /// Candidate directory of one model; repeat in priority order.
    #[arg(long = "model-dir", required = true)]
    model_dirs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// `key = value` weight overrides.
    #[arg(long)]
    weights_file: Option<PathBuf>,
    /// Report path; defaults to `dnesa_report.json` in the output directory.
    /// A `.csv` extension selects CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    normal: PathBuf,
    #[arg(long)]
    weights_file: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// Optional masks named like the ground truth (nonzero = valid).
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Prediction alignment before depth metrics.
    #[arg(long, value_enum, default_value = "lstsq")]
    align: AlignMode,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Pool pixels across images instead of averaging per-image records.
    #[arg(long)]
    per_pixel: bool,
    /// Clamp aligned depth predictions from below.
    #[arg(long)]
    min_pred: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "l1")]
    rho: Rho,
    /// Number of gradient-matching scales.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Also compare the analytic gradient with finite differences.
    #[arg(long)]
    grad_check: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NetArgs {
    #[arg(long)]
    input: PathBuf,
    /// `key = value` architecture overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Any JSON report written by this tool.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    workers: WorkerArgs,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let cfg = match cmd {
        Command::Curate(a) => curate_config(a)?,
        Command::Score(a) => score_config(a)?,
        Command::EvalDepth(a) => eval_config("eval-depth", a),
        Command::EvalNormals(a) => eval_config("eval-normals", a),
        Command::Loss(a) => loss_config(a),
        Command::NetForward(a) => net_config(a),
        Command::Replay(a) => {
            let mut cfg = load_embedded_config(&a.report)?;
            cfg.workers = a.workers.resolve();
            cfg
        }
    };
    execute(&cfg)
}

/// Runs a fully resolved job.
pub fn execute(cfg: &RunConfig) -> Result<()> {
    match cfg.subcommand.as_str() {
        "curate" => run_curate(cfg),
        "score" => run_score(cfg),
        "eval-depth" => run_eval_depth(cfg),
        "eval-normals" => run_eval_normals(cfg),
        "loss" => run_loss(cfg),
        "net-forward" => run_net(cfg),
        other => Err(Error::Format(format!(
            "unknown subcommand {other:?} in run config"
        ))),
    }
}

/// Reads the `config` object embedded in a report.
pub fn load_embedded_config(report: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(report).map_err(|e| Error::io(report, e))?;
    let mut v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", report.display())))?;
    let cfg = v
        .get_mut("config")
        .map(serde_json::Value::take)
        .ok_or_else(|| Error::Format(format!("{}: no embedded config", report.display())))?;
    serde_json::from_value(cfg).map_err(|e| Error::Format(format!("{}: {e}", report.display())))
}

fn load_weights(path: Option<&Path>) -> Result<ScoreWeights> {
    match path {
        Some(p) => ScoreWeights::parse_kv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(ScoreWeights::default()),
    }
}

fn new_config(subcommand: &str) -> RunConfig {
    RunConfig {
        subcommand: subcommand.to_string(),
        ..Default::default()
    }
}

fn input<'a>(cfg: &'a RunConfig, key: &str) -> Result<&'a Path> {
    optional_input(cfg, key)
        .ok_or_else(|| Error::Format(format!("run config has no input {key:?}")))
}

fn optional_input<'a>(cfg: &'a RunConfig, key: &str) -> Option<&'a Path> {
    cfg.inputs
        .get(key)
        .and_then(|v| v.first())
        .map(PathBuf::as_path)
}

fn output<'a>(cfg: &'a RunConfig, key: &str) -> Result<&'a Path> {
    cfg.outputs
        .get(key)
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::Format(format!("run config has no output {key:?}")))
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn curate_config(a: CurateArgs) -> Result<RunConfig> {
    let mut cfg = new_config("curate");
    cfg.inputs.insert("rgb_dir".into(), vec![a.rgb_dir]);
    cfg.inputs.insert("model_dirs".into(), a.model_dirs);
    let report = a.report.unwrap_or_else(|| a.out_dir.join(REPORT_FILE));
    cfg.format = Some(
        if report
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            ReportFormat::Csv
        } else {
            ReportFormat::Json
        },
    );
    cfg.outputs.insert("out_dir".into(), a.out_dir);
    cfg.outputs.insert("report".into(), report);
    cfg.weights = Some(load_weights(a.weights_file.as_deref())?);
    cfg.workers = a.workers.resolve();
    Ok(cfg)
}

fn run_curate(cfg: &RunConfig) -> Result<()> {
    let opts = CurateOptions {
        rgb_dir: input(cfg, "rgb_dir")?.to_path_buf(),
        model_dirs: cfg.inputs.get("model_dirs").cloned().unwrap_or_default(),
        out_dir: output(cfg, "out_dir")?.to_path_buf(),
        weights: cfg.weights.unwrap_or_default(),
        workers: cfg.workers.max(1),
    };
    let mut report = curate(&opts)?;
    report.config = cfg.clone();
    let text = match cfg.format.unwrap_or(ReportFormat::Json) {
        ReportFormat::Json => to_json_string(&report)?,
        ReportFormat::Csv => to_csv_string(&report)?,
    };
    let path = output(cfg, "report")?;
    emit(&text, Some(path))?;
    let selected = report.images.iter().filter(|i| !i.skipped).count();
    info!(
        "{selected}/{} images curated, report at {}",
        report.images.len(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreReport {
    depth_quality: DepthQuality,
    normal_quality: NormalQuality,
    scores: Scores,
    weights: ScoreWeights,
    version: String,
    config: RunConfig,
}

fn score_config(a: ScoreArgs) -> Result<RunConfig> {
    let mut cfg = new_config("score");
    cfg.inputs.insert("rgb".into(), vec![a.rgb]);
    cfg.inputs.insert("depth".into(), vec![a.depth]);
    cfg.inputs.insert("normal".into(), vec![a.normal]);
    if let Some(o) = a.output {
        cfg.outputs.insert("output".into(), o);
    }
    cfg.weights = Some(load_weights(a.weights_file.as_deref())?);
    Ok(cfg)
}

fn run_score(cfg: &RunConfig) -> Result<()> {
    let rgb = read_rgb(input(cfg, "rgb")?)?;
    let depth_quality = evaluate_depth_map(&read_depth(input(cfg, "depth")?)?, &rgb)?;
    let normal_quality = evaluate_normal_map(&read_normals(input(cfg, "normal")?)?, &rgb)?;
    let weights = cfg.weights.unwrap_or_default();
    let report = ScoreReport {
        depth_quality,
        normal_quality,
        scores: combined_score(&depth_quality, &normal_quality, &weights),
        weights,
        version: TOOL_VERSION.into(),
        config: cfg.clone(),
    };
    emit(
        &to_json_string(&report)?,
        cfg.outputs.get("output").map(PathBuf::as_path),
    )
}

fn eval_config(subcommand: &str, a: EvalArgs) -> RunConfig {
    let mut cfg = new_config(subcommand);
    cfg.inputs.insert("pred_dir".into(), vec![a.pred_dir]);
    cfg.inputs.insert("gt_dir".into(), vec![a.gt_dir]);
    if let Some(m) = a.mask_dir {
        cfg.inputs.insert("mask_dir".into(), vec![m]);
    }
    if let Some(o) = a.output {
        cfg.outputs.insert("output".into(), o);
    }
    if subcommand == "eval-depth" {
        cfg.align = Some(serialize_enum(&a.align));
        cfg.min_pred = a.min_pred;
    }
    cfg.format = Some(a.format);
    cfg.per_pixel = Some(a.per_pixel);
    cfg.workers = a.workers.resolve();
    cfg
}

fn serialize_enum<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| Error::Format(format!("run config: bad {what} {s:?}")))
}

/// One prediction/ground-truth pair found on disk.
struct EvalPair {
    name: String,
    pred: PathBuf,
    gt: PathBuf,
    mask: Option<PathBuf>,
}

/// Files in `dir` with one of `exts`, keyed by stem. On a stem clash the
/// earlier extension in `exts` wins.
fn files_by_stem(dir: &Path, exts: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let mut entries = vec![];
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(rank) = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(|e| exts.iter().position(|x| x.eq_ignore_ascii_case(e)))
        else {
            continue;
        };
        if !path.is_file() {
            continue;
        }
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        entries.push((stem, rank, path));
    }
    entries.sort();
    let mut out: Vec<(String, PathBuf)> = vec![];
    for (stem, _, path) in entries {
        if let Some((last, kept)) = out.last() {
            if *last == stem {
                warn!(
                    "{}: ignored in favour of {}",
                    path.display(),
                    kept.display()
                );
                continue;
            }
        }
        out.push((stem, path));
    }
    Ok(out)
}

fn find_eval_pairs(cfg: &RunConfig, exts: &[&str]) -> Result<Vec<EvalPair>> {
    let preds = files_by_stem(input(cfg, "pred_dir")?, exts)?;
    let gts = files_by_stem(input(cfg, "gt_dir")?, exts)?;
    let masks = match optional_input(cfg, "mask_dir") {
        Some(d) => Some(files_by_stem(d, &["png"])?),
        None => None,
    };
    let lookup = |list: &[(String, PathBuf)], stem: &str| {
        list.iter().find(|(s, _)| s == stem).map(|(_, p)| p.clone())
    };
    let mut pairs = vec![];
    for (stem, pred) in preds {
        let gt = lookup(&gts, &stem)
            .ok_or_else(|| Error::Format(format!("no ground truth for prediction {stem:?}")))?;
        let mask = match &masks {
            Some(m) => Some(
                lookup(m, &stem).ok_or_else(|| Error::Format(format!("no mask for {stem:?}")))?,
            ),
            None => None,
        };
        pairs.push(EvalPair {
            name: stem,
            pred,
            gt,
            mask,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Format("no predictions found".into()));
    }
    Ok(pairs)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))
}

fn load_mask(path: Option<&Path>, h: usize, w: usize) -> Result<Mask> {
    match path {
        Some(p) => read_mask(p),
        None => Ok(Mask::full(h, w)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRow<R> {
    pub image: String,
    #[serde(flatten)]
    pub record: R,
}

/// Per-image records plus the dataset aggregate.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport<R> {
    pub images: Vec<EvalRow<R>>,
    /// `per_image_mean` or `per_pixel`.
    pub aggregation: String,
    pub aggregate: R,
    pub version: String,
    pub config: RunConfig,
}

fn record_cells<R: Serialize>(r: &R) -> Vec<(String, String)> {
    let Ok(serde_json::Value::Object(map)) = serde_json::to_value(r) else {
        return vec![];
    };
    map.into_iter()
        .map(|(k, v)| {
            let cell = match v {
                serde_json::Value::Number(n) if n.is_f64() => fmt_f64(n.as_f64().unwrap()),
                other => other.to_string(),
            };
            (k, cell)
        })
        .collect()
}

impl<R: Serialize> Tabular for EvalReport<R> {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["image".to_string()];
        h.extend(record_cells(&self.aggregate).into_iter().map(|(k, _)| k));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let row = |name: &str, r: &R| {
            let mut v = vec![name.to_string()];
            v.extend(record_cells(r).into_iter().map(|(_, c)| c));
            v
        };
        let mut rows: Vec<Vec<String>> = self
            .images
            .iter()
            .map(|i| row(&i.image, &i.record))
            .collect();
        rows.push(row("aggregate", &self.aggregate));
        rows
    }
}

fn write_eval<R: Serialize>(report: &EvalReport<R>, cfg: &RunConfig) -> Result<()> {
    let text = match cfg.format.unwrap_or(ReportFormat::Json) {
        ReportFormat::Json => to_json_string(report)?,
        ReportFormat::Csv => to_csv_string(report)?,
    };
    emit(&text, cfg.outputs.get("output").map(PathBuf::as_path))
}

fn aggregation_name(per_pixel: bool) -> String {
    if per_pixel {
        "per_pixel"
    } else {
        "per_image_mean"
    }
    .into()
}

fn eval_depth_image(
    pair: &EvalPair,
    mode: AlignMode,
    min_pred: Option<f64>,
) -> Result<DepthAccumulator> {
    eval_depth_pixels(pair, mode, min_pred).map_err(|e| e.context(pair.name.clone()))
}

fn eval_depth_pixels(
    pair: &EvalPair,
    mode: AlignMode,
    min_pred: Option<f64>,
) -> Result<DepthAccumulator> {
    let pred: Grid<f64> = read_depth(&pair.pred)?.cast();
    let gt: Grid<f64> = read_depth(&pair.gt)?.cast();
    // zero ground truth is "no measurement"
    let mask =
        load_mask(pair.mask.as_deref(), gt.height(), gt.width())?.and(&Mask::positive(&gt))?;
    let mut aligned = align_for_eval(&pred, &gt, &mask, mode)?;
    if let Some(floor) = min_pred {
        aligned = aligned.map(|v| v.max(floor));
    }
    depth_accumulate(&aligned, &gt, &mask, &DELTA_THRESHOLDS)
}

fn run_eval_depth(cfg: &RunConfig) -> Result<()> {
    let mode: AlignMode = parse_enum(cfg.align.as_deref().unwrap_or("lstsq"), "align mode")?;
    if let Some(m) = cfg.min_pred {
        if !(m > 0.0) {
            return Err(Error::Parameter(format!(
                "--min-pred must be positive, got {m}"
            )));
        }
    }
    let pairs = find_eval_pairs(cfg, &["pfm", "png"])?;
    let accs: Vec<DepthAccumulator> = pool(cfg.workers)?.install(|| {
        pairs
            .par_iter()
            .map(|p| eval_depth_image(p, mode, cfg.min_pred))
            .collect::<Result<_>>()
    })?;
    let per_pixel = cfg.per_pixel.unwrap_or(false);
    let records: Vec<DepthMetricRecord> = accs.iter().map(DepthAccumulator::finish).collect();
    let aggregate = if per_pixel {
        let mut total = DepthAccumulator::default();
        accs.iter().for_each(|a| total.merge(a));
        total.finish()
    } else {
        mean_depth_records(&records).expect("at least one image")
    };
    let report = EvalReport {
        images: pairs
            .iter()
            .zip(records)
            .map(|(p, record)| EvalRow {
                image: p.name.clone(),
                record,
            })
            .collect(),
        aggregation: aggregation_name(per_pixel),
        aggregate,
        version: TOOL_VERSION.into(),
        config: cfg.clone(),
    };
    write_eval(&report, cfg)
}

fn eval_normal_image(pair: &EvalPair) -> Result<Vec<f64>> {
    let pred: Grid<f64> = read_normals(&pair.pred)?.cast();
    let gt: Grid<f64> = read_normals(&pair.gt)?.cast();
    let mask = load_mask(pair.mask.as_deref(), gt.height(), gt.width())?;
    let angles = angular_errors(&pred, &gt, &mask).map_err(|e| e.context(pair.name.clone()))?;
    if angles.is_empty() {
        return Err(Error::Parameter(format!(
            "{}: mask has no valid pixels",
            pair.name
        )));
    }
    Ok(angles)
}

fn run_eval_normals(cfg: &RunConfig) -> Result<()> {
    let pairs = find_eval_pairs(cfg, &["png"])?;
    let angles: Vec<Vec<f64>> = pool(cfg.workers)?.install(|| {
        pairs
            .par_iter()
            .map(eval_normal_image)
            .collect::<Result<_>>()
    })?;
    let per_pixel = cfg.per_pixel.unwrap_or(false);
    let records: Vec<NormalMetricRecord> = angles
        .iter()
        .map(|a| normal_record_from_angles(a))
        .collect::<Result<_>>()?;
    let aggregate = if per_pixel {
        normal_record_from_angles(&angles.concat())?
    } else {
        mean_normal_records(&records).expect("at least one image")
    };
    let report = EvalReport {
        images: pairs
            .iter()
            .zip(records)
            .map(|(p, record)| EvalRow {
                image: p.name.clone(),
                record,
            })
            .collect(),
        aggregation: aggregation_name(per_pixel),
        aggregate,
        version: TOOL_VERSION.into(),
        config: cfg.clone(),
    };
    write_eval(&report, cfg)
}

#[derive(Debug, Serialize, Deserialize)]
struct LossOutput {
    loss: LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check: Option<FdReport>,
    version: String,
    config: RunConfig,
}

fn loss_config(a: LossArgs) -> RunConfig {
    let mut cfg = new_config("loss");
    cfg.inputs.insert("pred".into(), vec![a.pred]);
    cfg.inputs.insert("gt".into(), vec![a.gt]);
    if let Some(m) = a.mask {
        cfg.inputs.insert("mask".into(), vec![m]);
    }
    if let Some(o) = a.output {
        cfg.outputs.insert("output".into(), o);
    }
    cfg.rho = Some(serialize_enum(&a.rho));
    cfg.k = Some(a.k);
    cfg.alpha = Some(a.alpha);
    cfg.grad_check = Some(a.grad_check);
    cfg
}

fn run_loss(cfg: &RunConfig) -> Result<()> {
    let defaults = LossConfig::default();
    let loss_cfg = LossConfig {
        rho: match &cfg.rho {
            Some(r) => parse_enum(r, "rho")?,
            None => defaults.rho,
        },
        scales: cfg.k.unwrap_or(defaults.scales),
        alpha: cfg.alpha.unwrap_or(defaults.alpha),
    };
    let pred: Grid<f64> = read_depth(input(cfg, "pred")?)?.cast();
    let gt: Grid<f64> = read_depth(input(cfg, "gt")?)?.cast();
    let mask = load_mask(optional_input(cfg, "mask"), gt.height(), gt.width())?;
    let loss = total_loss(&pred, &gt, &mask, &loss_cfg)?;
    let grad_check = if cfg.grad_check.unwrap_or(false) {
        Some(fd_check(&pred, &gt, &mask, &loss_cfg)?)
    } else {
        None
    };
    let out = LossOutput {
        loss,
        grad_check,
        version: TOOL_VERSION.into(),
        config: cfg.clone(),
    };
    emit(
        &to_json_string(&out)?,
        cfg.outputs.get("output").map(PathBuf::as_path),
    )
}

fn net_config(a: NetArgs) -> RunConfig {
    let mut cfg = new_config("net-forward");
    cfg.inputs.insert("input".into(), vec![a.input]);
    cfg.outputs.insert("out_dir".into(), a.out_dir);
    cfg.net_config = a.config;
    cfg.seed = Some(a.seed);
    cfg.workers = a.workers.resolve();
    cfg
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleSummary {
    scale: usize,
    height: usize,
    width: usize,
    disparity_min: f64,
    disparity_max: f64,
    /// Largest `| |n| − 1 |` over the map.
    max_normal_deviation: f64,
    files: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetReport {
    input: [usize; 2],
    padded: [usize; 2],
    param_count: usize,
    /// `[height, width, channels]` of each encoder stage.
    features: Vec<[usize; 3]>,
    scales: Vec<ScaleSummary>,
    network: NetConfig,
    version: String,
    config: RunConfig,
}

/// Replicate-pads the bottom and right edges up to `h × w`.
fn pad_replicate(img: &ImageGrid, h: usize, w: usize) -> ImageGrid {
    let c = img.channels();
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push(img.get(y.min(img.height() - 1), x.min(img.width() - 1), ch));
            }
        }
    }
    Grid::new(h, w, c, data).expect("padded from a valid grid")
}

fn crop(g: &ImageGrid, h: usize, w: usize) -> ImageGrid {
    let c = g.channels();
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let start = y * g.width() * c;
        data.extend_from_slice(&g.data()[start..start + w * c]);
    }
    Grid::new(h, w, c, data).expect("cropped from a valid grid")
}

fn run_net(cfg: &RunConfig) -> Result<()> {
    let net_cfg = match &cfg.net_config {
        Some(p) => NetConfig::parse_kv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => NetConfig::default(),
    };
    let net = Network::new(net_cfg, cfg.seed.unwrap_or(0))?;
    let img = read_rgb(input(cfg, "input")?)?;
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (
        h.div_ceil(MAX_STRIDE) * MAX_STRIDE,
        w.div_ceil(MAX_STRIDE) * MAX_STRIDE,
    );
    let out = net.forward_with_workers(&pad_replicate(&img, ph, pw), cfg.workers)?;
    let out_dir = output(cfg, "out_dir")?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut scales = vec![];
    for (&s, o) in &out.scales {
        let (sh, sw) = (h.div_ceil(1 << s), w.div_ceil(1 << s));
        let disparity = crop(&o.disparity, sh, sw);
        let normals = crop(&o.normals, sh, sw);
        let files = [
            format!("disparity_s{s}.png"),
            format!("disparity_s{s}.pfm"),
            format!("normals_s{s}.png"),
        ];
        write_png16(&out_dir.join(&files[0]), &disparity)?;
        write_pfm(&out_dir.join(&files[1]), &disparity)?;
        write_normals(&out_dir.join(&files[2]), &normals)?;
        let max_normal_deviation = normals
            .data()
            .chunks_exact(3)
            .map(|n| (n.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max);
        scales.push(ScaleSummary {
            scale: s,
            height: sh,
            width: sw,
            disparity_min: disparity.min_value() as f64,
            disparity_max: disparity.max_value() as f64,
            max_normal_deviation,
            files: files.to_vec(),
        });
    }
    let report = NetReport {
        input: [h, w],
        padded: [ph, pw],
        param_count: net.weights.param_count(),
        features: out
            .features
            .levels
            .iter()
            .map(|f| [f.height(), f.width(), f.channels()])
            .collect(),
        scales,
        network: net.config.clone(),
        version: TOOL_VERSION.into(),
        config: cfg.clone(),
    };
    emit(
        &to_json_string(&report)?,
        Some(&out_dir.join("net_report.json")),
    )
}
