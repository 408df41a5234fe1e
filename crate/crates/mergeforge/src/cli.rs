//! Command-line surface: thin argument parsing and I/O around the library.

use crate::error::{Error, Result};
use crate::evalmetrics::{
    build_report, harm_change, harm_counts, ingest_judgments, pref_tally, win_rate,
    MetricCell, MetricTable,
};
use crate::mergecore::{compute_delta, DareOptions, SignMode, TiesOptions};
use crate::recipe::{execute_recipe, load_recipe};
use crate::search::{
    default_grid_values, enumerate_grid, join_scores, render_sweep_table, run_sweep, GridMethod,
    GridSpec, SweepConfig,
};
use crate::tensorio::{read_archive, read_header, write_archive, TensorArchive};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "mergeforge", version, about = "Checkpoint merging toolkit")]
pub struct Cli {
    /// Worker threads for merge kernels (default: MERGEFORGE_THREADS or all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress informational output on stderr
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a merge described by a TOML recipe
    Merge(MergeArgs),
    /// Sweep a coefficient grid and rank the candidates
    Grid(GridArgs),
    /// Print the header of a tensor archive
    Inspect { archive: PathBuf },
    /// Write the per-tensor difference of a model against a base
    Delta(DeltaArgs),
    /// Compute safety/general scores for one model from a judgment file
    Score(ScoreArgs),
    /// Render a metric table with baseline deltas
    Report(ReportArgs),
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    recipe: PathBuf,
    /// Output path, overriding the recipe's `output`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dropout seed, overriding the recipe's `seed`
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GridArgs {
    /// TOML sweep configuration
    #[arg(long)]
    grid: PathBuf,
    /// Output prefix, overriding the config's `out_prefix`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeltaArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Line-delimited JSON judgment records
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long)]
    model_id: String,
    #[arg(long)]
    baseline_id: String,
    /// Write the scores as JSON here instead of stdout only
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metric table as JSON: {"baseline": .., "rows": {method: {lang: cell}}}
    #[arg(long)]
    metrics: PathBuf,
    /// Baseline row name, overriding the file's `baseline`
    #[arg(long)]
    baseline: Option<String>,
    /// Write the structured report as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("MERGEFORGE_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        });
    if let Some(n) = threads {
        // ignore failure: the global pool can only be sized once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let quiet = cli.quiet;
    match cli.command {
        Command::Merge(args) => cmd_merge(args, quiet),
        Command::Grid(args) => cmd_grid(args, quiet),
        Command::Inspect { archive } => cmd_inspect(archive),
        Command::Delta(args) => cmd_delta(args),
        Command::Score(args) => cmd_score(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_merge(args: MergeArgs, quiet: bool) -> Result<()> {
    let recipe = load_recipe(&args.recipe)?;
    let summary = execute_recipe(&recipe, args.out, args.seed)?;
    if !quiet {
        for d in &summary.defaults_applied {
            eprintln!("default applied: {d}");
        }
        if let Some(trace) = &summary.schedule_layer_t {
            eprintln!(
                "schedule per-layer t: {}",
                trace
                    .iter()
                    .map(|t| format!("{t:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    }
    println!("{}", summary.output.display());
    Ok(())
}

fn cmd_inspect(path: PathBuf) -> Result<()> {
    let bytes = std::fs::read(&path)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", path.display())))?;
    let (mut entries, metadata, data_start) = read_header(&bytes)?;
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    println!("tensors: {}", entries.len());
    println!("data buffer: {} bytes at offset {}", bytes.len() - data_start, data_start);
    for e in &entries {
        let shape = e
            .shape
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let shape = if shape.is_empty() { "scalar".into() } else { shape };
        println!(
            "{}\t{}\t{}\t[{}..{})",
            e.name,
            e.dtype.as_str(),
            shape,
            e.begin,
            e.end
        );
    }
    for (k, v) in &metadata {
        println!("metadata\t{k}\t{v}");
    }
    Ok(())
}

fn cmd_delta(args: DeltaArgs) -> Result<()> {
    let model = read_archive(&args.model)?;
    let base = read_archive(&args.base)?;
    let delta = compute_delta(&model, &base)?;
    let mut out = TensorArchive::new();
    for (name, tensor) in delta.deltas() {
        out.insert(name, tensor.clone())?;
    }
    out.set_metadata("delta_base", args.base.display().to_string());
    out.set_metadata("delta_model", args.model.display().to_string());
    write_archive(&out, &args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let report = ingest_judgments(&args.judgments)?;
    for (lineno, reason) in &report.rejected {
        eprintln!("warning: line {lineno} rejected: {reason}");
    }
    if report.duplicates > 0 {
        eprintln!("warning: {} duplicate records replaced", report.duplicates);
    }
    let set = &report.set;

    let mut per_language = serde_json::Map::new();
    let mut safety_values = Vec::new();
    let mut general_values = Vec::new();
    for lang in set.languages() {
        let mut cell = serde_json::Map::new();
        let model = harm_counts(set, &args.model_id, Some(&lang));
        let base = harm_counts(set, &args.baseline_id, Some(&lang));
        if model.total > 0 && base.total > 0 {
            let safety = harm_change(model, base)?;
            safety_values.push(safety);
            cell.insert("safety".into(), safety.into());
        }
        let tally = pref_tally(set, &args.model_id, Some(&lang));
        if tally.total() > 0 {
            let general = win_rate(tally)?;
            general_values.push(general);
            cell.insert("general".into(), general.into());
        }
        if !cell.is_empty() {
            per_language.insert(lang, cell.into());
        }
    }
    if safety_values.is_empty() && general_values.is_empty() {
        return Err(Error::EmptySet);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut scores = serde_json::Map::new();
    if !safety_values.is_empty() {
        scores.insert("safety".into(), mean(&safety_values).into());
    }
    if !general_values.is_empty() {
        scores.insert("general".into(), mean(&general_values).into());
    }
    let result = serde_json::json!({
        "model_id": args.model_id,
        "baseline_id": args.baseline_id,
        "scores": scores,
        "per_language": per_language,
    });
    let rendered = serde_json::to_string_pretty(&result).expect("scores serialize");
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered)?;
    }
    println!("{rendered}");
    Ok(())
}

#[derive(Deserialize)]
struct MetricsFile {
    baseline: String,
    rows: BTreeMap<String, BTreeMap<String, MetricCell>>,
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.metrics)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", args.metrics.display())))?;
    let file: MetricsFile = serde_json::from_str(&text)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", args.metrics.display())))?;
    let table = MetricTable {
        rows: file.rows,
        baseline_row: args.baseline.unwrap_or(file.baseline),
    };
    let report = build_report(&table)?;
    if let Some(out) = &args.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&report.structured).expect("report serializes"),
        )?;
    }
    print!("{}", report.text);
    Ok(())
}

/// Sweep configuration file. `evaluator = "target"` scores each candidate by
/// its distance to a reference archive; `evaluator = "scores"` joins against
/// an externally produced scores file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    method: GridMethod,
    #[serde(default)]
    values: Option<Vec<f64>>,
    models: Vec<PathBuf>,
    #[serde(default)]
    base: Option<PathBuf>,
    evaluator: String,
    #[serde(default)]
    target: Option<PathBuf>,
    #[serde(default)]
    scores: Option<PathBuf>,
    #[serde(default)]
    density: Option<f64>,
    #[serde(default)]
    sign_mode: Option<String>,
    #[serde(default)]
    drop_prob: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out_prefix: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ScoreEntry {
    coefficients: Vec<f64>,
    safety: f64,
    general: f64,
}

fn archive_distance(a: &TensorArchive, b: &TensorArchive) -> f64 {
    a.iter()
        .map(|(name, t)| {
            b.get(name).map_or(f64::INFINITY, |u| {
                t.data()
                    .iter()
                    .zip(u.data())
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum()
            })
        })
        .sum::<f64>()
        .sqrt()
}

fn cmd_grid(args: GridArgs, quiet: bool) -> Result<()> {
    let text = std::fs::read_to_string(&args.grid)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", args.grid.display())))?;
    let file: GridFile =
        toml::from_str(&text).map_err(|e| Error::BadGrid(e.to_string()))?;

    let values = file.values.clone().unwrap_or_else(|| {
        if !quiet {
            eprintln!("default applied: values=[0, 1/3, 1/2, 2/3, 1]");
        }
        default_grid_values()
    });
    let grid = GridSpec::new(values, file.method, file.models.len())?;
    let candidates = enumerate_grid(&grid)?;

    let sign_mode = match file.sign_mode.as_deref() {
        None | Some("paper") => SignMode::Paper,
        Some("mass") => SignMode::Mass,
        Some(other) => return Err(Error::BadGrid(format!("unknown sign_mode {other:?}"))),
    };
    let cfg = SweepConfig {
        grid,
        ties: TiesOptions {
            density: file.density.unwrap_or(0.5),
            sign_mode,
            weights: None,
            apply_to: crate::mergecore::ApplyTo::Deltas,
        },
        dare: DareOptions {
            drop_prob: file.drop_prob.unwrap_or(0.9),
            rng_seed: file.seed.unwrap_or(0),
        },
    };

    let rows = match file.evaluator.as_str() {
        "target" => {
            let target_path = file
                .target
                .as_ref()
                .ok_or_else(|| Error::BadGrid("evaluator \"target\" needs `target`".into()))?;
            let target = read_archive(target_path)?;
            let models: Vec<TensorArchive> = file
                .models
                .iter()
                .map(|p| {
                    let mut m = read_archive(p)?;
                    m.set_metadata("model_id", p.display().to_string());
                    Ok(m)
                })
                .collect::<Result<_>>()?;
            let model_refs: Vec<&TensorArchive> = models.iter().collect();
            let base = file.base.as_ref().map(read_archive).transpose()?;
            run_sweep(&cfg, &candidates, &model_refs, base.as_ref(), |merged| {
                let mut s = BTreeMap::new();
                s.insert("general".to_string(), -archive_distance(merged, &target));
                s.insert("safety".to_string(), 0.0);
                Ok(s)
            })
        }
        "scores" => {
            let scores_path = file
                .scores
                .as_ref()
                .ok_or_else(|| Error::BadGrid("evaluator \"scores\" needs `scores`".into()))?;
            let text = std::fs::read_to_string(scores_path)
                .map_err(|e| Error::UnreadableFile(format!("{}: {e}", scores_path.display())))?;
            let entries: Vec<ScoreEntry> = serde_json::from_str(&text)
                .map_err(|e| Error::MissingScores(format!("{}: {e}", scores_path.display())))?;
            let table: Vec<(Vec<f64>, BTreeMap<String, f64>)> = entries
                .into_iter()
                .map(|e| {
                    let mut s = BTreeMap::new();
                    s.insert("safety".to_string(), e.safety);
                    s.insert("general".to_string(), e.general);
                    (e.coefficients, s)
                })
                .collect();
            join_scores(&candidates, &table)
        }
        other => return Err(Error::BadGrid(format!("unknown evaluator {other:?}"))),
    };

    let table = render_sweep_table(&rows);
    print!("{table}");
    let prefix = args.out.or(file.out_prefix);
    if let Some(prefix) = prefix {
        let mut tsv = prefix.clone().into_os_string();
        tsv.push(".tsv");
        std::fs::write(&tsv, &table)?;
        let mut json_path = prefix.into_os_string();
        json_path.push(".json");
        std::fs::write(
            &json_path,
            serde_json::to_string_pretty(&rows).expect("rows serialize"),
        )?;
    }
    Ok(())
}
