//! Command-line driver: train agents, aggregate seed curves, report
//! timesteps-to-threshold, and run ablation sweeps.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spiac::harness::{
    aggregate, parse_ablate_grid, read_seed_curves, report_to_csv, run_ablation, run_training,
    threshold_report, write_curve_csv, CurvePoint, RunConfig,
};

#[derive(Parser)]
#[command(name = "spiac", about = "Stochastic proximal iteration actor-critic training stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write per-seed curve CSVs and checkpoints.
    Train(TrainArgs),
    /// Combine seed_*.csv curves of one run into a mean/std curve.
    Aggregate(AggregateArgs),
    /// Timesteps-to-threshold report over one or more runs.
    Report(ReportArgs),
    /// Cartesian ablation sweep (loss kind x policy value x optimizer).
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Environment id: pendulum, reacher2d, or lqr.
    #[arg(long)]
    env: Option<String>,
    /// Key-value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed count (single integer n runs seeds 0..n) or explicit comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory for seed_<s>.csv and seed_<s>.ckpt files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Directory holding seed_*.csv files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Path of the aggregated CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Exponential smoothing weight applied after aggregation (1 = none).
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (seed_*.csv inside) or a directory of such directories.
    #[arg(long = "in")]
    input: PathBuf,
    /// Ascending comma-separated return thresholds.
    #[arg(long, allow_hyphen_values = true)]
    thresholds: String,
    /// Optional path for the report CSV; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Grid file: run-config keys plus sweep.loss_kind / sweep.policy_value /
    /// sweep.optimizer comma lists.
    #[arg(long)]
    grid: PathBuf,
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>, String> {
    let parse_one = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("bad seed value {s:?}; expected a non-negative integer"))
    };
    if text.contains(',') {
        text.split(',').map(parse_one).collect()
    } else {
        let n = parse_one(text)?;
        Ok((0..n).collect())
    }
}

fn run_train(args: &TrainArgs) -> Result<(), String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            RunConfig::from_kv_text(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::new("", "runs"),
    };
    if let Some(env) = &args.env {
        cfg.env_id = env.clone();
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = parse_seed_list(seeds)?;
    }
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }

    let summaries = run_training(&cfg).map_err(|e| e.to_string())?;
    for s in &summaries {
        println!(
            "seed {}: final mean return {:.3} ({} target violations, {} clamped actions) -> {}",
            s.seed,
            s.final_mean_return,
            s.min_target_violations,
            s.action_clamp_events,
            s.curve_path.display()
        );
    }
    Ok(())
}

fn run_aggregate(args: &AggregateArgs) -> Result<(), String> {
    let curves = read_seed_curves(&args.input).map_err(|e| e.to_string())?;
    let agg = aggregate(&curves, args.alpha).map_err(|e| e.to_string())?;
    write_curve_csv(&args.out, &agg).map_err(|e| e.to_string())?;
    println!("aggregated {} curves -> {}", curves.len(), args.out.display());
    Ok(())
}

fn collect_report_entries(input: &PathBuf) -> Result<Vec<(String, Vec<Vec<CurvePoint>>)>, String> {
    let name_of = |p: &PathBuf| {
        p.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string()
    };
    // A run directory directly?
    if let Ok(curves) = read_seed_curves(input) {
        return Ok(vec![(name_of(input), curves)]);
    }
    // Otherwise: every subdirectory holding seed curves is one config.
    let mut subdirs: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| format!("cannot read {}: {e}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut entries = Vec::new();
    for dir in subdirs {
        if let Ok(curves) = read_seed_curves(&dir) {
            entries.push((name_of(&dir), curves));
        }
    }
    if entries.is_empty() {
        return Err(format!("no seed_*.csv files under {} or its subdirectories", input.display()));
    }
    Ok(entries)
}

fn run_report(args: &ReportArgs) -> Result<(), String> {
    let thresholds: Vec<f64> = args
        .thresholds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad threshold {s:?}; expected a number"))
        })
        .collect::<Result<_, _>>()?;
    let entries = collect_report_entries(&args.input)?;
    let rows = threshold_report(&entries, &thresholds).map_err(|e| e.to_string())?;
    let csv = report_to_csv(&rows);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_ablate(args: &AblateArgs) -> Result<(), String> {
    let text = fs::read_to_string(&args.grid)
        .map_err(|e| format!("cannot read grid {}: {e}", args.grid.display()))?;
    let grid = parse_ablate_grid(&text).map_err(|e| e.to_string())?;
    let outcome = run_ablation(&grid).map_err(|e| e.to_string())?;
    println!(
        "thresholds from reference cell: {}",
        outcome
            .thresholds
            .iter()
            .map(|t| format!("{t:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    for cell in &outcome.cells {
        println!(
            "cell {}: best mean return {:.3} ({} target violations) -> {}",
            cell.name,
            cell.best_mean_return,
            cell.min_target_violations,
            cell.dir.display()
        );
    }
    println!("report: {}", outcome.report_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => run_train(args),
        Command::Aggregate(args) => run_aggregate(args),
        Command::Report(args) => run_report(args),
        Command::Ablate(args) => run_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
