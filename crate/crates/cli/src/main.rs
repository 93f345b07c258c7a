use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use polmz_core::analysis::{analyze_series, mean_std};
use polmz_core::config::{load_config, AnalysisConfig, ScenarioConfig, ScenarioId};
use polmz_core::output::{read_counts, write_analysis, write_outputs, COUNTS_FILE};
use polmz_core::{run_scenario, Error, VisibilityStats};

#[derive(Parser)]
#[command(name = "polmz", version, about = "Fibre Mach-Zehnder interferometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its outputs.
    Run(RunArgs),
    /// Run one scenario for several seeds, in parallel.
    Sweep(SweepArgs),
    /// Recompute envelope, visibility and histogram from a counts.csv.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// pol_on, pol_off, phase_off or custom. Overrides the config file.
    #[arg(long)]
    scenario: Option<String>,
    /// TOML configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated seeds or an inclusive range such as `1..5`.
    #[arg(long, default_value = "1..5")]
    seeds: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// counts.csv, or a run directory containing one.
    input: PathBuf,
    #[arg(long, default_value_t = AnalysisConfig::default().window_s)]
    window_s: f64,
    #[arg(long, default_value_t = AnalysisConfig::default().hist_bin)]
    hist_bin: f64,
    #[arg(long, default_value_t = AnalysisConfig::default().smooth_s)]
    smooth_s: f64,
    /// Where to write visibility.csv and histogram.csv; defaults to the input directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn build_config(common: &Common, seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = &common.scenario {
        cfg.scenario = s.parse::<ScenarioId>()?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(d) = common.duration_s {
        cfg.duration_s = d;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config {
        field: "seeds".into(),
        reason: format!("expected `a..b` or a comma-separated list, got `{spec}`"),
    };
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

struct Summary {
    seed: u64,
    stats: VisibilityStats,
    overlap_q: f64,
    mean_counts: f64,
}

fn run_one(cfg: &ScenarioConfig) -> Result<Summary, Error> {
    let result = run_scenario(cfg)?;
    let stats = analyze_series(&result.counts.net, cfg.bin_s, &cfg.analysis)?;
    write_outputs(&result, &stats, &cfg.out_dir)?;
    let n = result.diagnostics.len() as f64;
    Ok(Summary {
        seed: cfg.seed,
        overlap_q: result.diagnostics.iter().map(|d| d.overlap_q).sum::<f64>() / n,
        mean_counts: result.counts.net.iter().sum::<f64>() / n,
        stats,
    })
}

fn summary_line(s: &Summary) -> String {
    format!(
        "seed {:>4}  V mean {:.4}  V std {:.4}  mean |c| {:.4}  mean net counts {:.1}",
        s.seed, s.stats.mean, s.stats.std, s.overlap_q, s.mean_counts
    )
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let cfg = build_config(&args.common, args.seed)?;
    let summary = run_one(&cfg)?;
    println!("{} {}", cfg.scenario, summary_line(&summary));
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let base = build_config(&args.common, None)?;
    let seeds = parse_seeds(&args.seeds)?;
    let root = base.out_dir.clone();
    let results: Vec<Summary> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.out_dir = root.join(format!("seed_{seed}"));
            run_one(&cfg)
        })
        .collect::<Result<_, _>>()?;

    let mut table = String::from("seed,mean_v,std_v,mean_overlap_q,mean_net_counts\n");
    for s in &results {
        println!("{} {}", base.scenario, summary_line(s));
        writeln!(
            table,
            "{},{},{},{},{}",
            s.seed, s.stats.mean, s.stats.std, s.overlap_q, s.mean_counts
        )
        .expect("writing to a String cannot fail");
    }
    let pooled: Vec<f64> = results
        .iter()
        .flat_map(|s| {
            s.stats
                .visibility
                .iter()
                .zip(&s.stats.valid)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
        })
        .collect();
    let (mean, std) = mean_std(&pooled);
    let means: Vec<f64> = results.iter().map(|s| s.stats.mean).collect();
    let (_, between) = mean_std(&means);
    println!(
        "{} pooled over {} seeds: V mean {mean:.4}  V std {std:.4}  seed-to-seed std {between:.4}",
        base.scenario,
        results.len()
    );
    let path = root.join("sweep.csv");
    std::fs::write(&path, table).map_err(|source| Error::Io { path, source })?;
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let counts_path = if args.input.is_dir() {
        args.input.join(COUNTS_FILE)
    } else {
        args.input.clone()
    };
    let cfg = AnalysisConfig {
        window_s: args.window_s,
        smooth_s: args.smooth_s,
        hist_bin: args.hist_bin,
    };
    for (field, v) in [("window_s", cfg.window_s), ("smooth_s", cfg.smooth_s)] {
        if !(v > 0.0) {
            return Err(Error::Config {
                field: field.into(),
                reason: format!("must be > 0, got {v}"),
            });
        }
    }
    if !(cfg.hist_bin > 0.0 && cfg.hist_bin <= 1.0) {
        return Err(Error::Config {
            field: "hist_bin".into(),
            reason: "must be in (0, 1]".into(),
        });
    }
    let table = read_counts(&counts_path)?;
    let bin_s = table.bin_s()?;
    if cfg.window_s < 3.0 * bin_s {
        return Err(Error::Config {
            field: "window_s".into(),
            reason: format!("must span at least 3 bins ({} s)", 3.0 * bin_s),
        });
    }
    let stats = analyze_series(&table.net, bin_s, &cfg)?;
    let out_dir = match args.out_dir {
        Some(d) => d,
        None => counts_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    write_analysis(&stats, bin_s, &out_dir)?;
    println!(
        "V mean {:.4}  V std {:.4}  valid points {}/{}",
        stats.mean,
        stats.std,
        stats.n_valid(),
        stats.valid.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
