//! Command-line harness for the lung-segmentation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lungseg::cli::{
    cmd_eval, cmd_infer, cmd_phantom_gen, cmd_report, cmd_train, cmd_ttest, CliError, MetricKind,
};
use lungseg::config::PipelineConfig;
use lungseg::metrics::EvalMode;
use lungseg::phantom::{PhantomConfig, Profile};
use lungseg::volgrid::manifest::Split;
use lungseg::volgrid::{Dims3, Spacing3};

#[derive(Parser)]
#[command(name = "lungseg", version, about = "Slice-wise CT lung segmentation, desk scale")]
struct Cli {
    /// RNG seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Pipeline config file (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (1 = fully sequential). Results do not depend on
    /// this: parallel splits are over disjoint outputs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with exact ground truth.
    PhantomGen(PhantomGenArgs),
    /// Train a U-net / ResU-net on a manifest's train split.
    Train(TrainArgs),
    /// Segment one volume with trained weights.
    Infer(InferArgs),
    /// Evaluate predicted masks against ground truth.
    Eval(EvalArgs),
    /// Paired t-test between two per-case report CSVs.
    Ttest(TtestArgs),
    /// Aggregate report table over several runs and test sets.
    Report(ReportArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Number of phantoms.
    #[arg(long)]
    n: usize,
    /// healthy | diverse
    #[arg(long)]
    profile: String,
    /// Output directory (manifest.csv plus RVOL1 files).
    #[arg(long)]
    out: PathBuf,
    /// Manifest split for the generated cases.
    #[arg(long, default_value = "train")]
    split: String,
    /// Voxel counts as Z,Y,X.
    #[arg(long)]
    dims: Option<String>,
    /// Voxel spacing in mm as SZ,SY,SX.
    #[arg(long)]
    spacing: Option<String>,
    #[arg(long)]
    tumor_prob: Option<f64>,
    #[arg(long)]
    effusion_prob: Option<f64>,
    #[arg(long)]
    consolidation_prob: Option<f64>,
    #[arg(long)]
    noise_sigma_hu: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Weights output path (checkpointed every epoch).
    #[arg(long)]
    out: PathBuf,
    /// Step-by-step loss log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also remove dense areas (-50 < HU < 70) from the mask.
    #[arg(long)]
    remove_dense: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted masks named <case_id>.rvol.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Ground-truth manifest; every entry is evaluated.
    #[arg(long)]
    manifest: PathBuf,
    /// per-lung | combined
    #[arg(long, default_value = "per-lung")]
    mode: String,
    #[arg(long)]
    out_report: PathBuf,
    #[arg(long)]
    out_aggregate: PathBuf,
}

#[derive(Args)]
struct TtestArgs {
    #[arg(long)]
    report_a: PathBuf,
    #[arg(long)]
    report_b: PathBuf,
    /// dsc | hd95 | msd
    #[arg(long, default_value = "dsc")]
    metric: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Entries of the form run:set:report.csv
    entries: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Validation(format!(
            "expected three comma-separated values, got {s:?}"
        )));
    }
    let mut vals = [0.0f64; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("bad number {p:?}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::PhantomGen(args) => {
            let profile = Profile::parse(&args.profile).ok_or_else(|| {
                CliError::Validation(format!("unknown profile {:?}", args.profile))
            })?;
            let split = match args.split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(CliError::Validation(format!("unknown split {other:?}")))
                }
            };
            let mut template = PhantomConfig::new(profile, cli.seed);
            if let Some(dims) = &args.dims {
                let (z, y, x) = parse_triple(dims)?;
                template.dims = Dims3::new(z as usize, y as usize, x as usize)
                    .map_err(|e| CliError::Validation(e.to_string()))?;
            }
            if let Some(spacing) = &args.spacing {
                let (z, y, x) = parse_triple(spacing)?;
                template.spacing = Spacing3::new(z, y, x)
                    .map_err(|e| CliError::Validation(e.to_string()))?;
            }
            if let Some(p) = args.tumor_prob {
                template.tumor_prob = p;
            }
            if let Some(p) = args.effusion_prob {
                template.effusion_prob = p;
            }
            if let Some(p) = args.consolidation_prob {
                template.consolidation_prob = p;
            }
            if let Some(s) = args.noise_sigma_hu {
                template.noise_sigma_hu = s;
            }
            let manifest = cmd_phantom_gen(args.n, &template, split, &args.out)?;
            println!("wrote {} cases to {}", args.n, manifest.display());
            Ok(())
        }
        Command::Train(args) => {
            let outcome = cmd_train(
                &args.manifest,
                &args.out,
                args.log.as_deref(),
                cli.seed,
                &config,
            )?;
            println!(
                "trained {} epochs x {} steps; final loss {:.6}",
                outcome.epochs,
                outcome.steps_per_epoch,
                outcome.losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Infer(args) => {
            cmd_infer(
                &args.weights,
                &args.volume,
                &args.out,
                args.remove_dense,
                &config,
            )?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let mode = match args.mode.as_str() {
                "per-lung" => EvalMode::PerLung,
                "combined" => EvalMode::Combined,
                other => return Err(CliError::Validation(format!("unknown mode {other:?}"))),
            };
            let outcome = cmd_eval(
                &args.pred_dir,
                &args.manifest,
                mode,
                &args.out_report,
                &args.out_aggregate,
            )?;
            println!(
                "evaluated {} cases: DSC {:.4} +/- {:.4}",
                outcome.aggregate.n, outcome.aggregate.dsc_mean, outcome.aggregate.dsc_sd
            );
            Ok(())
        }
        Command::Ttest(args) => {
            let metric = MetricKind::parse(&args.metric).ok_or_else(|| {
                CliError::Validation(format!("unknown metric {:?}", args.metric))
            })?;
            let r = cmd_ttest(&args.report_a, &args.report_b, metric)?;
            println!("t {:.6} df {} p {:.6}", r.t, r.df, r.p_two_sided);
            Ok(())
        }
        Command::Report(args) => {
            let mut entries = Vec::new();
            for raw in &args.entries {
                let parts: Vec<&str> = raw.splitn(3, ':').collect();
                if parts.len() != 3 {
                    return Err(CliError::Validation(format!(
                        "bad entry {raw:?}: expected run:set:path"
                    )));
                }
                entries.push((
                    parts[0].to_string(),
                    parts[1].to_string(),
                    PathBuf::from(parts[2]),
                ));
            }
            cmd_report(&entries, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Single global pool; parallel sections are deterministic for any
        // thread count, this only sets the degree of parallelism.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
