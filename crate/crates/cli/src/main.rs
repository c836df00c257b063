//! `mfenas` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid configuration or usage, 3 evaluator
//! failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mfenas_core::analysis::{export_front, fidelity_sweep, ranking_study};
use mfenas_core::decoder::to_dot;
use mfenas_core::search::{read_population, write_run_dir, SearchResult};
use mfenas_core::{run_baseline, run_search, Error, Genome, RunConfig};

#[derive(Parser)]
#[command(name = "mfenas", version, about = "Multi-fidelity evolutionary neural architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-fidelity search and write a run directory.
    Search(RunArgs),
    /// Run the complete-epoch NSGA-II baseline and write a run directory.
    Baseline(RunArgs),
    /// Print Kendall tau between each epoch's ranking and the final one.
    RankStudy(RankStudyArgs),
    /// Sweep MF values against the baseline and print reduction and tau.
    FidelitySweep(SweepArgs),
    /// Re-export front.csv and DOT files from a run directory.
    Export(ExportArgs),
    /// Print the effective configuration after validation.
    ValidateConfig(RunArgs),
    /// Render a genome (`NC=[...] RC=[...]`) as DOT.
    RenderDot(RenderArgs),
}

/// Configuration sources: defaults, then `--config`, then individual flags.
#[derive(Args, Default)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pop_size: Option<String>,
    #[arg(long)]
    gen_budget: Option<String>,
    /// `lo,hi` node count range for initialization.
    #[arg(long)]
    node_range: Option<String>,
    #[arg(long)]
    mf: Option<String>,
    #[arg(long)]
    complete_epochs: Option<String>,
    /// Capacity, or `pop` for the population size.
    #[arg(long)]
    archive_capacity: Option<String>,
    #[arg(long)]
    p_crossover: Option<String>,
    #[arg(long)]
    p_inter: Option<String>,
    /// Probability, or `auto` for one over the cell's link bits.
    #[arg(long)]
    p_link: Option<String>,
    #[arg(long)]
    p_op: Option<String>,
    #[arg(long)]
    p_add: Option<String>,
    #[arg(long)]
    node_cap: Option<String>,
    /// `synthetic`, `synthetic:SEED` or `exec:COMMAND`.
    #[arg(long)]
    evaluator: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    n_repeat: Option<String>,
    #[arg(long)]
    base_channels: Option<String>,
    #[arg(long)]
    num_classes: Option<String>,
    #[arg(long)]
    synthetic_noise: Option<String>,
    /// Seconds before an external trainer call is abandoned.
    #[arg(long)]
    trainer_timeout: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("pop_size", &self.pop_size),
            ("gen_budget", &self.gen_budget),
            ("node_range", &self.node_range),
            ("mf", &self.mf),
            ("complete_epochs", &self.complete_epochs),
            ("archive_capacity", &self.archive_capacity),
            ("p_crossover", &self.p_crossover),
            ("p_inter", &self.p_inter),
            ("p_link", &self.p_link),
            ("p_op", &self.p_op),
            ("p_add", &self.p_add),
            ("node_cap", &self.node_cap),
            ("evaluator", &self.evaluator),
            ("seed", &self.seed),
            ("output_dir", &self.output_dir),
            ("n_repeat", &self.n_repeat),
            ("base_channels", &self.base_channels),
            ("num_classes", &self.num_classes),
            ("synthetic_noise", &self.synthetic_noise),
            ("trainer_timeout", &self.trainer_timeout),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RankStudyArgs {
    /// Number of random architectures.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Largest epoch count; also the reference ranking.
    #[arg(long, default_value_t = 25)]
    epochs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated MF values.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,12")]
    mf_values: Vec<u32>,
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory holding final_population.jsonl.
    run_dir: PathBuf,
    /// Destination directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Genome in canonical form, e.g. `NC=[1,1,2] RC=[1,0,5]`.
    genome: String,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::MalformedEncoding(_) | Error::InvalidOp(_) | Error::InvalidCell(_)) => 2,
        Some(
            Error::Evaluation { .. }
            | Error::Timeout { .. }
            | Error::Protocol(_)
            | Error::MissingCheckpoint(_)
            | Error::Resume { .. },
        ) => 3,
        _ => 1,
    }
}

fn print_summary(cfg: &RunConfig, result: &SearchResult) {
    let hv = result.events.last().and_then(|e| e.hv).unwrap_or(f64::NAN);
    println!("run directory: {}", cfg.output_dir.display());
    println!("evaluator: {}", result.evaluator);
    println!("total epochs: {}", result.total_epochs);
    println!("final hypervolume: {hv:.4}");
}

fn search(args: &RunArgs, baseline: bool) -> Result<()> {
    let cfg = args.resolve()?;
    let mut engine = cfg.build_engine()?;
    let result = if baseline {
        run_baseline(&cfg, &mut engine)?
    } else {
        run_search(&cfg, &mut engine)?
    };
    write_run_dir(&cfg.output_dir, &cfg, &result)?;
    print_summary(&cfg, &result);
    Ok(())
}

fn rank_study(args: &RankStudyArgs) -> Result<()> {
    if args.epochs == 0 {
        return Err(Error::Config("--epochs must be at least 1".into()).into());
    }
    let taus = ranking_study(args.n, args.epochs, args.seed)?;
    if args.json {
        println!("{}", serde_json::to_string(&taus)?);
        return Ok(());
    }
    println!("epochs  tau");
    for (e, tau) in taus.iter().enumerate() {
        println!("{:>6}  {tau:.4}", e + 1);
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    if args.seeds == 0 || args.mf_values.is_empty() {
        return Err(Error::Config("need at least one seed and one MF value".into()).into());
    }
    let base = args.run.resolve()?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    info!("sweeping MF {:?} over {} seeds", args.mf_values, seeds.len());
    let rows = fidelity_sweep(&base, &args.mf_values, &seeds)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("    mf  reduction     tau");
    for r in &rows {
        println!("{:>6}  {:>9.4}  {:>6.4}", r.mf, r.reduction, r.tau);
    }
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let src = args.run_dir.join("final_population.jsonl");
    if !src.is_file() {
        bail!("{} not found; is {} a run directory?", src.display(), args.run_dir.display());
    }
    let pop = read_population(&src)?;
    let out = args.out.as_deref().unwrap_or(&args.run_dir);
    for path in export_front(&pop, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn render(args: &RenderArgs) -> Result<()> {
    let genome = Genome::parse_canonical(&args.genome)?;
    let dot = to_dot(&genome)?;
    match &args.output {
        Some(path) => write(path, &dot),
        None => {
            print!("{dot}");
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search(a) => search(&a, false),
        Command::Baseline(a) => search(&a, true),
        Command::RankStudy(a) => rank_study(&a),
        Command::FidelitySweep(a) => sweep(&a),
        Command::Export(a) => export(&a),
        Command::ValidateConfig(a) => {
            print!("{}", a.resolve()?.to_text());
            Ok(())
        }
        Command::RenderDot(a) => render(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
