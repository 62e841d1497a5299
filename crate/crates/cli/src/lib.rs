//! Command-line driver: verification suites, parameter audits, training runs
//! and block sweeps.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
//! config error.

pub mod config;
pub mod csv;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use block_fusion::fusion::{largest_cube_edge, param_breakdown};
use block_fusion::train::{
    generate_task, summarize, sweep_blocks, train_model, SweepMode, SweepOptions,
};
use block_fusion::verify::{run_all, GradientFault, VerifyOptions};
use block_fusion::{FusionSpec, Scheme, SchemeKind};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use config::{parse_mode, ConfigError, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "block-fusion", version, about = "Bilinear fusion operators: checks, counts, training and sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the self-check suites against the brute-force oracles.
    Verify(VerifyArgs),
    /// Print closed-form parameter counts.
    Count(CountArgs),
    /// Train one student from a config and write per-epoch CSV.
    Train(TrainArgs),
    /// Sweep the number of blocks R and write one CSV row per R.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Only suites and instances involving this scheme.
    #[arg(long)]
    pub scheme: Option<SchemeKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances per scheme for every suite (defaults are per suite).
    #[arg(long)]
    pub instances: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long)]
    pub scheme: SchemeKind,
    #[arg(long = "in", num_args = 2, value_names = ["I", "J"], required = true)]
    pub input: Vec<usize>,
    #[arg(long = "out", value_name = "K")]
    pub output: usize,
    #[arg(long, num_args = 3, value_names = ["L", "M", "N"])]
    pub core: Option<Vec<usize>>,
    #[arg(long, value_name = "R")]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub slice_rank: Option<usize>,
    /// BLOCK only: cube edge is the largest L with R·L³ <= budget.
    #[arg(long, conflicts_with = "core")]
    pub budget: Option<usize>,
    #[arg(long, value_name = "k")]
    pub factor: Option<usize>,
    #[arg(long, value_name = "o")]
    pub pooled: Option<usize>,
    #[arg(long, value_name = "Q")]
    pub cascade: Option<usize>,
    #[arg(long, value_name = "d")]
    pub sketch: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// MCB hash seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// CSV path; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub config: PathBuf,
    /// fixed_core_size or fixed_param_budget.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub core_dim: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Comma-separated block counts.
    #[arg(long = "r", value_delimiter = ',', value_name = "R,...")]
    pub r_values: Option<Vec<usize>>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Injection points for tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct Hooks {
    pub gradient_fault: Option<GradientFault>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Config(ConfigError),
    Failure(String),
    Io(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Failure(_) | CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

fn subcommand(name: &str) -> Option<clap::Command> {
    let mut root = Cli::command();
    root.build();
    root.find_subcommand(name).cloned()
}

fn usage(sub: &str, message: impl std::fmt::Display) -> CliError {
    let mut cmd = subcommand(sub).expect("known subcommand");
    CliError::Usage(cmd.error(ErrorKind::MissingRequiredArgument, message))
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, out, err, Hooks::default())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, hooks: Hooks) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let _ = write!(err, "{rendered}");
            if !rendered.contains("Usage:") {
                let mut cmd = args
                    .get(1)
                    .and_then(|a| a.to_str())
                    .and_then(subcommand)
                    .unwrap_or_else(Cli::command);
                let _ = writeln!(err, "\n{}", cmd.render_usage());
            }
            return EXIT_USAGE;
        }
    };
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(&a, hooks, out),
        Command::Count(a) => cmd_count(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = match &e {
                CliError::Usage(u) => write!(err, "{}", u.render()),
                CliError::Config(c) => writeln!(err, "config error: {c}"),
                CliError::Failure(m) => writeln!(err, "error: {m}"),
                CliError::Io(io) => writeln!(err, "error: {io:#}"),
            };
            e.exit_code()
        }
    }
}

pub fn cmd_verify(args: &VerifyArgs, hooks: Hooks, out: &mut dyn Write) -> Result<i32, CliError> {
    let options = VerifyOptions {
        scheme: args.scheme,
        seed: args.seed,
        instances: args.instances,
        gradient_fault: hooks.gradient_fault,
    };
    let report = run_all(&options);
    for s in &report.suites {
        writeln!(
            out,
            "{:<20} {}  passed {:>5}  failed {:>5}  worst {:.3e}",
            s.suite.name(),
            if s.ok() { "PASS" } else { "FAIL" },
            s.passed,
            s.failed,
            s.worst
        )?;
    }
    writeln!(out, "{} suites", report.suites.len())?;
    match report.first_failure() {
        None => Ok(EXIT_OK),
        Some((suite, failure)) => {
            writeln!(out, "first failure in {suite}: {failure}")?;
            writeln!(
                out,
                "reproduce: block-fusion verify --scheme {} --seed {} (instance seed {})",
                failure.scheme, args.seed, failure.seed
            )?;
            Ok(EXIT_FAILURE)
        }
    }
}

fn count_spec(a: &CountArgs) -> Result<(FusionSpec, Option<(usize, usize)>), CliError> {
    let need = |v: Option<usize>, flag: &str| {
        v.ok_or_else(|| usage("count", format!("scheme {} requires --{flag}", a.scheme)))
    };
    let core = |a: &CountArgs| -> Result<[usize; 3], CliError> {
        match a.core.as_deref() {
            Some([l, m, n]) => Ok([*l, *m, *n]),
            _ => Err(usage("count", format!("scheme {} requires --core L M N", a.scheme))),
        }
    };
    let mut budget_info = None;
    let scheme = match a.scheme {
        SchemeKind::Block => {
            let blocks = need(a.blocks, "blocks")?;
            let core = match a.budget {
                Some(budget) => {
                    let l = largest_cube_edge(blocks, budget);
                    if l == 0 {
                        return Err(CliError::Failure(format!(
                            "R={blocks} blocks do not fit the budget {budget}"
                        )));
                    }
                    budget_info = Some((budget, l));
                    [l, l, l]
                }
                None => core(a)?,
            };
            Scheme::Block {
                core,
                blocks,
                slice_rank: a.slice_rank,
            }
        }
        SchemeKind::Tucker => Scheme::Tucker {
            core: core(a)?,
            slice_rank: a.slice_rank,
        },
        SchemeKind::Mutan => Scheme::Tucker {
            core: core(a)?,
            slice_rank: Some(need(a.slice_rank, "slice-rank")?),
        },
        SchemeKind::Cp => Scheme::Cp {
            rank: need(a.rank, "rank")?,
        },
        SchemeKind::Mfb => Scheme::Mfb {
            factor_rank: need(a.factor, "factor")?,
            pooled_dim: need(a.pooled, "pooled")?,
        },
        SchemeKind::Mfh => Scheme::Mfh {
            cascade: need(a.cascade, "cascade")?,
            factor_rank: need(a.factor, "factor")?,
            pooled_dim: need(a.pooled, "pooled")?,
        },
        SchemeKind::Mcb => Scheme::Mcb {
            sketch_dim: need(a.sketch, "sketch")?,
            seed: a.seed.unwrap_or(0),
        },
        SchemeKind::LinearSum => Scheme::LinearSum {
            hidden: need(a.hidden, "hidden")?,
        },
        SchemeKind::ConcatMlp => Scheme::ConcatMlp {
            hidden: need(a.hidden, "hidden")?,
        },
        SchemeKind::Composite => {
            return Err(usage("count", "composite has no flag form; its count is the sum of its branches plus the final map"))
        }
    };
    if a.budget.is_some() && a.scheme != SchemeKind::Block {
        return Err(usage("count", "--budget applies to scheme block only"));
    }
    let spec = FusionSpec::new([a.input[0], a.input[1]], a.output, scheme)
        .map_err(|e| usage("count", e))?;
    Ok((spec, budget_info))
}

pub fn cmd_count(args: &CountArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (spec, budget) = count_spec(args)?;
    writeln!(out, "{}", summarize(&spec))?;
    if let Some((budget, l)) = budget {
        writeln!(out, "{:<10}{budget}", "budget")?;
        writeln!(out, "{:<10}{l}", "L=M=N")?;
    }
    for (name, n) in param_breakdown(&spec) {
        writeln!(out, "{name:<10}{n}")?;
    }
    if let Some((budget, _)) = budget {
        writeln!(out, "{:<10}{}", "unspent", budget - spec.core_param_count())?;
    }
    writeln!(out, "{:<10}{}", "total", spec.param_count())?;
    Ok(EXIT_OK)
}

fn load(path: &std::path::Path) -> Result<(ExperimentConfig, String), CliError> {
    let cfg = ExperimentConfig::load(path)?;
    Ok((cfg, path.display().to_string()))
}

fn write_file(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Io)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (cfg, source) = load(&args.config)?;
    let mut exp = cfg.experiment(&source)?;
    if let Some(seed) = args.seed {
        exp.train.seed = seed;
    }
    let path = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| usage("train", "no output path: set `output` in the config or pass --out"))?;
    let data = generate_task(&exp.task).map_err(|e| CliError::Failure(e.to_string()))?;
    let record = train_model(&exp.student, &data, &exp.train)
        .map_err(|e| CliError::Failure(format!("training failed: {e}")))?;
    write_file(&path, &csv::train_csv(&record))?;

    writeln!(out, "{}", record.spec_summary)?;
    writeln!(out, "param_count      {}", record.param_count)?;
    writeln!(out, "stopping_epoch   {}", record.stopping_epoch)?;
    writeln!(out, "best_epoch       {}", record.best_epoch)?;
    writeln!(out, "best_val_metric  {}", csv::float(record.best_val_metric))?;
    writeln!(out, "final_train_loss {}", csv::float(record.final_train_loss))?;
    writeln!(out, "test_metric      {}", csv::float(record.test_metric))?;
    writeln!(
        out,
        "seeds            init={} shuffle={} teacher={} data={}",
        record.init_seed, record.shuffle_seed, exp.task.teacher_seed, exp.task.data_seed
    )?;
    writeln!(out, "seconds          {:.3}", record.seconds)?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (cfg, source) = load(&args.config)?;
    let mut exp = cfg.experiment(&source)?;
    if let Some(seed) = args.seed {
        exp.train.seed = seed;
    }
    let section = cfg.sweep.clone().unwrap_or_default();
    let mode_name = args
        .mode
        .clone()
        .or(section.mode)
        .ok_or_else(|| usage("sweep", "no sweep mode: pass --mode or set sweep.mode"))?;
    let mode: SweepMode = parse_mode(
        &mode_name,
        args.core_dim.or(section.core_dim),
        args.budget.or(section.budget),
    )
    .map_err(|m| usage("sweep", m))?;
    let r_values = args
        .r_values
        .clone()
        .or(section.r_values)
        .ok_or_else(|| usage("sweep", "no R values: pass --r or set sweep.r_values"))?;
    let options = SweepOptions {
        splits: args.splits.or(section.splits).unwrap_or(3),
        workers: args.workers.or(section.workers).unwrap_or(1),
        ..SweepOptions::new(mode, r_values)
    };
    options
        .validate()
        .map_err(|e| usage("sweep", e.to_string().trim_start_matches("config error: ").to_string()))?;
    let path = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| usage("sweep", "no output path: set `output` in the config or pass --out"))?;

    let rows = sweep_blocks(&exp.task, &options, &exp.train)
        .map_err(|e| CliError::Failure(format!("sweep failed: {e}")))?;
    write_file(&path, &csv::sweep_csv(&rows))?;

    writeln!(
        out,
        "{} sweep, {} splits, teacher {}",
        mode.name(),
        options.splits,
        summarize(&exp.task.teacher)
    )?;
    writeln!(out, "{:>5} {:>4} {:>12} {:>14} {:>12}", "R", "L", "core", "metric_mean", "metric_std")?;
    for row in &rows {
        writeln!(
            out,
            "{:>5} {:>4} {:>12} {:>14.6e} {:>12.3e}",
            row.r, row.l, row.param_count, row.metric_mean, row.metric_std
        )?;
        if let Some(unspent) = row.unspent {
            writeln!(out, "{:>5} unspent budget {unspent}", "")?;
        }
    }
    if let Some(best) = rows
        .iter()
        .max_by(|a, b| a.metric_mean.total_cmp(&b.metric_mean))
    {
        writeln!(out, "best metric_mean at R={} (L={})", best.r, best.l)?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}
