//! `aranet` command line: phantom generation, training, prediction,
//! evaluation and difference maps. Exit codes: 0 ok, 1 runtime failure,
//! 2 usage error.

mod commands;
pub mod diffmap;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use aranet::phantom::DatasetSplit;
use aranet::trainer::Arm;

pub const THREADS_ENV: &str = "ARANET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "aranet", version, about = "Dose prediction on synthetic pelvic phantoms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic phantom datasets.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Train one ablation arm.
    Train(TrainArgs),
    /// Predict a dose volume for one case directory.
    Predict(PredictArgs),
    /// Dosimetric metrics of a predicted volume against the truth.
    Eval(EvalArgs),
    /// Per-patient metric table and percent-error summary over a split.
    Report(ReportArgs),
    /// Train every arm and print the percent-error table.
    Ablate(AblateArgs),
    /// Difference map of two volumes as an 8-bit PGM.
    Diffmap(DiffmapArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    /// Write `n` phantom cases and a manifest.
    Gen(GenArgs),
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad grid extent `{p}`")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[d, h, w] if d > 0 && h > 0 && w > 0 => Ok([d, h, w]),
        _ => Err(format!("grid `{s}` must be three positive extents D,H,W")),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// D,H,W voxels.
    #[arg(long, default_value = "8,64,64", value_parser = parse_grid)]
    pub grid: [usize; 3],
    /// Train,val,test proportions.
    #[arg(long, default_value = "40,6,8")]
    pub split: DatasetSplit,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `key=value` settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arm: Option<Arm>,
    /// Checkpoint written at the end of training.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss log CSV (default: `<out>.log.csv`). Appended to when resuming.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Published optimisation settings (lr 1e-5, batch 16, 100 epochs) as the base.
    #[arg(long)]
    pub paper_scale: bool,
    /// After training, write the test-split percent-error table here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Case directory with `ct.dvol`, masks and `meta.txt`.
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory of `.dmask` files, or the files themselves. The PTV is `ptv.dmask`.
    #[arg(long, required = true, num_args = 1..)]
    pub masks: Vec<PathBuf>,
    #[arg(long)]
    pub prescription: f64,
    #[arg(long, default_value_t = 50.0)]
    pub v_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: aranet::persist::Split,
    #[arg(long, default_value_t = 50.0)]
    pub v_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: u64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives one checkpoint and loss log per arm plus `ablation_ape.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiffmapArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Worker threads from `ARANET_THREADS` (default 1).
fn configure_threads() -> Result<(), CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => 1,
    };
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Phantom(PhantomCommand::Gen(a)) => commands::phantom_gen(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Diffmap(a) => commands::diffmap(a),
    }
}

/// Parse, run, print any error, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}
