//! `ctseg`: command-line front end.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 internal invariant
//! violation. Every flag can also be set through a `CTSEG_*` environment
//! variable.

mod commands;
mod selftest;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctseg_core::Error;

#[derive(Debug, Parser)]
#[command(name = "ctseg", version, about = "Whole-body CT segmentation analysis toolkit")]
struct Cli {
    /// Print the summary as JSON instead of text.
    #[arg(long, global = true, env = "CTSEG_JSON")]
    json: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CTSEG_THREADS")]
    threads: Option<usize>,

    /// Seed for every random draw (default 0).
    #[arg(long, global = true, env = "CTSEG_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample a volume onto an isotropic grid.
    Resample(ResampleArgs),
    /// Split a one-sided rib mask into numbered ribs.
    SplitRibs(SplitRibsArgs),
    /// Score predicted label maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Paired comparison of two evaluation reports.
    Compare(CompareArgs),
    /// Volume and mean HU of every structure in one scan.
    Morph(MorphArgs),
    /// Cohort morphometry and the aging analysis.
    Cohort(CohortArgs),
    /// Generate synthetic phantoms or a synthetic cohort.
    Phantom(PhantomArgs),
    /// Structure registry.
    Taxonomy {
        #[command(subcommand)]
        action: TaxonomyAction,
    },
    /// Statistics utilities.
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    /// Integer uint8/uint16 files are labels, everything else scalar.
    Auto,
    Scalar,
    Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubsetArg {
    All,
    Btcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long = "in", env = "CTSEG_IN")]
    pub input: PathBuf,
    #[arg(long, env = "CTSEG_OUT")]
    pub out: PathBuf,
    /// Target isotropic spacing in mm.
    #[arg(long, default_value_t = 1.5, env = "CTSEG_SPACING")]
    pub spacing: f64,
    /// Default: trilinear for scalars, nearest for labels.
    #[arg(long, value_enum, env = "CTSEG_MODE")]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum, default_value_t = KindArg::Auto, env = "CTSEG_KIND")]
    pub kind: KindArg,
}

#[derive(Debug, Args)]
pub struct SplitRibsArgs {
    /// Rib mask; any non-zero voxel is rib.
    #[arg(long = "in", env = "CTSEG_IN")]
    pub input: PathBuf,
    #[arg(long, value_enum, env = "CTSEG_SIDE")]
    pub side: SideArg,
    #[arg(long, env = "CTSEG_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "CTSEG_GT_DIR")]
    pub gt_dir: PathBuf,
    #[arg(long, env = "CTSEG_PRED_DIR")]
    pub pred_dir: PathBuf,
    /// NSD tolerance in mm.
    #[arg(long, default_value_t = 3.0, env = "CTSEG_TAU")]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = SubsetArg::All, env = "CTSEG_SUBSET")]
    pub subset: SubsetArg,
    #[arg(long, default_value_t = 10_000, env = "CTSEG_ITERATIONS")]
    pub iterations: usize,
    #[arg(long, env = "CTSEG_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation report of run A.
    #[arg(long, env = "CTSEG_A")]
    pub a: PathBuf,
    /// Evaluation report of run B.
    #[arg(long, env = "CTSEG_B")]
    pub b: PathBuf,
    #[arg(long, env = "CTSEG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MorphArgs {
    #[arg(long, env = "CTSEG_CT")]
    pub ct: PathBuf,
    #[arg(long, env = "CTSEG_SEG")]
    pub seg: PathBuf,
    #[arg(long, env = "CTSEG_OUT")]
    pub out: PathBuf,
    /// Default: CT file name without extension.
    #[arg(long, env = "CTSEG_PATIENT_ID")]
    pub patient_id: Option<String>,
    #[arg(long, env = "CTSEG_AGE")]
    pub age: Option<f64>,
    #[arg(long, default_value = "unknown", env = "CTSEG_SEX")]
    pub sex: String,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    /// CSV with columns patient_id, ct_path, seg_path, age, sex.
    #[arg(long, env = "CTSEG_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, env = "CTSEG_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "CTSEG_REPORT")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom or cohort spec (JSON, see docs/phantom.md).
    #[arg(long, env = "CTSEG_SPEC")]
    pub spec: PathBuf,
    #[arg(long, env = "CTSEG_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TaxonomyAction {
    /// Print or write the registry.
    Dump {
        #[arg(long, value_enum, default_value_t = DumpFormat::Csv, env = "CTSEG_FORMAT")]
        format: DumpFormat,
        #[arg(long, env = "CTSEG_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum StatsAction {
    /// Check the statistics routines against built-in oracles.
    SelfTest,
}

/// What a command reports back: text lines and the same content as JSON.
pub struct Outcome {
    pub lines: Vec<String>,
    pub summary: serde_json::Value,
}

pub struct Globals {
    pub seed: Option<u64>,
}

impl Globals {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn dispatch(command: Command, globals: &Globals) -> ctseg_core::Result<Outcome> {
    match command {
        Command::Resample(a) => commands::resample(&a),
        Command::SplitRibs(a) => commands::split_ribs(&a),
        Command::Evaluate(a) => commands::evaluate(&a, globals),
        Command::Compare(a) => commands::compare(&a),
        Command::Morph(a) => commands::morph(&a),
        Command::Cohort(a) => commands::cohort(&a),
        Command::Phantom(a) => commands::phantom(&a, globals),
        Command::Taxonomy {
            action: TaxonomyAction::Dump { format, out },
        } => commands::taxonomy_dump(format, out.as_deref()),
        Command::Stats {
            action: StatsAction::SelfTest,
        } => selftest::run(globals.seed()),
    }
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> ctseg_core::Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> ctseg_core::Result<T> {
    Ok(f())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let json = cli.json;
    let globals = Globals { seed: cli.seed };
    let threads = cli.threads;
    let command = cli.command;
    let result = panic::catch_unwind(AssertUnwindSafe(|| {
        with_threads(threads, || dispatch(command, &globals)).and_then(|r| r)
    }));
    match result {
        Ok(Ok(outcome)) => {
            if json {
                match ctseg_core::report::to_json_bytes(&outcome.summary) {
                    Ok(bytes) => print!("{}", String::from_utf8_lossy(&bytes)),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                }
            } else {
                for line in outcome.lines {
                    println!("{line}");
                }
            }
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            ExitCode::from(2)
        }
    }
}
