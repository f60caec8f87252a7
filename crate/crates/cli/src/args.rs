use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fdi::synth::EquationName;

const EQUATIONS: [&str; 7] = ["burgers1d", "kdv", "ks", "wave2d", "burgers2d", "diffusion3d", "burgers3d"];

fn equation_parser() -> impl clap::builder::TypedValueParser<Value = EquationName> {
    PossibleValuesParser::new(EQUATIONS).map(|s| s.parse::<EquationName>().expect("listed name"))
}

#[derive(Parser, Debug)]
#[command(name = "fdi", version, about = "Identify partial differential equations from gridded data")]
pub struct Cli {
    /// Log verbosity
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a catalog equation and write a field bundle plus JSON sidecar
    Synth(SynthArgs),
    /// Add Gaussian noise with standard deviation alpha * std(u)
    Noise(NoiseArgs),
    /// Identify the equation behind a field bundle
    Identify(IdentifyArgs),
    /// Structure-correct counts and errors over a grid of noise levels
    Sweep(SweepArgs),
    /// Coefficient errors of several pipelines with the true structure fixed
    Compare(CompareArgs),
    /// Support-rate selection against sequential thresholding on shared systems
    CsrVsStlm(RobustnessArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Catalog equation
    #[arg(long, value_parser = equation_parser())]
    pub equation: Option<EquationName>,

    /// Output bundle; the sidecar goes next to it with extension .json
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Points per axis, time last [default: per equation]
    #[arg(long, value_delimiter = ',', value_name = "N,..")]
    pub points: Option<Vec<usize>>,

    /// Periodic lengths followed by the output duration [default: per equation]
    #[arg(long, value_delimiter = ',', value_name = "L,..")]
    pub extents: Option<Vec<f64>>,

    /// Solver steps per output interval [default: per equation]
    #[arg(long)]
    pub substeps: Option<usize>,

    /// Solver points per output point on each spatial axis [default: per equation]
    #[arg(long)]
    pub oversample: Option<usize>,

    /// Integration time discarded before the first sample [default: per equation]
    #[arg(long)]
    pub t_start: Option<f64>,

    /// JSON config; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    /// Input bundle
    #[arg(long = "in")]
    pub input: Option<PathBuf>,

    /// Output bundle
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Noise level relative to the field's standard deviation [default: 0]
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Noise seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// JSON config; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiffKind {
    Fd,
    Poly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Clean,
    Noisy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DomainKind {
    Freq,
    Timespace,
    Lowpass,
}

/// Differentiation and system assembly.
#[derive(Args, Debug, Default)]
pub struct SystemArgs {
    /// Candidate library: 1d, 2d, 3d, compact or a JSON file [default: standard library of the data's dimension]
    #[arg(long, value_name = "NAME|FILE")]
    pub library: Option<String>,

    /// Time derivative order on the left-hand side [default: from the sidecar, else 1]
    #[arg(long)]
    pub lhs_order: Option<u32>,

    /// Whether the data are treated as noisy when picking differentiation defaults [default: from the sidecar, else noisy]
    #[arg(long, value_enum)]
    pub data: Option<DataKind>,

    /// Differentiation method [default: 1-D noisy poly, otherwise fd]
    #[arg(long, value_enum)]
    pub diff: Option<DiffKind>,

    /// Finite-difference order of accuracy [default: 4 for clean 1-D, otherwise 2]
    #[arg(long)]
    pub fd_order: Option<usize>,

    /// Local polynomial degree [default: 6]
    #[arg(long)]
    pub poly_degree: Option<usize>,

    /// Local polynomial window, odd [default: 21]
    #[arg(long)]
    pub poly_window: Option<usize>,

    /// Grid steps between stencil points [default: 2 in 3-D, otherwise 1]
    #[arg(long)]
    pub stride: Option<usize>,

    /// System domain [default: freq]
    #[arg(long, value_enum)]
    pub domain: Option<DomainKind>,

    /// Retained modes per axis, time last [default: 1-D 12,6; 2-D 8 per axis; 3-D 5 per axis]
    #[arg(long, value_delimiter = ',', value_name = "K,..")]
    pub cutoff: Option<Vec<usize>>,

    /// Filter block of the low-pass domain [default: 24, 16 or 10 per axis by dimension]
    #[arg(long, value_delimiter = ',', value_name = "K,..")]
    pub lowpass_cutoff: Option<Vec<usize>>,

    /// Sampling stride of time-space systems [default: smallest giving at most 200000 rows]
    #[arg(long)]
    pub timespace_stride: Option<usize>,

    /// Keep raw column scales (diagnostics only)
    #[arg(long)]
    pub no_normalize: bool,

    /// Accept systems with fewer than three rows per column
    #[arg(long)]
    pub allow_few_rows: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodKind {
    Csr,
    Stlm,
    StRidge,
    Known,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Gap,
    Fixed,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleKind {
    Physical,
    Normalized,
}

/// Term selection.
#[derive(Args, Debug, Default)]
pub struct SelectorArgs {
    /// Selector [default: csr]
    #[arg(long, value_enum)]
    pub method: Option<MethodKind>,

    /// Support-rate cut for csr [default: gap]
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,

    /// Terms kept by csr --policy fixed or by stlm
    #[arg(long)]
    pub k: Option<usize>,

    /// Minimum support rate for csr --policy threshold
    #[arg(long)]
    pub min_q: Option<f64>,

    /// Coefficient threshold for stlm
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Coefficient scale compared by stlm [default: physical]
    #[arg(long, value_enum)]
    pub scale: Option<ScaleKind>,

    /// Ridge penalty of st-ridge [default: 1e-5]
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Coefficient threshold of st-ridge [default: 0.1]
    #[arg(long)]
    pub tol: Option<f64>,

    /// Iteration limit of st-ridge [default: 25]
    #[arg(long)]
    pub max_iter: Option<usize>,

    /// Term names fitted by --method known, e.g. u*u_x,u_xx
    #[arg(long, value_delimiter = ',')]
    pub terms: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    /// Input bundle
    #[arg(long = "in")]
    pub input: Option<PathBuf>,

    /// Result JSON with the effective config
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write the frequency system as CSV (mode tuple, column, re, im)
    #[arg(long)]
    pub dump_system: Option<PathBuf>,

    /// JSON config; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub system: SystemArgs,

    #[command(flatten)]
    pub selector: SelectorArgs,
}

/// Clean data, trials and seeding shared by the benchmark commands.
#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Clean bundle whose sidecar names the true equation
    #[arg(long = "in")]
    pub input: Option<PathBuf>,

    /// Catalog equation; solved on its default grid when --in is absent
    #[arg(long, value_parser = equation_parser())]
    pub equation: Option<EquationName>,

    /// Ascending noise levels [default: depends on the command]
    #[arg(long, value_delimiter = ',', value_name = "A,..")]
    pub alphas: Option<Vec<f64>>,

    /// Trials per noise level [default: 10]
    #[arg(long)]
    pub trials: Option<usize>,

    /// Base seed of all trial noise [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads; 0 uses every core
    #[arg(long, env = "FDI_JOBS", default_value_t = 0)]
    pub jobs: usize,

    /// Summary JSON with the effective config
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Per-row CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,

    /// JSON config; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub bench: BenchArgs,

    /// JSON-lines file of per-trial records; a rerun resumes from it
    #[arg(long)]
    pub records: Option<PathBuf>,

    #[command(flatten)]
    pub system: SystemArgs,

    #[command(flatten)]
    pub selector: SelectorArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub bench: BenchArgs,

    /// Filter block of one low-pass pipeline; repeat for several [default: the low-pass default]
    #[arg(long = "lowpass", value_name = "K,..")]
    pub lowpass: Vec<String>,

    #[command(flatten)]
    pub system: SystemArgs,
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub bench: BenchArgs,

    #[command(flatten)]
    pub system: SystemArgs,
}
