//! `loja`: sweeps, fits, witness checks, failure certificates and
//! projections on the built-in examples or inline expressions.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 config error,
//! 3 numerical failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_real, parse_reals, Coords};
use crate::error::CliError;
use crate::output::Report;

#[derive(Parser)]
#[command(name = "loja", version, about = "Asymptotic critical values and global Lojasiewicz inequalities")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct Global {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the JSON report, CSV data and run metadata.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// TOML config; flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Inline expression.
    #[arg(long, global = true, value_name = "STRING", allow_hyphen_values = true)]
    expr: Option<String>,
    /// Variable names of the inline expression, comma separated (default x1..xn).
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    vars: Option<Vec<String>>,
    /// Arity of an inline expression in x1..xn.
    #[arg(long, global = true)]
    arity: Option<usize>,
    /// Registry id (see `loja examples`).
    #[arg(long, global = true, value_name = "ID")]
    example: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sphere sweep and candidate asymptotic critical values.
    Sweep(SweepArgs),
    /// Smallest ratio LHS / dist over sampled points.
    Fit(LojaArgs),
    /// Samples violating LHS >= c dist.
    Check(CheckArgs),
    /// Checks a curve as a witness of an asymptotic critical value.
    Witness(WitnessArgs),
    /// Ratio LHS / dist along a curve and its verdict.
    Certify(CertifyArgs),
    /// Nearest point of a level set.
    Project(ProjectArgs),
    /// Lists the built-in examples.
    Examples,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sweep(_) => "sweep",
            Command::Fit(_) => "fit",
            Command::Check(_) => "check",
            Command::Witness(_) => "witness",
            Command::Certify(_) => "certify",
            Command::Project(_) => "project",
            Command::Examples => "examples",
        }
    }
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Level (default: the example's first level, else 0).
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    t: Option<f64>,
    /// K, K~ or fsq.
    #[arg(long)]
    variant: Option<String>,
    /// Level window |f - t| <= WINDOW; with K also emits a Malgrange certificate.
    #[arg(long)]
    window: Option<f64>,
    /// First radius (default 10).
    #[arg(long)]
    r0: Option<f64>,
    /// Radius ratio (default 2).
    #[arg(long)]
    factor: Option<f64>,
    /// Number of radii (default 10).
    #[arg(long)]
    radii: Option<usize>,
    /// Starts per radius (default 16).
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Objective threshold at the two largest radii (default 0.05).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Clustering tolerance on f-values (default 0.05).
    #[arg(long)]
    cluster_tol: Option<f64>,
}

#[derive(Args, Serialize)]
struct LojaArgs {
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    t: Option<f64>,
    /// mixed or classical.
    #[arg(long)]
    form: Option<String>,
    /// Exponent, e.g. 1/18 or 0.5 (default 1/r_bound(n, d) for polynomials).
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    alpha: Option<f64>,
    /// Exponent on ||x|| (mixed) or second exponent (classical); default 1.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    beta: Option<f64>,
    /// annulus, box or curve.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    r_min: Option<f64>,
    #[arg(long)]
    r_max: Option<f64>,
    /// Box corner, comma separated.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_reals)]
    lo: Option<Coords>,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_reals)]
    hi: Option<Coords>,
    /// `default`, a registry curve index, or components in s separated by `;`.
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    curve_s_min: Option<f64>,
    #[arg(long)]
    s_start: Option<f64>,
    #[arg(long)]
    s_end: Option<f64>,
    /// Number of samples (default 1000).
    #[arg(long)]
    count: Option<usize>,
    /// auto, oracle or projection.
    #[arg(long)]
    backend: Option<String>,
    /// Projection starts.
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Oracle resolution.
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    base: LojaArgs,
    /// Constant under test.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    c: Option<f64>,
}

#[derive(Args, Serialize)]
struct WitnessArgs {
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    t: Option<f64>,
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    curve_s_min: Option<f64>,
    /// K or K~.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    s_start: Option<f64>,
    #[arg(long)]
    s_end: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args, Serialize)]
struct CertifyArgs {
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    t: Option<f64>,
    #[arg(long)]
    form: Option<String>,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    alpha: Option<f64>,
    /// Sweep alpha over 0.05, 0.1, .., 1 (plus 1/r_bound for polynomials).
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    alpha_grid: bool,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    beta: Option<f64>,
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    curve_s_min: Option<f64>,
    #[arg(long)]
    s_start: Option<f64>,
    #[arg(long)]
    s_end: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    resolution: Option<f64>,
    /// Skip the oracle comparison.
    #[arg(long)]
    #[serde(rename = "cross_check", serialize_with = "negate", skip_serializing_if = "std::ops::Not::not")]
    no_cross_check: bool,
    #[arg(long)]
    f_tol: Option<f64>,
}

fn negate<S: serde::Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_bool(!v)
}

#[derive(Args, Serialize)]
struct ProjectArgs {
    #[arg(long, allow_hyphen_values = true, value_parser = parse_real)]
    t: Option<f64>,
    /// Query point, comma separated.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_reals)]
    point: Option<Coords>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    f_tol: Option<f64>,
}

fn run(cli: &Cli) -> Result<(Report, config::Common), CliError> {
    let file = config::load_file(cli.global.config.as_deref())?;
    let name = cli.command.name();
    let common = config::common(&file, name, &cli.global)?;
    let report = match &cli.command {
        Command::Sweep(a) => commands::sweep(&common, config::command(&file, name, a)?),
        Command::Fit(a) => commands::fit(&common, config::command(&file, name, a)?),
        Command::Check(a) => commands::check(&common, config::command(&file, name, a)?),
        Command::Witness(a) => commands::witness(&common, config::command(&file, name, a)?),
        Command::Certify(a) => commands::certify(&common, config::command(&file, name, a)?),
        Command::Project(a) => commands::project(&common, config::command(&file, name, a)?),
        Command::Examples => commands::examples(&common, config::command(&file, name, &())?),
    }?;
    Ok((report, common))
}

fn main() -> ExitCode {
    let started = SystemTime::now();
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(report, common)| output::emit(&report, common.out.as_deref(), started));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loja: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
