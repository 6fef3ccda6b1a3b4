//! `octool`: simulate, certify and differentiate optimal control problems
//! described in JSON or TOML files.
//!
//! Exit codes: 0 success (and a fully passing certificate), 1 configuration
//! or usage error, 2 certificate with a failed condition, 3 degenerate or
//! unqualified (degenerate multipliers, an unchecked condition, or an LI
//! failure in `envelope`), 4 integration failure, 5 any other numerical
//! failure (no convergence, quadrature, unsupported problem).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use octool_core::OcError;

#[derive(Debug, Parser)]
#[command(name = "octool", version, about = "Maximum-principle certificates and envelope sensitivities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the state for a control and report the criterion.
    Simulate(Common),
    /// Check the necessary conditions along a candidate process.
    Verify(Common),
    /// Directional derivative of the optimal value by the envelope formula.
    Envelope(EnvelopeArgs),
    /// Remainder of the first-order needle expansion over amplitude levels.
    NeedleStudy(NeedleArgs),
    /// Solve the boundary value problem of the maximum principle by shooting.
    Shoot(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem file (`.toml` for TOML, otherwise JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Parameter vector, comma separated; overrides `pi` in the file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub pi: Option<Vec<f64>>,
    /// Certificate tolerance (verify) or shooting tolerance (shoot).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0x5EED)]
    pub seed: u64,
    /// Directory for report files; without it the report goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Leave the timestamp out of reports.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EnvelopeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Direction in parameter space; overrides `dpi` in the file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub dpi: Option<Vec<f64>>,
    #[arg(long)]
    pub scan_multipliers: bool,
    #[arg(long)]
    pub scan_adjoint: bool,
    #[arg(long)]
    pub scan_gradient: bool,
    /// Spike file (`spikes`, optional `amplitudes`) for an attached needle study.
    #[arg(long)]
    pub needle: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NeedleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Spike file; defaults to `spikes` and `amplitudes` in the problem file.
    #[arg(long)]
    pub needle: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<OcError> for Failure {
    fn from(e: OcError) -> Self {
        let code = match &e {
            OcError::Config(_) | OcError::Syntax { .. } | OcError::UnknownIdentifier { .. } | OcError::Io(_) => 1,
            OcError::Dimension { .. } => 1,
            OcError::LiViolated { .. } => 3,
            OcError::Integration { .. } => 4,
            _ => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("OCTOOL_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or(Failure {
        code: 1,
        message: format!("OCTOOL_THREADS must be a positive integer, got `{v}`"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure {
        code: 1,
        message: format!("cannot configure thread pool: {e}"),
    })
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Verify(c) => commands::verify(&c),
        Command::Envelope(a) => commands::envelope(&a),
        Command::NeedleStudy(a) => commands::needle_study(&a),
        Command::Shoot(c) => commands::shoot(&c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("octool: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
