//! `xqc`: full-lattice and reduced solves, locality optimization and
//! benchmark sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xqc::XqcError;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "xqc", version, about = "Enriched LME quasicontinuum for X-braced lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fully resolved lattice and write its state.
    SolveFull(Overrides),
    /// Solve one reduced model and measure it against the full solution.
    SolveQc {
        #[command(flatten)]
        o: Overrides,
        /// Also write LME multipliers, Heaviside field and enriched basis.
        #[arg(long)]
        dump: bool,
    },
    /// Choose the locality field (uniform, nonuniform or pattern).
    OptimizeGamma(Overrides),
    /// Run every configured scheme at every configured spacing.
    Bench(Overrides),
    /// Arrange sweep results into DOF, locality and error tables.
    Report {
        #[command(flatten)]
        o: Overrides,
        /// Directory holding sweep outputs; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Command-line values taking precedence over the configuration file.
#[derive(Args, Default)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    /// Repatom spacing (mm).
    #[arg(long)]
    h: Option<f64>,
    /// uniform | nonuniform | pattern
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    gamma_min: Option<f64>,
    #[arg(long)]
    gamma_max: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    /// Run the locality optimization without Heaviside enrichment.
    #[arg(long)]
    no_enrichment: bool,
    /// Prescribed edge displacement (mm).
    #[arg(long)]
    u_d: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    spacings: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Record wall-clock times in the sweep summary.
    #[arg(long)]
    wall_time: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, XqcError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.example {
            c.run.example = v.clone();
        }
        if let Some(v) = &self.scheme {
            c.run.scheme = v.clone();
        }
        if let Some(v) = self.h {
            c.run.h = v;
        }
        if let Some(v) = &self.mode {
            c.gamma.mode = v.clone();
        }
        if self.gamma_min.is_some() {
            c.gamma.min = self.gamma_min;
        }
        if self.gamma_max.is_some() {
            c.gamma.max = self.gamma_max;
        }
        if let Some(v) = self.gamma0 {
            c.gamma.initial = v;
        }
        if self.no_enrichment {
            c.gamma.enrichment = false;
        }
        if self.u_d.is_some() {
            c.run.u_d = self.u_d;
        }
        if self.spacings.is_some() {
            c.bench.spacings = self.spacings.clone();
        }
        if self.schemes.is_some() {
            c.bench.schemes = self.schemes.clone();
        }
        if let Some(v) = self.max_iter {
            c.solver.optimizer_max_iter = v;
        }
        if let Some(v) = self.workers {
            c.run.workers = v;
        }
        if let Some(v) = self.seed {
            c.run.seed = v;
        }
        if let Some(v) = &self.output {
            c.output.dir = v.clone();
        }
        if self.wall_time {
            c.output.wall_time = true;
        }
        Ok(c)
    }
}

/// Exit status: 2 for configuration problems, 1 for solver failures.
fn exit_code(e: &XqcError) -> u8 {
    match e {
        XqcError::InvalidConfig(_) | XqcError::Unknown { .. } | XqcError::InvalidGeometry(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &XqcError) -> &'static str {
    match exit_code(e) {
        2 => "invalid-config",
        _ if e.is_nonconvergence() => "nonconvergence",
        _ => "failure",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SolveFull(o) => o.resolve().and_then(|c| commands::solve_full(&c)),
        Command::SolveQc { o, dump } => o.resolve().and_then(|c| commands::solve_qc(&c, *dump)),
        Command::OptimizeGamma(o) => o.resolve().and_then(|c| commands::optimize_gamma(&c)),
        Command::Bench(o) => o.resolve().and_then(|c| commands::bench(&c)),
        Command::Report { o, input } => o.resolve().and_then(|c| commands::report(&c, input.as_deref())),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: kind={} message=\"{}\"", error_kind(&e), e.to_string().replace('"', "'"));
            ExitCode::from(exit_code(&e))
        }
    }
}
