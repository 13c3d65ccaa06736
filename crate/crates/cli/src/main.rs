mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qreduce_core::Error;

use crate::config::Command;

/// Quantum reduction of the weighted harmonic oscillator.
#[derive(Parser, Debug)]
#[command(name = "qreduce", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exact dim H_(1,k) against the sector model.
    Dim(Flags),
    /// Monomial basis of H_(1,k) with Bargmann norms.
    Basis(Flags),
    /// Toeplitz matrix of a symbol.
    Op(Flags),
    /// Singular values of the reduction map V_k.
    Reduce(Flags),
    /// Spectral sums Σ f(λ_i) against the fitted sector model.
    Density(Flags),
    /// Twisted sectors of the weight vector.
    Sectors(Flags),
    /// Momentum polytope and its lattice points at level k.
    Polytope(Flags),
    /// Run the verification suite.
    Verify(Flags),
}

/// Every value is kept as text here so that validation can report all
/// problems in one pass.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight vector, e.g. `1,2`.
    #[arg(long)]
    weights: Option<String>,
    /// `start:stop:step`, `start:stop`, a single value or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    k: Option<String>,
    /// Symbol in `z(i)`, `zb(i)`, `s(i)`, `kinv` notation.
    #[arg(long)]
    symbol: Option<String>,
    /// Test polynomial in `x`; repeat or separate with `;`.
    #[arg(long)]
    f: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    fit_order: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<String>,
    /// json or csv (verify also accepts text, its default).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// `cp3`, `cp1`, or weight rows such as `0,0;1,1;3,0;0,3`.
    #[arg(long)]
    action: Option<String>,
    /// Index of the vertex used as lattice origin.
    #[arg(long, allow_hyphen_values = true)]
    base: Option<String>,
    /// Comma-separated verification blocks.
    #[arg(long)]
    only: Option<String>,
    /// Perturb one Bargmann norm by this relative amount.
    #[arg(long, allow_hyphen_values = true)]
    inject_fault: Option<String>,
    /// Include eigenvalues in the output.
    #[arg(long)]
    eigenvalues: bool,
    /// Exact rational moment ratios (small dimensions only).
    #[arg(long)]
    exact: bool,
    /// λ-Toeplitz matrix instead of the plain Toeplitz matrix.
    #[arg(long)]
    lambda: bool,
}

impl Flags {
    fn into_map(self) -> (Option<PathBuf>, BTreeMap<String, String>) {
        let mut map = BTreeMap::new();
        let text = [
            ("weights", self.weights),
            ("k", self.k),
            ("symbol", self.symbol),
            ("fit_order", self.fit_order),
            ("tol", self.tol),
            ("format", self.format),
            ("output", self.output),
            ("seed", self.seed),
            ("action", self.action),
            ("base", self.base),
            ("only", self.only),
            ("inject_fault", self.inject_fault),
        ];
        for (key, value) in text {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        }
        if !self.f.is_empty() {
            map.insert("f".into(), self.f.join(";"));
        }
        for (key, set) in [("eigenvalues", self.eigenvalues), ("exact", self.exact), ("lambda", self.lambda)] {
            if set {
                map.insert(key.into(), "true".into());
            }
        }
        (self.config, map)
    }
}

/// Bad input exits with 2, numerical trouble with 3.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::QuadratureNonConvergence { .. }
        | Error::TailTruncation { .. }
        | Error::EigenNonConvergence { .. }
        | Error::RankDeficient(_)
        | Error::UnpairedSector { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Cmd::Dim(f) => (Command::Dim, f),
        Cmd::Basis(f) => (Command::Basis, f),
        Cmd::Op(f) => (Command::Op, f),
        Cmd::Reduce(f) => (Command::Reduce, f),
        Cmd::Density(f) => (Command::Density, f),
        Cmd::Sectors(f) => (Command::Sectors, f),
        Cmd::Polytope(f) => (Command::Polytope, f),
        Cmd::Verify(f) => (Command::Verify, f),
    };
    let (config_path, map) = flags.into_map();
    let cfg = match config::load(command, map, config_path.as_deref()) {
        Ok(cfg) => cfg,
        Err(errors) => {
            eprint!("{errors}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cfg) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::VerificationFailed) => ExitCode::from(1),
        Err(commands::RunError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(commands::RunError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
