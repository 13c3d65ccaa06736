//! Run configuration: command-line flags over a flat `key = value` file over
//! built-in defaults. Every key is validated before any computation and all
//! problems are reported together.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use qreduce_core::polytope::TorusAction;
use qreduce_core::verify::Block;
use qreduce_core::{PolySymbol, RealPoly, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Dim,
    Basis,
    Op,
    Reduce,
    Density,
    Sectors,
    Polytope,
    Verify,
}

impl Command {
    fn needs(self) -> &'static [&'static str] {
        match self {
            Command::Dim | Command::Basis | Command::Reduce => &["weights", "k"],
            Command::Op => &["weights", "k", "symbol"],
            Command::Density => &["weights", "k", "symbol", "f"],
            Command::Sectors => &["weights"],
            Command::Polytope => &["k"],
            Command::Verify => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Text,
}

/// Keys accepted on the command line and in config files.
pub const KEYS: &[&str] = &[
    "weights",
    "k",
    "symbol",
    "f",
    "fit_order",
    "tol",
    "format",
    "output",
    "seed",
    "action",
    "base",
    "only",
    "inject_fault",
    "eigenvalues",
    "exact",
    "lambda",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub weights: Option<WeightVector>,
    pub ks: Vec<u64>,
    pub symbol: Option<PolySymbol>,
    pub f: Vec<RealPoly>,
    pub fit_order: Option<usize>,
    /// Relative asymmetry accepted before diagonalising.
    pub tol: f64,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub action: TorusAction,
    pub base: usize,
    pub only: Option<Vec<Block>>,
    pub inject_fault: Option<f64>,
    pub eigenvalues: bool,
    pub exact: bool,
    pub lambda: bool,
}

/// All validation failures of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, Vec<String>> {
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("config line {}: expected key = value, got {line:?}", no + 1));
            continue;
        };
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            errors.push(format!("config line {}: unknown key {key:?}", no + 1));
            continue;
        }
        out.insert(key, value.trim().to_string());
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

/// `start:stop:step`, `start:stop`, a single value, or a comma list.
pub fn parse_k_range(text: &str) -> Result<Vec<u64>, String> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("k: {:?} is not a non-negative integer", s.trim()));
    let ks: Vec<u64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let (start, stop, step) = match parts.as_slice() {
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, c] => (num(a)?, num(b)?, num(c)?),
            _ => return Err(format!("k: {text:?} is not start:stop[:step]")),
        };
        if step == 0 {
            return Err("k: step must be positive".into());
        }
        (start..=stop).step_by(step as usize).collect()
    } else {
        text.split(',').map(num).collect::<Result<_, _>>()?
    };
    if ks.is_empty() {
        return Err(format!("k: range {text:?} is empty"));
    }
    Ok(ks)
}

pub fn load(command: Command, flags: BTreeMap<String, String>, config_path: Option<&Path>) -> Result<RunConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = config_path {
        match std::fs::read_to_string(path) {
            Ok(text) => match parse_config_file(&text) {
                Ok(map) => values.extend(map),
                Err(es) => errors.extend(es),
            },
            Err(e) => errors.push(format!("config file {}: {e}", path.display())),
        }
    }
    values.extend(flags);

    for key in command.needs() {
        if !values.contains_key(*key) {
            errors.push(format!("{key}: required by this command"));
        }
    }

    let get = |key: &str| values.get(key).map(String::as_str);
    let weights = get("weights").and_then(|w| WeightVector::parse(w).map_err(|e| errors.push(format!("weights: {e}"))).ok());
    let n = weights.as_ref().map(WeightVector::n);

    let ks = match get("k") {
        Some(text) => parse_k_range(text).unwrap_or_else(|e| {
            errors.push(e);
            Vec::new()
        }),
        None => Vec::new(),
    };
    if ks.contains(&0) && matches!(command, Command::Polytope | Command::Density | Command::Reduce) {
        errors.push("k: this command needs k ≥ 1".into());
    }

    let symbol = match (get("symbol"), n) {
        (Some(text), Some(n)) => PolySymbol::parse(text, n).map_err(|e| errors.push(format!("symbol: {e}"))).ok(),
        _ => None,
    };

    let f: Vec<RealPoly> = get("f")
        .map(|text| {
            text.split(';')
                .filter(|s| !s.trim().is_empty())
                .filter_map(|s| RealPoly::parse(s.trim()).map_err(|e| errors.push(format!("f: {e}"))).ok())
                .collect()
        })
        .unwrap_or_default();
    if get("f").is_some() && f.is_empty() && errors.iter().all(|e| !e.starts_with("f:")) {
        errors.push("f: no test function given".into());
    }

    let mut number = |key: &str| -> Option<f64> {
        get(key).and_then(|s| s.parse::<f64>().map_err(|_| errors.push(format!("{key}: {s:?} is not a number"))).ok())
    };
    let tol = number("tol").unwrap_or(1e-12);
    let inject_fault = number("inject_fault");
    if !(tol > 0.0 && tol.is_finite()) {
        errors.push(format!("tol: must be positive, got {tol}"));
    }
    if let Some(rel) = inject_fault {
        if !(rel > 0.0 && rel.is_finite()) {
            errors.push(format!("inject_fault: must be positive, got {rel}"));
        }
    }

    let mut integer = |key: &str| -> Option<u64> {
        get(key).and_then(|s| s.parse::<u64>().map_err(|_| errors.push(format!("{key}: {s:?} is not a non-negative integer"))).ok())
    };
    let fit_order = integer("fit_order").map(|x| x as usize);
    let seed = integer("seed").unwrap_or(qreduce_core::VerifyOptions::default().seed);
    let base = integer("base").unwrap_or(0) as usize;

    let format = match get("format") {
        None => {
            if command == Command::Verify {
                Format::Text
            } else {
                Format::Json
            }
        }
        Some("json") => Format::Json,
        Some("csv") => Format::Csv,
        Some("text") if command == Command::Verify => Format::Text,
        Some(other) => {
            errors.push(format!("format: expected json or csv, got {other:?}"));
            Format::Json
        }
    };

    let action = match get("action") {
        None | Some("cp3") => TorusAction::cp3_example(),
        Some("cp1") => TorusAction::cp1(),
        Some(text) => TorusAction::parse(text).unwrap_or_else(|e| {
            errors.push(format!("action: {e}"));
            TorusAction::cp1()
        }),
    };

    let only = get("only").map(|text| {
        text.split(',')
            .filter_map(|s| s.parse::<Block>().map_err(|e| errors.push(format!("only: {e}"))).ok())
            .collect::<Vec<_>>()
    });

    let mut flag = |key: &str| -> bool {
        match get(key) {
            None | Some("false") => false,
            Some("true") | Some("") => true,
            Some(other) => {
                errors.push(format!("{key}: expected true or false, got {other:?}"));
                false
            }
        }
    };
    let eigenvalues = flag("eigenvalues");
    let exact = flag("exact");
    let lambda = flag("lambda");

    if exact && lambda {
        errors.push("exact, lambda: choose one matrix kind".into());
    }

    if command == Command::Density {
        if let Some(s) = &symbol {
            if !s.is_hermitian() {
                errors.push("symbol: the density command needs a Hermitian symbol".into());
            }
        }
    }

    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    Ok(RunConfig {
        command,
        weights,
        ks,
        symbol,
        f,
        fit_order,
        tol,
        format,
        output: get("output").map(PathBuf::from),
        seed,
        action,
        base,
        only,
        inject_fault,
        eigenvalues,
        exact,
        lambda,
    })
}
