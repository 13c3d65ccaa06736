use std::fmt;
use std::io::{self, Write};

use qreduce_core::fock::{count_dim, enumerate_basis};
use qreduce_core::polytope::{bs_lattice_points, fixed_point_values};
use qreduce_core::sectors::{fit_subleading, model_eval, AsymptoticModel};
use qreduce_core::spectra::{density_compare, hermitian_eigenvalues, SpectrumCache};
use qreduce_core::verify::run_suite;
use qreduce_core::wick::{lambda_toeplitz, toeplitz_matrix, toeplitz_matrix_exact};
use qreduce_core::{Error, Fault, ReductionMaps, VerifyOptions, WeightVector};
use serde_json::{json, Map, Value};

use crate::config::{Command, Format, RunConfig};
use crate::output::{self, num, Table};

pub enum Status {
    Ok,
    VerificationFailed,
}

#[derive(Debug)]
pub enum RunError {
    Core(Error),
    Io(io::Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Core(e) => e.fmt(f),
            RunError::Io(e) => e.fmt(f),
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Status, RunError> {
    if cfg.command == Command::Verify {
        return verify(cfg);
    }
    let table = match cfg.command {
        Command::Dim => dim(cfg)?,
        Command::Basis => basis(cfg)?,
        Command::Op => op(cfg)?,
        Command::Reduce => reduce(cfg)?,
        Command::Density => density(cfg)?,
        Command::Sectors => sectors(cfg)?,
        Command::Polytope => polytope(cfg)?,
        Command::Verify => unreachable!(),
    };
    emit(cfg, &table)?;
    Ok(Status::Ok)
}

fn emit(cfg: &RunConfig, table: &Table) -> io::Result<()> {
    let mut out = output::sink(cfg.output.as_deref())?;
    match cfg.format {
        Format::Csv => output::write_csv(&mut out, table),
        _ => output::write_json(&mut out, table),
    }
}

fn weights(cfg: &RunConfig) -> &WeightVector {
    cfg.weights.as_ref().expect("validated")
}

fn keyed(name: &str, value: f64) -> Value {
    let mut m = Map::new();
    m.insert(name.into(), json!(value));
    Value::Object(m)
}

fn alpha_header(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|i| format!("alpha_{i}"))
}

/// Columns: `k, dim, model, residual`. The model is fitted at order
/// `n − 1` on the first half of the k-list unless `--fit-order` says
/// otherwise; with too few k values the default falls back to leading order.
fn dim(cfg: &RunConfig) -> Result<Table, RunError> {
    let w = weights(cfg);
    let exact: Vec<(u64, f64)> = cfg.ks.iter().map(|&k| (k, count_dim(w, k) as f64)).collect();
    let base = AsymptoticModel::dimension_model(w)?;
    let split = exact.len().div_ceil(2);
    let (fit, test) = exact.split_at(split);
    let (model, order) = match cfg.fit_order {
        Some(order) => (fit_subleading(fit, test, &base, order)?.0, order),
        None => {
            let order = base.top_dim();
            match fit_subleading(fit, test, &base, order) {
                Ok((m, _)) => (m, order),
                Err(Error::RankDeficient(_)) => (fit_subleading(fit, test, &base, 0)?.0, 0),
                Err(e) => return Err(e.into()),
            }
        }
    };
    let mut table = Table::with_header(["k", "dim", "model", "residual"]);
    for &k in &cfg.ks {
        let n = count_dim(w, k);
        let dim = u64::try_from(n).map_err(|_| Error::InvalidArgument(format!("dim H_(1,{k}) = {n} overflows u64")))?;
        let m = model_eval(&model, k)?;
        let r = n as f64 - m;
        table.push_record(json!({
            "k": k,
            "dim": dim,
            "fit_order": order,
            "sums": keyed("1", n as f64),
            "model": keyed("1", m),
            "residual": keyed("1", r),
        }));
        table.push_row(vec![k.to_string(), dim.to_string(), num(m), num(r)]);
    }
    Ok(table)
}

/// Columns: `k, alpha_1..alpha_n, norm_sq`.
fn basis(cfg: &RunConfig) -> Result<Table, RunError> {
    let w = weights(cfg);
    let mut table = Table::with_header(["k".to_string()].into_iter().chain(alpha_header(w.n())).chain(["norm_sq".to_string()]));
    for &k in &cfg.ks {
        let b = enumerate_basis(w, k);
        let norms = b.norms_sq();
        let indices: Vec<&[u32]> = b.indices().iter().map(|a| a.as_slice()).collect();
        table.push_record(json!({"k": k, "dim": b.dim(), "indices": indices, "norms_sq": norms}));
        for (alpha, norm) in indices.iter().zip(&norms) {
            let mut row = vec![k.to_string()];
            row.extend(alpha.iter().map(u32::to_string));
            row.push(num(*norm));
            table.push_row(row);
        }
    }
    Ok(table)
}

/// Columns: `k, row, col, re, im` over the nonzero entries, or
/// `k, index, eigenvalue` with `--eigenvalues`.
fn op(cfg: &RunConfig) -> Result<Table, RunError> {
    let w = weights(cfg);
    let symbol = cfg.symbol.as_ref().expect("validated");
    let mut table = if cfg.eigenvalues {
        Table::with_header(["k", "index", "eigenvalue"])
    } else {
        Table::with_header(["k", "row", "col", "re", "im"])
    };
    for &k in &cfg.ks {
        let b = enumerate_basis(w, k);
        let t = if cfg.lambda {
            lambda_toeplitz(symbol, &b)?
        } else if cfg.exact {
            toeplitz_matrix_exact(symbol, &b)?
        } else {
            toeplitz_matrix(symbol, &b)?
        };
        let mut entries = Vec::new();
        for r in 0..t.dim() {
            for c in 0..t.dim() {
                let z = t.get(r, c);
                if z.re != 0.0 || z.im != 0.0 {
                    entries.push(json!([r, c, z.re, z.im]));
                    if !cfg.eigenvalues {
                        table.push_row(vec![k.to_string(), r.to_string(), c.to_string(), num(z.re), num(z.im)]);
                    }
                }
            }
        }
        let mut record = json!({"k": k, "dim": t.dim(), "symbol": symbol.render(), "entries": entries});
        if cfg.eigenvalues {
            if !t.is_hermitian(cfg.tol) {
                return Err(Error::NonHermitian { asymmetry: t.asymmetry() }.into());
            }
            let eig = hermitian_eigenvalues(&t)?;
            for (i, x) in eig.iter().enumerate() {
                table.push_row(vec![k.to_string(), i.to_string(), num(*x)]);
            }
            record["eigenvalues"] = json!(eig);
        }
        table.push_record(record);
    }
    Ok(table)
}

/// Columns: `k, alpha_1..alpha_n, d, vstar_v`.
fn reduce(cfg: &RunConfig) -> Result<Table, RunError> {
    let w = weights(cfg);
    let mut table = Table::with_header(
        ["k".to_string()].into_iter().chain(alpha_header(w.n())).chain(["d".to_string(), "vstar_v".to_string()]),
    );
    for &k in &cfg.ks {
        let b = enumerate_basis(w, k);
        let maps = ReductionMaps::build(&b)?;
        let vv: Vec<f64> = maps.d.iter().map(|x| x * x).collect();
        table.push_record(json!({
            "k": k,
            "dim": b.dim(),
            "d": maps.d,
            "vstar_v": vv,
            "spread": maps.spread(),
            "calibration": maps.calibration,
        }));
        for (alpha, (d, v)) in b.indices().iter().zip(maps.d.iter().zip(&vv)) {
            let mut row = vec![k.to_string()];
            row.extend(alpha.as_slice().iter().map(u32::to_string));
            row.push(num(*d));
            row.push(num(*v));
            table.push_row(row);
        }
    }
    Ok(table)
}

/// Columns: `k, dim, f, sum, model, residual, out_of_sample`, one row per
/// test function and level.
fn density(cfg: &RunConfig) -> Result<Table, RunError> {
    let w = weights(cfg);
    let symbol = cfg.symbol.as_ref().expect("validated");
    let order = match cfg.fit_order {
        Some(o) => o,
        None => AsymptoticModel::dimension_model(w)?.top_dim(),
    };
    let cmp = density_compare(w, symbol, &cfg.f, &cfg.ks, order, &SpectrumCache::new())?;
    for fit in &cmp.fits {
        eprintln!(
            "fit f = {}: order {}, {} unknowns, max in-sample residual {:e}, max out-of-sample residual {:e}",
            fit.f.render(),
            fit.report.order,
            fit.report.unknowns,
            fit.report.max_in_sample,
            fit.report.max_out_of_sample
        );
    }
    let to_map = |pairs: &[(String, f64)]| -> Value {
        Value::Object(pairs.iter().map(|(k, v)| (k.clone(), json!(v))).collect())
    };
    let mut table = Table::with_header(["k", "dim", "f", "sum", "model", "residual", "out_of_sample"]);
    for r in &cmp.reports {
        let mut record = json!({
            "k": r.k,
            "dim": r.dim,
            "sums": to_map(&r.sums),
            "model": to_map(&r.model),
            "residual": to_map(&r.residuals),
            "out_of_sample": r.out_of_sample,
        });
        if cfg.eigenvalues {
            record["eigenvalues"] = json!(r.eigenvalues);
        }
        table.push_record(record);
        for ((name, s), ((_, m), (_, res))) in r.sums.iter().zip(r.model.iter().zip(&r.residuals)) {
            table.push_row(vec![
                r.k.to_string(),
                r.dim.to_string(),
                name.clone(),
                num(*s),
                num(*m),
                num(*res),
                r.out_of_sample.to_string(),
            ]);
        }
    }
    Ok(table)
}

/// Columns: `zeta, j, q, support, m, n, i0_re, i0_im`; `support` lists
/// 1-based coordinates separated by spaces and `i0` is the leading
/// dimension coefficient.
fn sectors(cfg: &RunConfig) -> Result<Table, RunError> {
    let model = AsymptoticModel::dimension_model(weights(cfg))?;
    let mut table = Table::with_header(["zeta", "j", "q", "support", "m", "n", "i0_re", "i0_im"]);
    for (idx, s) in model.sectors.iter().enumerate() {
        let i0 = model.coefficient(idx, 0);
        let support: Vec<usize> = s.support.iter().map(|i| i + 1).collect();
        table.push_record(json!({
            "zeta": s.zeta.to_string(),
            "j": s.zeta.j,
            "q": s.zeta.q,
            "support": support,
            "m": s.m,
            "n": s.dim_n,
            "i0": [i0.re, i0.im],
        }));
        table.push_row(vec![
            s.zeta.to_string(),
            s.zeta.j.to_string(),
            s.zeta.q.to_string(),
            support.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            s.m.to_string(),
            s.dim_n.to_string(),
            num(i0.re),
            num(i0.im),
        ]);
    }
    Ok(table)
}

/// Columns: `kind, k, lambda_1/2pi, …`; `kind` is `vertex` (k empty) or
/// `point`. Coordinates are in units of 2π.
fn polytope(cfg: &RunConfig) -> Result<Table, RunError> {
    let poly = fixed_point_values(&cfg.action)?;
    let d = poly.d;
    let mut table = Table::with_header(
        ["kind".to_string(), "k".to_string()].into_iter().chain((1..=d).map(|i| format!("lambda_{i}/2pi"))),
    );
    for v in &poly.vertices {
        let mut row = vec!["vertex".to_string(), String::new()];
        row.extend(v.iter().map(i64::to_string));
        table.push_row(row);
    }
    for &k in &cfg.ks {
        let points = bs_lattice_points(&poly, k, cfg.base)?;
        let reduced: Vec<Vec<f64>> = points.iter().map(|p| p.reduced()).collect();
        let numer: Vec<&Vec<i64>> = points.iter().map(|p| &p.numer).collect();
        table.push_record(json!({
            "k": k,
            "vertices": poly.vertices,
            "extreme": poly.extreme,
            "count": points.len(),
            "numerators": numer,
            "points": reduced,
        }));
        for p in &reduced {
            let mut row = vec!["point".to_string(), k.to_string()];
            row.extend(p.iter().map(|x| num(*x)));
            table.push_row(row);
        }
    }
    Ok(table)
}

/// Text by default; JSON records carry `criterion, block, passed, details`.
/// CSV columns: `criterion, block, passed`.
fn verify(cfg: &RunConfig) -> Result<Status, RunError> {
    let options = VerifyOptions {
        only: cfg.only.clone(),
        fault: cfg.inject_fault.map(|rel| Fault::PerturbNorm { rel }),
        seed: cfg.seed,
    };
    let results = run_suite(&options);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    let mut out = output::sink(cfg.output.as_deref())?;
    match cfg.format {
        Format::Text => {
            for r in &results {
                writeln!(out, "{r}")?;
            }
            writeln!(out, "{}/{} criteria passed", results.len() - failed.len(), results.len())?;
            out.flush()?;
        }
        Format::Json | Format::Csv => {
            let mut table = Table::with_header(["criterion", "block", "passed"]);
            for r in &results {
                table.push_record(json!({
                    "criterion": r.criterion,
                    "block": r.block.name(),
                    "passed": r.passed,
                    "details": r.details,
                }));
                table.push_row(vec![r.criterion.to_string(), r.block.name().to_string(), r.passed.to_string()]);
            }
            if cfg.format == Format::Csv {
                output::write_csv(&mut out, &table)?;
            } else {
                output::write_json(&mut out, &table)?;
            }
        }
    }
    for r in &failed {
        eprintln!("verification failed: criterion {} [{}]", r.criterion, r.block);
    }
    Ok(if failed.is_empty() { Status::Ok } else { Status::VerificationFailed })
}
