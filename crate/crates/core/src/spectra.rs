//! Hermitian spectra by cyclic complex Jacobi rotations, spectral sums, and
//! the comparison harness between exact sums and the sector model.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{enumerate_basis, WeightVector};
use crate::sectors::{enumerate_sectors, fit_subleading, leading_coefficient, model_eval, AsymptoticModel, FitReport};
use crate::symbols::{PolySymbol, RealPoly};
use crate::wick::{lambda_toeplitz, OperatorMatrix};

const MAX_SWEEPS: usize = 64;
const OFF_TOL: f64 = 1e-13;
const HERMITIAN_TOL: f64 = 1e-10;

/// Eigen-decomposition `T = V diag(λ) V*` with ascending `λ`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
    pub sweeps: usize,
}

impl HermitianEigen {
    /// `max_j ‖T v_j − λ_j v_j‖ / ‖T‖₂`.
    pub fn max_residual(&self, t: &DMatrix<Complex64>) -> f64 {
        let scale = self.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return t.norm();
        }
        let tv = t * &self.vectors;
        (0..self.values.len())
            .map(|j| (tv.column(j) - self.vectors.column(j) * Complex64::new(self.values[j], 0.0)).norm())
            .fold(0.0, f64::max)
            / scale
    }
}

fn off_norm(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi for a complex Hermitian matrix.
pub fn hermitian_eigen(t: &DMatrix<Complex64>) -> Result<HermitianEigen> {
    let n = t.nrows();
    if t.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: t.ncols() });
    }
    let norm = t.norm();
    if norm > 0.0 {
        let asym = (t - t.adjoint()).norm() / norm;
        if asym > HERMITIAN_TOL {
            return Err(Error::NonHermitian { asymmetry: asym });
        }
    }
    // Symmetrise away rounding so the rotations see an exactly Hermitian input.
    let mut a = (t + t.adjoint()) * Complex64::new(0.5, 0.0);
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let mut sweeps = 0;
    while off_norm(&a) > OFF_TOL * norm {
        if sweeps == MAX_SWEEPS {
            return Err(Error::EigenNonConvergence { sweeps, off: off_norm(&a) / norm });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                // Phase e^{-iφ} on column q (e^{iφ} on row q) makes the pivot
                // real, then a real rotation annihilates it.
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let tt = if tau >= 0.0 { 1.0 } else { -1.0 } / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + tt * tt).sqrt();
                let s = tt * c;
                let phase_conj = phase.conj();
                for r in 0..n {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)] * phase_conj;
                    a[(r, p)] = arp * c - arq * s;
                    a[(r, q)] = arp * s + arq * c;
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)] * phase_conj;
                    v[(r, p)] = vrp * c - vrq * s;
                    v[(r, q)] = vrp * s + vrq * c;
                }
                for r in 0..n {
                    let apr = a[(p, r)];
                    let aqr = a[(q, r)] * phase;
                    a[(p, r)] = apr * c - aqr * s;
                    a[(q, r)] = apr * s + aqr * c;
                }
                // The pivot update `a_pp − t|a_pq|` is more accurate than the
                // rotated diagonal.
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)] = Complex64::new(app - tt * mag, 0.0);
                a[(q, q)] = Complex64::new(aqq + tt * mag, 0.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors, sweeps })
}

/// Sorted eigenvalues of a Hermitian operator matrix.
pub fn hermitian_eigenvalues(matrix: &OperatorMatrix) -> Result<Vec<f64>> {
    Ok(hermitian_eigen(matrix.entries())?.values)
}

/// `Σ_i f(λ_i)`.
pub fn density_sum(matrix: &OperatorMatrix, f: &RealPoly) -> Result<f64> {
    let eig = hermitian_eigenvalues(matrix)?;
    Ok(sum_over(&eig, f))
}

pub(crate) fn sum_over(eigenvalues: &[f64], f: &RealPoly) -> f64 {
    let terms: Vec<f64> = eigenvalues.iter().map(|&x| f.eval(x)).collect();
    crate::numeric::pairwise_sum(&terms)
}

type SpectrumKey = (Vec<u32>, String, u64);

/// Memoised spectra keyed by weights, symbol and `k`.
#[derive(Debug, Default, Clone)]
pub struct SpectrumCache {
    inner: Arc<Mutex<HashMap<SpectrumKey, Arc<Vec<f64>>>>>,
}

impl SpectrumCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spectrum of the λ-Toeplitz operator of `symbol` on `H_{1,k}`.
    pub fn spectrum(&self, weights: &WeightVector, symbol: &PolySymbol, k: u64) -> Result<Arc<Vec<f64>>> {
        let key = (weights.as_slice().to_vec(), symbol.render(), k);
        if let Some(v) = self.inner.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let basis = enumerate_basis(weights, k);
        let t = lambda_toeplitz(symbol, &basis)?;
        let eig = Arc::new(hermitian_eigenvalues(&t)?);
        self.inner.lock().expect("cache lock").insert(key, eig.clone());
        Ok(eig)
    }
}

/// Exact spectral sums against the sector model at one `k`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralDensityReport {
    pub k: u64,
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    /// `(test function, Σ f(λ_i))` in the order of the requested list.
    pub sums: Vec<(String, f64)>,
    /// Model values through the fitted order, same order as `sums`.
    pub model: Vec<(String, f64)>,
    pub residuals: Vec<(String, f64)>,
    /// Whether `k` lies in the held-out half of the k-list.
    pub out_of_sample: bool,
}

/// Fitted model and diagnostics for one test function.
#[derive(Debug, Clone)]
pub struct DensityFit {
    pub f: RealPoly,
    pub model: AsymptoticModel,
    pub report: FitReport,
}

/// Full output of [`density_compare`].
#[derive(Debug, Clone)]
pub struct DensityComparison {
    pub reports: Vec<SpectralDensityReport>,
    pub fits: Vec<DensityFit>,
}

/// Builds λ-Toeplitz spectra for every `k`, computes the exact sums, fits the
/// subleading model coefficients on the first half of `k_list` (the leading
/// ones are computed from the averaged principal symbol) and reports the
/// residuals on the second half.
pub fn density_compare(
    weights: &WeightVector,
    symbol: &PolySymbol,
    f_list: &[RealPoly],
    k_list: &[u64],
    fit_order: usize,
    cache: &SpectrumCache,
) -> Result<DensityComparison> {
    if !symbol.is_hermitian() {
        return Err(Error::InvalidArgument("density comparison needs a Hermitian symbol".into()));
    }
    if k_list.len() < 2 {
        return Err(Error::InvalidArgument("k-list needs at least two values".into()));
    }
    let spectra: Vec<Arc<Vec<f64>>> =
        k_list.par_iter().map(|&k| cache.spectrum(weights, symbol, k)).collect::<Result<_>>()?;
    let g0 = symbol.average_circle(weights).order(0);
    let sectors = enumerate_sectors(weights);
    let split = k_list.len().div_ceil(2);

    let mut fits = Vec::new();
    for f in f_list {
        let exact: Vec<(u64, f64)> = k_list.iter().zip(&spectra).map(|(&k, eig)| (k, sum_over(eig, f))).collect();
        let mut model = AsymptoticModel::new(weights.clone(), sectors.clone());
        for (idx, sector) in sectors.iter().enumerate() {
            model.set_coefficient(idx, 0, leading_coefficient(sector, &g0, f, weights)?);
        }
        let (model, report) = fit_subleading(&exact[..split], &exact[split..], &model, fit_order)?;
        fits.push(DensityFit { f: f.clone(), model, report });
    }

    let reports = k_list
        .iter()
        .zip(&spectra)
        .enumerate()
        .map(|(idx, (&k, eig))| {
            let mut sums = Vec::new();
            let mut modelled = Vec::new();
            let mut residuals = Vec::new();
            for fit in &fits {
                let name = fit.f.render();
                let s = sum_over(eig, &fit.f);
                let m = model_eval(&fit.model, k)?;
                sums.push((name.clone(), s));
                modelled.push((name.clone(), m));
                residuals.push((name, s - m));
            }
            Ok(SpectralDensityReport {
                k,
                dim: eig.len(),
                eigenvalues: eig.to_vec(),
                sums,
                model: modelled,
                residuals,
                out_of_sample: idx >= split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityComparison { reports, fits })
}
