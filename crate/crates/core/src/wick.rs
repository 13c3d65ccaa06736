//! Berezin–Toeplitz matrices on `H_{1,k}` in the orthonormalised monomial
//! basis, by Gaussian moments and by normal-ordered differentiation.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{enumerate_basis, ln_norm_sq_raw, EigenspaceBasis, WeightVector};
use crate::numeric::ln_factorial;
use crate::spectra::hermitian_eigenvalues;
use crate::symbols::{PolySymbol, TermKey};

/// Dense operator on `H_{1,k}`; entry `(j, i)` is `<e_j, T e_i>` for the
/// normalised monomials `e_i = z^{α_i} / ‖z^{α_i}‖`.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    basis: EigenspaceBasis,
    entries: DMatrix<Complex64>,
}

impl OperatorMatrix {
    pub fn new(basis: EigenspaceBasis, entries: DMatrix<Complex64>) -> Result<Self> {
        let d = basis.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: entries.nrows().max(entries.ncols()) });
        }
        Ok(Self { basis, entries })
    }

    pub fn identity(basis: &EigenspaceBasis) -> Self {
        let d = basis.dim();
        Self { basis: basis.clone(), entries: DMatrix::identity(d, d) }
    }

    pub fn basis(&self) -> &EigenspaceBasis {
        &self.basis
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self { basis: self.basis.clone(), entries: self.entries.adjoint() }
    }

    /// `‖T − T*‖_F / ‖T‖_F` (zero for the zero matrix).
    pub fn asymmetry(&self) -> f64 {
        let norm = self.entries.norm();
        if norm == 0.0 {
            return 0.0;
        }
        (&self.entries - self.entries.adjoint()).norm() / norm
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self { basis: self.basis.clone(), entries: &self.entries * &other.entries }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self { basis: self.basis.clone(), entries: &self.entries * &other.entries - &other.entries * &self.entries }
    }

    /// Spectral norm, as the square root of the top eigenvalue of `T*T`.
    pub fn operator_norm(&self) -> Result<f64> {
        if self.dim() == 0 {
            return Ok(0.0);
        }
        let gram = Self { basis: self.basis.clone(), entries: self.entries.adjoint() * &self.entries };
        let eig = hermitian_eigenvalues(&gram)?;
        Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
    }
}

fn check_symbol(f: &PolySymbol, basis: &EigenspaceBasis) -> Result<()> {
    if f.n() != basis.weights().n() {
        return Err(Error::DimensionMismatch { expected: basis.weights().n(), found: f.n() });
    }
    Ok(())
}

/// `β = α + δ − γ` if it is a valid exponent.
fn shifted(alpha: &[u32], key: &TermKey) -> Option<Vec<u32>> {
    alpha
        .iter()
        .zip(&key.gamma)
        .zip(&key.delta)
        .map(|((&a, &g), &d)| (a + d).checked_sub(g))
        .collect()
}

fn assemble<F>(f: &PolySymbol, basis: &EigenspaceBasis, entry: F) -> OperatorMatrix
where
    F: Fn(usize, &[u32], &[u32], &TermKey) -> f64 + Sync,
{
    let d = basis.dim();
    let k = basis.k() as f64;
    let terms: Vec<(TermKey, Complex64)> =
        f.terms().filter(|(key, _)| key.weight(basis.weights()) == 0).map(|(key, c)| (key.clone(), *c)).collect();
    // Columns are independent; each entry is a closed form, so the result does
    // not depend on the schedule.
    let columns: Vec<Vec<(usize, Complex64)>> = (0..d)
        .into_par_iter()
        .map(|col| {
            let alpha = basis.indices()[col].as_slice();
            let mut out: Vec<(usize, Complex64)> = Vec::new();
            for (key, c) in &terms {
                let Some(beta) = shifted(alpha, key) else { continue };
                let Some(row) = basis.position(&beta) else { continue };
                let v = entry(col, alpha, &beta, key);
                let scaled = *c * v * k.powi(-(key.l as i32));
                match out.iter_mut().find(|(r, _)| *r == row) {
                    Some((_, acc)) => *acc += scaled,
                    None => out.push((row, scaled)),
                }
            }
            out
        })
        .collect();
    let mut m = DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
    for (col, entries) in columns.into_iter().enumerate() {
        for (row, v) in entries {
            m[(row, col)] = v;
        }
    }
    OperatorMatrix { basis: basis.clone(), entries: m }
}

/// `Π M_f Π` restricted to `H_{1,k}`: entry `(β, α)` collects
/// `c k^{-l} ‖z^{α+δ}‖² / (‖z^α‖ ‖z^β‖)` over the terms with `α + δ = β + γ`.
/// Non-invariant monomials contribute nothing, since they change the level.
pub fn toeplitz_matrix(f: &PolySymbol, basis: &EigenspaceBasis) -> Result<OperatorMatrix> {
    check_symbol(f, basis)?;
    let k = basis.k();
    let ln_norms = basis.ln_norms_sq();
    Ok(assemble(f, basis, |col, alpha, beta, key| {
        let row = basis.position(beta).expect("row in basis");
        let top: Vec<u32> = alpha.iter().zip(&key.delta).map(|(a, d)| a + d).collect();
        (ln_norm_sq_raw(&top, k) - 0.5 * (ln_norms[col] + ln_norms[row])).exp()
    }))
}

/// Same operator through `k^{-|γ|} ∂^γ ∘ z^δ` acting on each monomial: the
/// falling factorial from differentiation times the exact norm ratio
/// `‖z^β‖ / ‖z^α‖`.
pub fn normal_ordered_matrix(f: &PolySymbol, basis: &EigenspaceBasis) -> Result<OperatorMatrix> {
    check_symbol(f, basis)?;
    let k = basis.k();
    let lnk = (k as f64).ln();
    Ok(assemble(f, basis, |_, alpha, beta, key| {
        let mut ln = -(key.gamma.iter().sum::<u32>() as f64) * lnk;
        for i in 0..alpha.len() {
            let top = (alpha[i] + key.delta[i]) as u64;
            ln += ln_factorial(top) - ln_factorial(beta[i] as u64);
            ln += 0.5 * (ln_factorial(beta[i] as u64) - ln_factorial(alpha[i] as u64));
        }
        let a: u64 = alpha.iter().map(|&x| x as u64).sum();
        let b: u64 = beta.iter().map(|&x| x as u64).sum();
        ln += 0.5 * (a as f64 - b as f64) * lnk;
        ln.exp()
    }))
}

/// Toeplitz matrix of the circle average of `f`. For polynomial symbols this
/// coincides with [`toeplitz_matrix`] of `f` itself.
pub fn lambda_toeplitz(f: &PolySymbol, basis: &EigenspaceBasis) -> Result<OperatorMatrix> {
    toeplitz_matrix(&f.average_circle(basis.weights()), basis)
}

/// Exact square of the single-term moment ratio
/// `‖z^{α+δ}‖² / (‖z^α‖ ‖z^β‖)`, with the powers of `2π` cancelled.
pub fn moment_ratio_sq_exact(alpha: &[u32], beta: &[u32], delta: &[u32], k: u64) -> BigRational {
    let fact = |m: u32| -> BigInt { (1..=m as u64).fold(BigInt::from(1u32), |acc, j| acc * j) };
    let mut num = BigInt::from(1u32);
    let mut den = BigInt::from(1u32);
    for i in 0..alpha.len() {
        let top = fact(alpha[i] + delta[i]);
        num *= &top * &top;
        den *= fact(alpha[i]) * fact(beta[i]);
    }
    let a: u64 = alpha.iter().map(|&x| x as u64).sum();
    let b: u64 = beta.iter().map(|&x| x as u64).sum();
    let t: u64 = alpha.iter().zip(delta).map(|(&x, &d)| (x + d) as u64).sum();
    // k^{-(2t)} / k^{-(a + b)}; the dimension counts cancel.
    let e = a as i64 + b as i64 - 2 * t as i64;
    let kk = BigInt::from(k);
    if e >= 0 {
        num *= kk.pow(e as u32);
    } else {
        den *= kk.pow((-e) as u32);
    }
    BigRational::new(num, den)
}

/// Toeplitz matrix from the exact rational moment ratios; only for oracle
/// runs on small bases.
pub fn toeplitz_matrix_exact(f: &PolySymbol, basis: &EigenspaceBasis) -> Result<OperatorMatrix> {
    use num_traits::ToPrimitive;
    check_symbol(f, basis)?;
    if basis.dim() > 200 {
        return Err(Error::InvalidArgument("exact Toeplitz path is limited to dimension 200".into()));
    }
    let k = basis.k();
    Ok(assemble(f, basis, |_, alpha, beta, key| {
        let r = moment_ratio_sq_exact(alpha, beta, &key.delta, k);
        r.to_f64().expect("finite ratio").sqrt()
    }))
}

/// Spectral norms of `[T_f, T_g]` on `H_{1,k}` for each `k`.
pub fn commutator_norm_scan(
    f: &PolySymbol,
    g: &PolySymbol,
    weights: &WeightVector,
    k_list: &[u64],
) -> Result<Vec<(u64, f64)>> {
    if !f.is_invariant(weights) || !g.is_invariant(weights) {
        return Err(Error::InvalidArgument("commutator scan needs circle-invariant symbols".into()));
    }
    k_list
        .par_iter()
        .map(|&k| {
            let basis = enumerate_basis(weights, k);
            let tf = toeplitz_matrix(f, &basis)?;
            let tg = toeplitz_matrix(g, &basis)?;
            Ok((k, tf.commutator(&tg).operator_norm()?))
        })
        .collect()
}

/// Symbol with every coefficient replaced by its modulus; its Toeplitz
/// matrix bounds the magnitude of each term's contribution entrywise.
pub fn magnitude_symbol(f: &PolySymbol) -> PolySymbol {
    let mut out = PolySymbol::zero(f.n());
    for (key, c) in f.terms() {
        out.add_term(key.clone(), Complex64::new(c.norm(), 0.0));
    }
    out
}

/// Largest entrywise discrepancy between the moment and normal-ordered
/// matrices, relative to the summed magnitude of the contributing terms.
pub fn wick_identity_error(f: &PolySymbol, basis: &EigenspaceBasis) -> Result<f64> {
    let a = toeplitz_matrix(f, basis)?;
    let b = normal_ordered_matrix(f, basis)?;
    let scale = toeplitz_matrix(&magnitude_symbol(f), basis)?;
    let mut worst = 0.0f64;
    for ((x, y), s) in a.entries.iter().zip(b.entries.iter()).zip(scale.entries.iter()) {
        let diff = (x - y).norm();
        if diff > 0.0 {
            worst = worst.max(diff / s.norm());
        }
    }
    Ok(worst)
}
