//! The reduced side: Leray moments on the weighted simplex, reduced norms,
//! the maps `V_k`, `W_k`, `U_k`, the control function `φ`, the fibre
//! integration map `I_k` and concentration of states on the level set.
//!
//! Coordinates: a point of `C^n` off the coordinate hyperplanes' origin is
//! written `z = l_{it}·x` with `x` on the level set `P`, where the complexified
//! action is `z_i ↦ e^{-p_i t} z_i`. In actions `s_i = |z_i|²` this reads
//! `s_i = e^{-2 p_i t} u_i` with `u ∈ Δ'`, and the volume element is
//!
//! ```text
//! Π ds_i = 2 e^{-2|p| t} (Σ p_i² u_i) dt dσ(u),
//! ```
//!
//! `dσ` the Leray measure on `Δ'` and `|p| = Σ p_i`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{enumerate_basis, ln_norm_sq_raw, EigenspaceBasis, MultiIndex, WeightVector};
use crate::numeric::{ln_factorial, log_add};
use crate::quadrature::{integrate, integrate_simplex};
use crate::symbols::{PolySymbol, ReducedPoint};
use crate::wick::OperatorMatrix;

/// Global constant on the reduced measure, `π √2`. It is the value that
/// makes `‖(z^k)_r‖² / ‖z^k‖² · √2 → 1` on `C` (see [`stirling_calibration`]).
pub const CALIBRATION: f64 = PI * SQRT_2;

const REDUCED_TOL: f64 = 1e-10;
const FIBRE_TOL: f64 = 1e-12;
/// Tails are cut once the log-integrand is this far below its peak.
const TAIL_DROP: f64 = 40.0;
const T_LIMIT: f64 = 1e3;

/// The weighted simplex `Δ' = {s ≥ 0 : Σ p_i s_i = 1}` with its Leray measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexDomain {
    weights: WeightVector,
    eliminated: usize,
}

impl SimplexDomain {
    pub fn new(weights: &WeightVector) -> Self {
        Self { weights: weights.clone(), eliminated: weights.n() - 1 }
    }

    pub fn with_eliminated(weights: &WeightVector, j: usize) -> Result<Self> {
        if j >= weights.n() {
            return Err(Error::InvalidArgument(format!("eliminated coordinate {j} out of range")));
        }
        Ok(Self { weights: weights.clone(), eliminated: j })
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn eliminated(&self) -> usize {
        self.eliminated
    }

    pub fn integrate<F>(&self, f: &F, tol: f64) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + ?Sized,
    {
        integrate_simplex(self.weights.as_slice(), self.eliminated, f, tol)
    }

    /// Leray volume `1 / ((n-1)! Π p_i)`.
    pub fn volume(&self) -> f64 {
        weighted_moment(&MultiIndex::zeros(self.weights.n()), &self.weights).expect("matching length")
    }
}

/// `∫_{Δ'} s^a dσ = Π a_i! / ((Σ a_i + n − 1)! Π p_i^{a_i+1})`.
pub fn weighted_moment(exponents: &MultiIndex, weights: &WeightVector) -> Result<f64> {
    Ok(ln_weighted_moment(exponents.as_slice(), weights.as_slice())?.exp())
}

pub(crate) fn ln_weighted_moment(a: &[u32], p: &[u32]) -> Result<f64> {
    if a.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: a.len() });
    }
    let n = p.len() as u64;
    let total: u64 = a.iter().map(|&x| x as u64).sum();
    let mut ln = -ln_factorial(total + n - 1);
    for (&ai, &pi) in a.iter().zip(p) {
        ln += ln_factorial(ai as u64) - (ai as f64 + 1.0) * (pi as f64).ln();
    }
    Ok(ln)
}

fn check_level(alpha: &MultiIndex, weights: &WeightVector, k: u64) -> Result<()> {
    if alpha.len() != weights.n() {
        return Err(Error::DimensionMismatch { expected: weights.n(), found: alpha.len() });
    }
    if weights.pair(alpha.as_slice()) != k || k == 0 {
        return Err(Error::OffLevel { alpha: alpha.0.clone(), k });
    }
    Ok(())
}

/// `ln` of the squared norm of the reduced section `(z^α)_r`:
/// `(2π/k)^{1/2} (2π)^{n−1} · CALIBRATION · ∫_{Δ'} e^{−kΣs} s^α dσ`.
pub fn ln_reduced_norm_sq(alpha: &MultiIndex, weights: &WeightVector, k: u64) -> Result<f64> {
    check_level(alpha, weights, k)?;
    let n = weights.n();
    let kf = k as f64;
    let a = alpha.as_slice();
    // The integrand peaks at s = α/k on Δ'; factor the peak out.
    let peak: f64 = a.iter().filter(|&&x| x > 0).map(|&x| x as f64 * (x as f64 / kf).ln()).sum::<f64>() - kf;
    let integrand = |s: &[f64]| -> f64 {
        let mut ln = -kf * s.iter().sum::<f64>() - peak;
        for (&ai, &si) in a.iter().zip(s) {
            if ai > 0 {
                ln += ai as f64 * si.ln();
            }
        }
        ln.exp()
    };
    let integral = SimplexDomain::new(weights).integrate(&integrand, REDUCED_TOL)?;
    Ok(0.5 * (2.0 * PI / kf).ln() + (n as f64 - 1.0) * (2.0 * PI).ln() + CALIBRATION.ln() + integral.ln() + peak)
}

pub fn reduced_norm_sq(alpha: &MultiIndex, weights: &WeightVector, k: u64) -> Result<f64> {
    Ok(ln_reduced_norm_sq(alpha, weights, k)?.exp())
}

/// Estimate of the calibration constant from the `n = 1` limit
/// `lim_k ‖(z^k)_r‖² / ‖z^k‖² · √2` of the uncalibrated norms, by Richardson
/// extrapolation of the Stirling ratio.
pub fn stirling_calibration() -> f64 {
    let raw = |k: u64| -> f64 {
        let kf = k as f64;
        // ln[(2π/k)^{1/2} e^{-k} / (2π k! / k^{k+1})] + ln √2
        let ln = 0.5 * (2.0 * PI / kf).ln() - kf - (2.0 * PI).ln() - ln_factorial(k) + (kf + 1.0) * kf.ln();
        ln.exp() * SQRT_2
    };
    // raw(k) = L (1 − 1/(12k) + O(k^{-2})): eliminate two orders.
    let (a, b, c) = (raw(1000), raw(2000), raw(4000));
    let r1 = 2.0 * b - a;
    let r2 = 2.0 * c - b;
    let limit = (4.0 * r2 - r1) / 3.0;
    1.0 / limit
}

/// Diagonal reduction maps in the orthonormalised monomial bases.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionMaps {
    #[serde(skip)]
    basis: EigenspaceBasis,
    /// `d_α = ‖(z^α)_r‖ / ‖z^α‖`, the singular values of `V_k`.
    pub d: Vec<f64>,
    pub calibration: f64,
}

impl ReductionMaps {
    pub fn build(basis: &EigenspaceBasis) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidArgument(format!("H_(1,{}) is zero-dimensional", basis.k())));
        }
        let d = basis
            .indices()
            .par_iter()
            .zip(basis.ln_norms_sq().par_iter())
            .map(|(alpha, &ln_norm)| {
                let ln_red = ln_reduced_norm_sq(alpha, basis.weights(), basis.k())?;
                Ok((0.5 * (ln_red - ln_norm)).exp())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { basis: basis.clone(), d, calibration: CALIBRATION })
    }

    pub fn basis(&self) -> &EigenspaceBasis {
        &self.basis
    }

    fn diag(&self, values: impl Iterator<Item = f64>) -> OperatorMatrix {
        let v: Vec<Complex64> = values.map(|x| Complex64::new(x, 0.0)).collect();
        OperatorMatrix::new(self.basis.clone(), DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)))
            .expect("square diagonal")
    }

    pub fn v_matrix(&self) -> OperatorMatrix {
        self.diag(self.d.iter().copied())
    }

    /// `W_k = V_k^{-1}`.
    pub fn w_matrix(&self) -> OperatorMatrix {
        self.diag(self.d.iter().map(|x| 1.0 / x))
    }

    /// `V*V`, diagonal with entries `d_α²`.
    pub fn vstar_v(&self) -> OperatorMatrix {
        self.diag(self.d.iter().map(|x| x * x))
    }

    /// `U_k = V_k (V_k* V_k)^{-1/2}`; the identity, since `V_k` is diagonal
    /// and positive.
    pub fn u_matrix(&self) -> OperatorMatrix {
        self.diag(self.d.iter().map(|x| x / (x * x).sqrt()))
    }

    pub fn spread(&self) -> f64 {
        let max = self.d.iter().copied().fold(f64::MIN, f64::max);
        let min = self.d.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }
}

/// `φ(t, y) = 2t + Σ s_i(y) (e^{−2 p_i t} − 1)`.
pub fn phi(t: f64, y: &ReducedPoint, weights: &WeightVector) -> f64 {
    phi_actions(t, &y.s, weights.as_slice())
}

fn phi_actions(t: f64, u: &[f64], p: &[u32]) -> f64 {
    2.0 * t + u.iter().zip(p).map(|(&ui, &pi)| ui * (-2.0 * pi as f64 * t).exp_m1()).sum::<f64>()
}

/// `∂²_t φ = 4 Σ p_i² s_i(t)`.
pub fn phi_dtt(t: f64, y: &ReducedPoint, weights: &WeightVector) -> f64 {
    4.0 * y.s.iter().zip(weights.as_slice()).map(|(&u, &p)| (p as f64).powi(2) * u * (-2.0 * p as f64 * t).exp()).sum::<f64>()
}

/// Checks `|z^α|² e^{−k|z|²}` at `l_{it}·y` against `e^{−kφ(t,y)}` times its
/// value at `y`; returns `|lhs − e^{−kφ} rhs| / rhs`.
pub fn control_norm_check(alpha: &MultiIndex, weights: &WeightVector, k: u64, t: f64, y: &ReducedPoint) -> Result<f64> {
    check_level(alpha, weights, k)?;
    let kf = k as f64;
    let z0 = y.lift();
    let zt: Vec<Complex64> =
        z0.iter().zip(weights.as_slice()).map(|(z, &p)| z * (-(p as f64) * t).exp()).collect();
    let ln_density = |z: &[Complex64]| -> f64 {
        let mut ln = -kf * z.iter().map(|w| w.norm_sqr()).sum::<f64>();
        for (w, &a) in z.iter().zip(alpha.as_slice()) {
            if a > 0 {
                ln += a as f64 * w.norm_sqr().ln();
            }
        }
        ln
    };
    let rhs = ln_density(&z0);
    if rhs == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let lhs = ln_density(&zt);
    let kphi = kf * phi(t, y, weights);
    // |lhs − e^{−kφ} rhs| / rhs, evaluated without forming the tiny products.
    Ok((-kphi).exp() * (lhs - rhs + kphi).exp_m1().abs())
}

/// Fibre density of `I_k`: the volume element `2 e^{−2|p|t} Σ p_i² u_i`
/// rescaled by `2π / CALIBRATION`.
pub fn fiber_density(t: f64, u: &[f64], weights: &WeightVector) -> f64 {
    let p = weights.as_slice();
    let total: f64 = p.iter().map(|&x| x as f64).sum();
    let a: f64 = u.iter().zip(p).map(|(&ui, &pi)| (pi as f64).powi(2) * ui).sum();
    2.0 * PI / CALIBRATION * 2.0 * (-2.0 * total * t).exp() * a
}

/// `Σ c k^{-l} s^γ` for a symbol built from `γ = δ` monomials.
struct ActionPolynomial {
    terms: Vec<(Vec<u32>, f64)>,
}

impl ActionPolynomial {
    fn new(f: &PolySymbol, weights: &WeightVector, k: u64) -> Result<Self> {
        if f.n() != weights.n() {
            return Err(Error::DimensionMismatch { expected: weights.n(), found: f.n() });
        }
        let mut terms = Vec::new();
        for (key, c) in f.terms() {
            if !key.is_diagonal() {
                return Err(Error::InvalidArgument(
                    "fibre integration needs a symbol in the actions s(i) only".into(),
                ));
            }
            terms.push((key.gamma.clone(), c.re * (k as f64).powi(-(key.l as i32))));
        }
        Ok(Self { terms })
    }

    fn eval(&self, s: &[f64]) -> f64 {
        self.terms.iter().map(|(g, c)| c * g.iter().zip(s).map(|(&e, &x)| x.powi(e as i32)).product::<f64>()).sum()
    }

    fn abs_eval(&self, s: &[f64]) -> f64 {
        self.terms.iter().map(|(g, c)| c.abs() * g.iter().zip(s).map(|(&e, &x)| x.powi(e as i32)).product::<f64>()).sum()
    }
}

fn flowed(t: f64, u: &[f64], p: &[u32]) -> Vec<f64> {
    u.iter().zip(p).map(|(&ui, &pi)| ui * (-2.0 * pi as f64 * t).exp()).collect()
}

/// Finds `t_hi > from` with `envelope(t) < envelope(from) − TAIL_DROP` for all
/// `t ≥ t_hi` (checked on a doubling sequence), moving in direction `dir`.
fn tail_bound(envelope: &dyn Fn(f64) -> f64, from: f64, dir: f64) -> Result<f64> {
    let reference = envelope(from);
    let mut step = 0.25;
    loop {
        let t = from + dir * step;
        let e = envelope(t);
        if e < reference - TAIL_DROP && e < envelope(from + dir * step * 0.5) {
            return Ok(t);
        }
        step *= 2.0;
        if step > T_LIMIT {
            return Err(Error::TailTruncation { t_max: step });
        }
    }
}

fn fibre_integral(
    g: &ActionPolynomial,
    u: &[f64],
    weights: &WeightVector,
    k: u64,
    tail: Option<f64>,
) -> Result<f64> {
    let p = weights.as_slice();
    let kf = k as f64;
    let envelope = |t: f64| -> f64 {
        let s = flowed(t, u, p);
        -kf * phi_actions(t, u, p) + fiber_density(t, u, weights).ln() + g.abs_eval(&s).ln()
    };
    let integrand = |t: f64| -> f64 {
        let s = flowed(t, u, p);
        (-kf * phi_actions(t, u, p)).exp() * fiber_density(t, u, weights) * g.eval(&s)
    };
    // Every monomial vanishes identically along the fibre.
    if g.terms.iter().all(|(gamma, _)| gamma.iter().zip(u).any(|(&e, &x)| e > 0 && x == 0.0)) {
        return Ok(0.0);
    }
    let value = match tail {
        // Full line: bracket the peak, which sits near t = 0.
        None => {
            let lo = tail_bound(&envelope, 0.0, -1.0)?;
            let hi = tail_bound(&envelope, 0.0, 1.0)?;
            integrate(&integrand, lo, hi, FIBRE_TOL)?.value
        }
        Some(eps) => {
            let right = tail_bound(&envelope, eps, 1.0)?;
            let left = tail_bound(&envelope, -eps, -1.0)?;
            integrate(&integrand, eps, right, FIBRE_TOL)?.value + integrate(&integrand, left, -eps, FIBRE_TOL)?.value
        }
    };
    Ok(value)
}

/// `I_k(f)(x) = (k/2π)^{1/2} ∫_R e^{−kφ(t,x)} f(s(t,x)) δ(t,x) dt` for a
/// symbol in the actions only.
pub fn integrate_ik(f: &PolySymbol, x: &ReducedPoint, weights: &WeightVector, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let g = ActionPolynomial::new(f, weights, k)?;
    let v = fibre_integral(&g, &x.s, weights, k, None)?;
    Ok((k as f64 / (2.0 * PI)).sqrt() * v)
}

/// Large-`k` limit of `I_k(1)(x)`, namely `√(2 Σ p_i² s_i)`.
pub fn ik_one_limit(x: &ReducedPoint, weights: &WeightVector) -> f64 {
    (2.0 * x.s.iter().zip(weights.as_slice()).map(|(&s, &p)| (p as f64).powi(2) * s).sum::<f64>()).sqrt()
}

/// Both sides of `(f z^α, z^α) = (I_k(f) V z^α, V z^α)_{M_r}`, normalised by
/// `‖z^α‖²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PresCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

pub fn pres_identity(alpha: &MultiIndex, f: &PolySymbol, weights: &WeightVector, k: u64, tol: f64) -> Result<PresCheck> {
    check_level(alpha, weights, k)?;
    let g = ActionPolynomial::new(f, weights, k)?;
    let n = weights.n();
    let kf = k as f64;
    let a = alpha.as_slice();
    let ln_norm = ln_norm_sq_raw(a, k);
    // Exact side: Gaussian moments.
    let lhs: f64 = g
        .terms
        .iter()
        .map(|(gamma, c)| {
            let top: Vec<u32> = a.iter().zip(gamma).map(|(x, y)| x + y).collect();
            c * (ln_norm_sq_raw(&top, k) - ln_norm).exp()
        })
        .sum();
    // Reduced side: |V z^α|² δ_{M_r} integrated against I_k(f).
    let ln_pref = 0.5 * (2.0 * PI / kf).ln() + (n as f64 - 1.0) * (2.0 * PI).ln() + CALIBRATION.ln() - ln_norm
        + 0.5 * (kf / (2.0 * PI)).ln();
    let failure = std::sync::Mutex::new(None);
    let integrand = |u: &[f64]| -> f64 {
        let mut ln = ln_pref - kf * u.iter().sum::<f64>();
        for (&ai, &ui) in a.iter().zip(u) {
            if ai > 0 {
                ln += ai as f64 * ui.ln();
            }
        }
        if ln == f64::NEG_INFINITY || ln < -745.0 {
            return 0.0;
        }
        match fibre_integral(&g, u, weights, k, None) {
            Ok(v) => ln.exp() * v,
            Err(e) => {
                failure.lock().expect("failure lock").get_or_insert(e);
                0.0
            }
        }
    };
    let rhs = SimplexDomain::new(weights).integrate(&integrand, tol)?;
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    Ok(PresCheck { lhs, rhs, rel_err: (lhs - rhs).abs() / lhs.abs() })
}

/// Mean over the residual torus of `e^{i<β − α, θ(φ)>}` for the lift
/// `θ = (φ, 0)`; the angular factor of the reduced pairing of two monomials.
pub fn residual_angle_average(alpha: &MultiIndex, beta: &MultiIndex) -> Complex64 {
    let n = alpha.len();
    // Trapezoidal rule on the torus is exact for trigonometric polynomials of
    // degree below the node count.
    let m = 2 * alpha.as_slice().iter().chain(beta.as_slice()).copied().max().unwrap_or(0) as usize + 2;
    let mut acc = Complex64::new(1.0, 0.0);
    for i in 0..n.saturating_sub(1) {
        let freq = beta.0[i] as f64 - alpha.0[i] as f64;
        let mean: Complex64 =
            (0..m).map(|j| Complex64::from_polar(1.0, freq * 2.0 * PI * j as f64 / m as f64)).sum::<Complex64>() / m as f64;
        acc *= mean;
    }
    if acc.norm() < 1e-14 {
        Complex64::new(0.0, 0.0)
    } else {
        acc
    }
}

/// `max_α |d_α² √(2 Σ p_i² α_i / k) − 1|`.
pub fn vstar_v_symbol_check(basis: &EigenspaceBasis) -> Result<f64> {
    if basis.dim() < 3 {
        return Err(Error::InvalidArgument(format!("dimension {} is below 3", basis.dim())));
    }
    let maps = ReductionMaps::build(basis)?;
    let kf = basis.k() as f64;
    let p = basis.weights().as_slice();
    Ok(basis
        .indices()
        .iter()
        .zip(&maps.d)
        .map(|(alpha, d)| {
            let a: f64 = alpha.as_slice().iter().zip(p).map(|(&x, &pi)| (pi as f64).powi(2) * x as f64 / kf).sum();
            (d * d * (2.0 * a).sqrt() - 1.0).abs()
        })
        .fold(0.0, f64::max))
}

/// `Tr(V*V) / ((k/2π)^{n−1} ∫_{M_r} (2 Σ p_i² s_i)^{−1/2})`, the ratio of the
/// trace of `V*V` to its prediction from the reduced Liouville measure.
pub fn trace_vstar_v_ratio(weights: &WeightVector, k: u64) -> Result<f64> {
    let maps = ReductionMaps::build(&enumerate_basis(weights, k))?;
    let trace: f64 = maps.d.iter().map(|d| d * d).sum();
    let p = weights.as_slice();
    let f = |u: &[f64]| -> f64 {
        let a: f64 = u.iter().zip(p).map(|(&ui, &pi)| (pi as f64).powi(2) * ui).sum();
        1.0 / (2.0 * a).sqrt()
    };
    let integral = SimplexDomain::new(weights).integrate(&f, 1e-12)?;
    let n = weights.n() as f64;
    Ok(trace / ((k as f64).powf(n - 1.0) * integral))
}

/// `C(ε) = min_{|t| = ε, u ∈ Δ'} φ(t, u)`; `φ` is affine in `u`, so the
/// minimum sits at a vertex `e_i / p_i`.
pub fn concentration_bound(weights: &WeightVector, eps: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &t in &[eps, -eps] {
        for &p in weights.as_slice() {
            let p = p as f64;
            best = best.min(2.0 * t + (-2.0 * p * t).exp_m1() / p);
        }
    }
    best
}

/// Fraction of `‖z^α‖²` carried by `{|t| ≥ ε}` (`tail = Some(ε)`) or by all
/// of `C^n` (`None`, which must return 1).
pub fn monomial_mass(alpha: &MultiIndex, weights: &WeightVector, k: u64, tail: Option<f64>, tol: f64) -> Result<f64> {
    check_level(alpha, weights, k)?;
    let n = weights.n();
    let kf = k as f64;
    let a = alpha.as_slice();
    let one = ActionPolynomial { terms: vec![(vec![0; n], 1.0)] };
    // (2π)^n from the angles; the fibre density carries 2π/CALIBRATION.
    let ln_pref = n as f64 * (2.0 * PI).ln() + (CALIBRATION / (2.0 * PI)).ln() - ln_norm_sq_raw(a, k);
    let failure = std::sync::Mutex::new(None);
    let integrand = |u: &[f64]| -> f64 {
        let mut ln = ln_pref - kf * u.iter().sum::<f64>();
        for (&ai, &ui) in a.iter().zip(u) {
            if ai > 0 {
                ln += ai as f64 * ui.ln();
            }
        }
        if ln < -745.0 {
            return 0.0;
        }
        match fibre_integral(&one, u, weights, k, tail) {
            Ok(v) => ln.exp() * v,
            Err(e) => {
                failure.lock().expect("failure lock").get_or_insert(e);
                0.0
            }
        }
    };
    let v = SimplexDomain::new(weights).integrate(&integrand, tol)?;
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    Ok(v)
}

/// Fraction of a state's norm outside `P_ε` for the state with (not
/// necessarily normalised) coefficients `c` in the orthonormal monomial basis.
/// Different monomials are orthogonal on every torus-invariant region, so
/// only `|c_α|²` enter.
pub fn concentration_ratio(coeffs: &[Complex64], basis: &EigenspaceBasis, eps: f64) -> Result<f64> {
    if coeffs.len() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: coeffs.len() });
    }
    let outside: Vec<f64> = basis
        .indices()
        .par_iter()
        .map(|alpha| monomial_mass(alpha, basis.weights(), basis.k(), Some(eps), 1e-9))
        .collect::<Result<_>>()?;
    let total: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    let mut ln_out = f64::NEG_INFINITY;
    for (c, o) in coeffs.iter().zip(&outside) {
        if *o > 0.0 && c.norm_sqr() > 0.0 {
            ln_out = log_add(ln_out, c.norm_sqr().ln() + o.ln());
        }
    }
    Ok((ln_out - total.ln()).exp())
}

/// Complex-Gaussian coefficients, deterministic for a given seed.
pub fn random_state(dim: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect()
}

/// `(k, mass fraction outside P_ε)` for a seeded random state at each `k`.
pub fn concentration_scan(weights: &WeightVector, k_list: &[u64], eps: f64, seed: u64) -> Result<Vec<(u64, f64)>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {eps} is outside (0, 1)")));
    }
    k_list
        .iter()
        .map(|&k| {
            let basis = enumerate_basis(weights, k);
            let psi = random_state(basis.dim(), seed ^ k);
            Ok((k, concentration_ratio(&psi, &basis, eps)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(p: &[u32]) -> WeightVector {
        WeightVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn moment_examples() {
        assert!((weighted_moment(&MultiIndex(vec![0, 0]), &w(&[1, 1])).unwrap() - 1.0).abs() < 1e-15);
        assert!((weighted_moment(&MultiIndex(vec![0, 0]), &w(&[1, 2])).unwrap() - 0.5).abs() < 1e-15);
        assert!((weighted_moment(&MultiIndex(vec![1, 0]), &w(&[1, 1])).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature_for_every_elimination() {
        let p = w(&[1, 2, 3]);
        let a = MultiIndex(vec![2, 1, 3]);
        let exact = weighted_moment(&a, &p).unwrap();
        for j in 0..3 {
            let dom = SimplexDomain::with_eliminated(&p, j).unwrap();
            let v = dom.integrate(&|s: &[f64]| s[0].powi(2) * s[1] * s[2].powi(3), 1e-13).unwrap();
            assert!((v / exact - 1.0).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn reduced_norm_examples() {
        let k = 7;
        let v = reduced_norm_sq(&MultiIndex(vec![7]), &w(&[1]), k).unwrap();
        let expected = (2.0 * PI / 7.0f64).sqrt() * (-7.0f64).exp() * CALIBRATION;
        assert!((v / expected - 1.0).abs() < 1e-12);

        let v = reduced_norm_sq(&MultiIndex(vec![1, 0]), &w(&[1, 1]), 1).unwrap();
        let expected = (2.0 * PI).powf(1.5) * (-1.0f64).exp() / 2.0 * CALIBRATION;
        assert!((v / expected - 1.0).abs() < 1e-12);
        let u = reduced_norm_sq(&MultiIndex(vec![0, 1]), &w(&[1, 1]), 1).unwrap();
        assert!((u / v - 1.0).abs() < 1e-12);

        assert!(matches!(reduced_norm_sq(&MultiIndex(vec![1, 1]), &w(&[1, 2]), 4), Err(Error::OffLevel { .. })));
    }

    #[test]
    fn calibration_is_the_stirling_limit() {
        assert!((stirling_calibration() / CALIBRATION - 1.0).abs() < 1e-9);
    }

    #[test]
    fn maps_are_consistent() {
        let basis = enumerate_basis(&w(&[1, 2]), 12);
        let maps = ReductionMaps::build(&basis).unwrap();
        let vw = maps.v_matrix().matmul(&maps.w_matrix());
        let id = OperatorMatrix::identity(&basis);
        assert!((vw.entries() - id.entries()).norm() < 1e-13);
        assert!((maps.u_matrix().entries() - id.entries()).norm() == 0.0);
        let single = ReductionMaps::build(&enumerate_basis(&w(&[1]), 5)).unwrap();
        assert_eq!(single.u_matrix().entries()[(0, 0)], Complex64::new(1.0, 0.0));
        assert!(ReductionMaps::build(&enumerate_basis(&w(&[2, 3]), 1)).is_err());
    }

    #[test]
    fn round_sphere_has_equal_singular_values() {
        for k in [5u64, 17] {
            let maps = ReductionMaps::build(&enumerate_basis(&w(&[1, 1, 1]), k)).unwrap();
            assert!(maps.spread() - 1.0 < 1e-9);
        }
    }

    #[test]
    fn singular_values_stay_bounded() {
        let spreads: Vec<f64> = [10u64, 20, 40, 80]
            .iter()
            .map(|&k| ReductionMaps::build(&enumerate_basis(&w(&[1, 2]), k)).unwrap().spread())
            .collect();
        // The ratio converges to the ratio of √(2a) over the simplex, (√8/√2)^{1/2}.
        for s in &spreads {
            assert!(*s < 2f64.sqrt() * 1.1, "{spreads:?}");
        }
        assert!((spreads[3] - spreads[2]).abs() < (spreads[1] - spreads[0]).abs());
    }

    #[test]
    fn phi_examples() {
        let p = w(&[1, 2]);
        let y = ReducedPoint::from_actions(vec![0.4, 0.3], &p).unwrap();
        assert_eq!(phi(0.0, &y, &p), 0.0);
        for &t in &[-1.0, -0.2, 0.3, 1.5] {
            let h = 1e-4;
            let fd = (phi(t + h, &y, &p) - 2.0 * phi(t, &y, &p) + phi(t - h, &y, &p)) / (h * h);
            assert!((fd / phi_dtt(t, &y, &p) - 1.0).abs() < 1e-6);
            assert!(phi(t, &y, &p) > 0.0);
        }
        let one = w(&[1]);
        let y = ReducedPoint::from_actions(vec![1.0], &one).unwrap();
        for &t in &[-2.0, -0.5, 0.7, 3.0] {
            assert!((phi(t, &y, &one) - (2.0 * t + (-2.0 * t).exp() - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn control_norm_on_the_line() {
        let one = w(&[1]);
        let y = ReducedPoint::from_actions(vec![1.0], &one).unwrap();
        for &t in &[-2.0, -0.3, 0.0, 1.1, 2.0] {
            assert!(control_norm_check(&MultiIndex(vec![25]), &one, 25, t, &y).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn ik_on_the_line_matches_stirling_series() {
        // I_k(1) = √2 (k/2π)^{1/2} e^k k! / k^{k+1} = √2 (1 + 1/(12k) + 1/(288k²) − 139/(51840k³) − …)
        let one = w(&[1]);
        let y = ReducedPoint::from_actions(vec![1.0], &one).unwrap();
        let k = 100.0;
        let series = SQRT_2 * (1.0 + 1.0 / (12.0 * k) + 1.0 / (288.0 * k * k) - 139.0 / (51840.0 * k * k * k));
        let v = integrate_ik(&PolySymbol::one(1), &y, &one, 100).unwrap();
        assert!((v / series - 1.0).abs() < 1e-6, "{v} vs {series}");
    }

    #[test]
    fn ik_of_one_tends_to_root_of_metric() {
        let p = w(&[1, 2]);
        let y = ReducedPoint::from_actions(vec![0.3, 0.35], &p).unwrap();
        let lim = ik_one_limit(&y, &p);
        let errs: Vec<f64> = [20u64, 40, 80]
            .iter()
            .map(|&k| (integrate_ik(&PolySymbol::one(2), &y, &p, k).unwrap() / lim - 1.0).abs())
            .collect();
        // First-order decay: halving at each doubling.
        assert!(errs[1] < 0.6 * errs[0] && errs[2] < 0.6 * errs[1], "{errs:?}");
    }

    #[test]
    fn pres_identity_small_case() {
        let p = w(&[1, 2]);
        let f = PolySymbol::parse("s(1)^2*s(2)^2", 2).unwrap();
        let c = pres_identity(&MultiIndex(vec![4, 3]), &f, &p, 10, 1e-10).unwrap();
        assert!(c.rel_err < 1e-8, "{c:?}");
    }

    #[test]
    fn angular_average_separates_monomials() {
        let a = MultiIndex(vec![4, 3]);
        let b = MultiIndex(vec![2, 4]);
        assert_eq!(residual_angle_average(&a, &b), Complex64::new(0.0, 0.0));
        assert_eq!(residual_angle_average(&a, &a), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn monomial_mass_is_normalised() {
        let p = w(&[1, 2]);
        for alpha in [vec![6u32, 2], vec![0, 5], vec![10, 0]] {
            let k = p.pair(&alpha);
            let m = monomial_mass(&MultiIndex(alpha.clone()), &p, k, None, 1e-10).unwrap();
            assert!((m - 1.0).abs() < 1e-8, "{alpha:?}: {m}");
        }
    }

    #[test]
    fn concentration_bound_examples() {
        let c = concentration_bound(&w(&[1, 2]), 0.3);
        assert!((c - (0.6 + (-0.6f64).exp() - 1.0)).abs() < 1e-15);
        assert!((concentration_bound(&w(&[1]), 0.3) - c).abs() < 1e-15);
    }

    #[test]
    fn concentration_on_the_line() {
        let one = w(&[1]);
        let k = 40;
        let basis = enumerate_basis(&one, k);
        let r = concentration_ratio(&random_state(1, 3), &basis, 0.3).unwrap();
        let bound = (-(k as f64) * concentration_bound(&one, 0.3)).exp();
        assert!(r <= bound, "{r} vs {bound}");
        assert!(r * 10.0 * k as f64 >= bound);
    }

    #[test]
    fn concentration_decreases_with_epsilon() {
        let basis = enumerate_basis(&w(&[1, 2]), 16);
        let psi = random_state(basis.dim(), 11);
        let a = concentration_ratio(&psi, &basis, 0.1).unwrap();
        let b = concentration_ratio(&psi, &basis, 0.3).unwrap();
        let c = concentration_ratio(&psi, &basis, 0.6).unwrap();
        assert!(a > b && b > c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn control_norm_identity(a1 in 0u32..20, t in -2.0f64..2.0, u in 0.01f64..0.99, ang in 0.0f64..6.0) {
            let p = w(&[1, 2]);
            let k = 20u64;
            let a2 = (k as u32 - a1) / 2;
            prop_assume!(a1 + 2 * a2 == k as u32);
            let y = ReducedPoint::new(vec![u, (1.0 - u) / 2.0], vec![ang], &p).unwrap();
            prop_assert!(control_norm_check(&MultiIndex(vec![a1, a2]), &p, k, t, &y).unwrap() <= 1e-10);
        }

        #[test]
        fn phi_is_positive_off_zero(t in -3.0f64..3.0, u in 0.0f64..1.0) {
            prop_assume!(t.abs() > 1e-3);
            let p = w(&[2, 3]);
            let y = ReducedPoint::from_actions(vec![u / 2.0, (1.0 - u) / 3.0], &p).unwrap();
            prop_assert!(phi(t, &y, &p) > 0.0);
        }
    }
}
