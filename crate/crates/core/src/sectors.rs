//! Twisted sectors of the weighted projective quotient and the
//! quasi-polynomial spectral model
//!
//! ```text
//! Σ_i f(λ_i(k)) ~ Σ_ζ (k/2π)^{n(ζ)} ζ^{−k} Σ_l k^{−l} I_l(ζ).
//! ```
//!
//! Leading coefficients are computed exactly from Leray moments; the
//! subleading ones are fitted by least squares.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::WeightVector;
use crate::numeric::{gcd, lcm};
use crate::reduction::ln_weighted_moment;
use crate::symbols::{PolySymbol, RealPoly};

/// `ζ = e^{2πi j/q}` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RootOfUnity {
    pub j: u64,
    pub q: u64,
}

impl RootOfUnity {
    pub fn new(j: u64, q: u64) -> Self {
        assert!(q > 0, "order must be positive");
        let j = j % q;
        let g = gcd(j, q);
        if j == 0 {
            return Self { j: 0, q: 1 };
        }
        Self { j: j / g, q: q / g }
    }

    pub fn one() -> Self {
        Self { j: 0, q: 1 }
    }

    pub fn is_one(&self) -> bool {
        self.j == 0
    }

    /// Real roots are `±1`.
    pub fn is_real(&self) -> bool {
        self.q <= 2
    }

    /// `ζ^m` by modular arithmetic on the exponent.
    pub fn pow(&self, m: i64) -> Self {
        let q = self.q as i128;
        let e = ((self.j as i128 * m as i128) % q + q) % q;
        Self::new(e as u64, self.q)
    }

    pub fn conj(&self) -> Self {
        self.pow(-1)
    }

    pub fn to_complex(&self) -> Complex64 {
        match (self.j, self.q) {
            (0, _) => Complex64::new(1.0, 0.0),
            (1, 2) => Complex64::new(-1.0, 0.0),
            (1, 4) => Complex64::new(0.0, 1.0),
            (3, 4) => Complex64::new(0.0, -1.0),
            _ => Complex64::from_polar(1.0, 2.0 * PI * self.j as f64 / self.q as f64),
        }
    }
}

impl std::fmt::Display for RootOfUnity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.j, self.q) {
            (0, _) => write!(f, "1"),
            (1, 2) => write!(f, "-1"),
            _ => write!(f, "exp(2πi·{}/{})", self.j, self.q),
        }
    }
}

/// One element `ζ ∈ G` with its fixed-point data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwistedSector {
    pub zeta: RootOfUnity,
    /// `I(ζ) = {i : ζ^{p_i} = 1}` (0-based).
    pub support: Vec<usize>,
    /// `m(ζ) = gcd{p_i : i ∈ I(ζ)}`.
    pub m: u64,
    /// `n(ζ) = |I(ζ)| − 1`.
    pub dim_n: usize,
    /// `(i, ζ^{p_i})` for `i ∉ I(ζ)`; never 1.
    pub b: Vec<(usize, RootOfUnity)>,
    /// Character on the fibre, `c(ζ) = ζ`.
    pub c: RootOfUnity,
}

impl TwistedSector {
    pub fn new(zeta: RootOfUnity, weights: &WeightVector) -> Result<Self> {
        let p = weights.as_slice();
        let support: Vec<usize> = (0..p.len()).filter(|&i| zeta.pow(p[i] as i64).is_one()).collect();
        if support.is_empty() {
            return Err(Error::InvalidArgument(format!("{zeta} fixes no point of the level set")));
        }
        let m = support.iter().fold(0u64, |acc, &i| gcd(acc, p[i] as u64));
        let b = (0..p.len()).filter(|i| !support.contains(i)).map(|i| (i, zeta.pow(p[i] as i64))).collect();
        Ok(Self { zeta, dim_n: support.len() - 1, support, m, b, c: zeta })
    }

    /// `Π_{i ∉ I} (1 − ζ^{p_i})^{−1}`.
    pub fn normal_factor(&self) -> Complex64 {
        self.b.iter().fold(Complex64::new(1.0, 0.0), |acc, (_, b)| acc / (Complex64::new(1.0, 0.0) - b.to_complex()))
    }

    /// Weights restricted to the support.
    pub fn support_weights(&self, weights: &WeightVector) -> Vec<u32> {
        self.support.iter().map(|&i| weights.get(i)).collect()
    }
}

/// All gcds of nonempty subfamilies of `p`.
pub fn divisor_supports(weights: &WeightVector) -> BTreeSet<u64> {
    let mut set: BTreeSet<u64> = BTreeSet::new();
    for &p in weights.as_slice() {
        let mut next: BTreeSet<u64> = set.iter().map(|&g| gcd(g, p as u64)).collect();
        next.insert(p as u64);
        set.extend(next);
    }
    set
}

/// The set `G = {ζ : ζ^{p_i} = 1 for some i}` as sectors, ordered by
/// `(order, numerator)`; `ζ = 1` comes first.
pub fn enumerate_sectors(weights: &WeightVector) -> Vec<TwistedSector> {
    let mut orders: BTreeSet<u64> = BTreeSet::new();
    for &p in weights.as_slice() {
        for q in 1..=p as u64 {
            if (p as u64).is_multiple_of(q) {
                orders.insert(q);
            }
        }
    }
    let mut out = Vec::new();
    for q in orders {
        for j in 0..q {
            if gcd(j, q) == 1 || q == 1 {
                out.push(TwistedSector::new(RootOfUnity::new(j, q), weights).expect("root of some p_i"));
            }
        }
    }
    out
}

/// Sectors grouped by their multiplicity `m(ζ)`, which runs over
/// [`divisor_supports`].
pub fn sectors_by_support(weights: &WeightVector) -> Vec<(u64, Vec<RootOfUnity>)> {
    let sectors = enumerate_sectors(weights);
    divisor_supports(weights)
        .into_iter()
        .map(|d| (d, sectors.iter().filter(|s| s.m == d).map(|s| s.zeta).collect()))
        .collect()
}

/// `I_0(ζ) = (1/m) Π_{i∉I} (1 − ζ^{p_i})^{−1} ∫_{M_ζ} f(g_0)`.
///
/// `M_ζ` is the quotient of `{Σ_{i∈I} p_i |z_i|² = 1}` by the circle, on
/// which the circle orbits have length `2π/m`; its measure is
/// `m (2π)^{n(ζ)}` times the Leray measure of the support simplex. Only the
/// angle-free part of `f(g_0)` survives the torus average, and monomials
/// involving a coordinate outside the support vanish on `M_ζ`.
pub fn leading_coefficient(sector: &TwistedSector, g0: &PolySymbol, f: &RealPoly, weights: &WeightVector) -> Result<Complex64> {
    if g0.n() != weights.n() {
        return Err(Error::DimensionMismatch { expected: weights.n(), found: g0.n() });
    }
    let p_support = sector.support_weights(weights);
    let composed = f.compose(&g0.order(0));
    let mut integral = Complex64::new(0.0, 0.0);
    for (key, c) in composed.terms() {
        if !key.is_diagonal() || key.l != 0 {
            continue;
        }
        if (0..weights.n()).any(|i| key.gamma[i] > 0 && !sector.support.contains(&i)) {
            continue;
        }
        let a: Vec<u32> = sector.support.iter().map(|&i| key.gamma[i]).collect();
        integral += *c * ln_weighted_moment(&a, &p_support)?.exp();
    }
    let volume_factor = sector.m as f64 * (2.0 * PI).powi(sector.dim_n as i32);
    Ok(sector.normal_factor() * integral * volume_factor / sector.m as f64)
}

/// Per-sector coefficient lists `I_l(ζ)`.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticModel {
    pub weights: WeightVector,
    pub sectors: Vec<TwistedSector>,
    pub coeffs: Vec<Vec<Complex64>>,
}

impl AsymptoticModel {
    pub fn new(weights: WeightVector, sectors: Vec<TwistedSector>) -> Self {
        let coeffs = vec![Vec::new(); sectors.len()];
        Self { weights, sectors, coeffs }
    }

    /// Model for `f ≡ 1` with the leading coefficients computed.
    pub fn dimension_model(weights: &WeightVector) -> Result<Self> {
        let mut model = Self::new(weights.clone(), enumerate_sectors(weights));
        let one = PolySymbol::one(weights.n());
        for idx in 0..model.sectors.len() {
            let c = leading_coefficient(&model.sectors[idx], &one, &RealPoly::one(), weights)?;
            model.set_coefficient(idx, 0, c);
        }
        Ok(model)
    }

    pub fn set_coefficient(&mut self, sector: usize, l: usize, value: Complex64) {
        let list = &mut self.coeffs[sector];
        if list.len() <= l {
            list.resize(l + 1, Complex64::new(0.0, 0.0));
        }
        list[l] = value;
    }

    pub fn coefficient(&self, sector: usize, l: usize) -> Complex64 {
        self.coeffs[sector].get(l).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn sector_index(&self, zeta: RootOfUnity) -> Option<usize> {
        self.sectors.iter().position(|s| s.zeta == zeta)
    }

    /// `n(1)`, the dimension of the reduced space.
    pub fn top_dim(&self) -> usize {
        self.sectors.iter().map(|s| s.dim_n).max().unwrap_or(0)
    }

    /// Period of the oscillating factors `ζ^{−k}`.
    pub fn period(&self) -> u64 {
        self.sectors.iter().fold(1, |acc, s| lcm(acc, s.zeta.q))
    }

    /// Orders `l ≥ 1` fitted for a sector at total order `L`: those with
    /// `n(ζ) − l ≥ n(1) − L`.
    pub fn fitted_orders(&self, sector: usize, order: usize) -> std::ops::RangeInclusive<usize> {
        let shift = self.top_dim() - self.sectors[sector].dim_n;
        1..=order.saturating_sub(shift)
    }
}

fn sector_term(sector: &TwistedSector, k: u64, value: Complex64) -> Complex64 {
    let scale = (k as f64 / (2.0 * PI)).powi(sector.dim_n as i32);
    sector.zeta.pow(-(k as i64)).to_complex() * value * scale
}

/// `Σ_ζ (k/2π)^{n(ζ)} ζ^{−k} Σ_l k^{−l} I_l(ζ)`, real part; the imaginary
/// part must cancel between conjugate sectors.
pub fn model_eval(model: &AsymptoticModel, k: u64) -> Result<f64> {
    let mut total = Complex64::new(0.0, 0.0);
    let mut magnitude = 0.0;
    for (sector, coeffs) in model.sectors.iter().zip(&model.coeffs) {
        for (l, c) in coeffs.iter().enumerate() {
            if *c == Complex64::new(0.0, 0.0) {
                continue;
            }
            if k == 0 && (l > 0 || sector.dim_n > 0) {
                if l > 0 {
                    return Err(Error::InvalidArgument("negative powers of k need k ≥ 1".into()));
                }
                continue;
            }
            let term = sector_term(sector, k, *c) * (k as f64).powi(-(l as i32));
            magnitude += term.norm();
            total += term;
        }
    }
    if total.im.abs() > 1e-9 * magnitude.max(1.0) {
        return Err(Error::UnpairedSector { k, imag: total.im });
    }
    Ok(total.re)
}

/// Residual diagnostics of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub order: usize,
    pub unknowns: usize,
    pub max_in_sample: f64,
    pub max_out_of_sample: f64,
    /// Max residual over the upper half of the combined k-range.
    pub top_half: f64,
    pub residuals: Vec<(u64, f64)>,
}

/// One real unknown of the least-squares system.
#[derive(Debug, Clone, Copy)]
struct Unknown {
    sector: usize,
    l: usize,
    imaginary: bool,
}

fn unknowns(model: &AsymptoticModel, order: usize) -> Vec<Unknown> {
    let mut out = Vec::new();
    for (idx, s) in model.sectors.iter().enumerate() {
        // Conjugate pairs are fitted once, on the representative j ≤ q − j.
        if !s.zeta.is_real() && s.zeta.j > s.zeta.q - s.zeta.j {
            continue;
        }
        for l in model.fitted_orders(idx, order) {
            out.push(Unknown { sector: idx, l, imaginary: false });
            if !s.zeta.is_real() {
                out.push(Unknown { sector: idx, l, imaginary: true });
            }
        }
    }
    out
}

fn column(model: &AsymptoticModel, u: &Unknown, k: u64) -> f64 {
    let s = &model.sectors[u.sector];
    let unit = if u.imaginary { Complex64::new(0.0, 1.0) } else { Complex64::new(1.0, 0.0) };
    let term = sector_term(s, k, unit) * (k as f64).powi(-(u.l as i32));
    if s.zeta.is_real() {
        term.re
    } else {
        2.0 * term.re
    }
}

/// Least-squares fit of the subleading coefficients on `fit`, holding every
/// `I_0` fixed; residuals are reported on `fit` and on the held-out `test`.
pub fn fit_subleading(
    fit: &[(u64, f64)],
    test: &[(u64, f64)],
    model: &AsymptoticModel,
    order: usize,
) -> Result<(AsymptoticModel, FitReport)> {
    let unknowns = unknowns(model, order);
    let mut fitted = model.clone();
    for list in fitted.coeffs.iter_mut() {
        list.truncate(1);
    }
    if !unknowns.is_empty() {
        if fit.iter().any(|&(k, _)| k == 0) {
            return Err(Error::InvalidArgument("fitting negative powers of k needs k ≥ 1".into()));
        }
        if fit.len() < 3 * unknowns.len() {
            return Err(Error::RankDeficient(format!(
                "{} data points for {} unknowns; at least three per unknown are required",
                fit.len(),
                unknowns.len()
            )));
        }
        // Only sectors with fitted unknowns can alias one another.
        let period = unknowns.iter().fold(1, |acc, u| lcm(acc, model.sectors[u.sector].zeta.q));
        let residues: BTreeSet<u64> = fit.iter().map(|&(k, _)| k % period).collect();
        if (residues.len() as u64) < period {
            return Err(Error::RankDeficient(format!(
                "the fitted k values cover {} of {} residues mod {}",
                residues.len(),
                period,
                period
            )));
        }
        let rows = fit.len();
        let cols = unknowns.len();
        let mut a = DMatrix::<f64>::zeros(rows, cols);
        let mut rhs = DVector::<f64>::zeros(rows);
        for (r, &(k, y)) in fit.iter().enumerate() {
            rhs[r] = y - model_eval(&fitted, k)?;
            for (c, u) in unknowns.iter().enumerate() {
                a[(r, c)] = column(model, u, k);
            }
        }
        // Column scaling keeps the k^{-l} columns comparable.
        let scales: Vec<f64> = (0..cols).map(|c| a.column(c).norm().max(f64::MIN_POSITIVE)).collect();
        for (c, s) in scales.iter().enumerate() {
            a.column_mut(c).scale_mut(1.0 / s);
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-12 * smax {
            return Err(Error::RankDeficient(format!("condition number {:.3e}", smax / smin)));
        }
        let x = svd.solve(&rhs, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
        for (c, u) in unknowns.iter().enumerate() {
            let v = x[c] / scales[c];
            let mut cur = fitted.coefficient(u.sector, u.l);
            if u.imaginary {
                cur.im = v;
            } else {
                cur.re = v;
            }
            fitted.set_coefficient(u.sector, u.l, cur);
        }
        // Mirror onto the conjugate sectors.
        for idx in 0..fitted.sectors.len() {
            let z = fitted.sectors[idx].zeta;
            if z.is_real() || z.j <= z.q - z.j {
                continue;
            }
            if let Some(rep) = fitted.sector_index(z.conj()) {
                for l in 1..fitted.coeffs[rep].len() {
                    let c = fitted.coeffs[rep][l].conj();
                    fitted.set_coefficient(idx, l, c);
                }
            }
        }
    }
    let resid = |data: &[(u64, f64)]| -> Result<Vec<(u64, f64)>> {
        data.iter().map(|&(k, y)| Ok((k, y - model_eval(&fitted, k)?))).collect()
    };
    let r_fit = resid(fit)?;
    let r_test = resid(test)?;
    let max_abs = |r: &[(u64, f64)]| r.iter().map(|x| x.1.abs()).fold(0.0, f64::max);
    let mut all: Vec<(u64, f64)> = r_fit.iter().chain(&r_test).copied().collect();
    all.sort_by_key(|x| x.0);
    let (lo, hi) = (all.first().map_or(0, |x| x.0), all.last().map_or(0, |x| x.0));
    let mid = (lo + hi) as f64 / 2.0;
    let top_half = all.iter().filter(|x| x.0 as f64 >= mid).map(|x| x.1.abs()).fold(0.0, f64::max);
    let report = FitReport {
        order,
        unknowns: unknowns.len(),
        max_in_sample: max_abs(&r_fit),
        max_out_of_sample: max_abs(&r_test),
        top_half,
        residuals: all,
    };
    Ok((fitted, report))
}

/// Split-sample convergence check: the out-of-sample residual of an order-`L`
/// fit on a k-window and on the doubled window `[2 k_min, 2 k_max]` (same
/// step) should shrink by `2^{L + 1 − n(1)}`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayCheck {
    pub residual: f64,
    pub residual_doubled: f64,
    pub measured_order: f64,
    pub expected_order: f64,
    pub passed: bool,
}

pub fn decay_order_check<F>(exact: F, model: &AsymptoticModel, k_list: &[u64], order: usize) -> Result<DecayCheck>
where
    F: Fn(u64) -> Result<f64>,
{
    if k_list.len() < 4 {
        return Err(Error::InvalidArgument("decay check needs at least four k values".into()));
    }
    let step = k_list[1] - k_list[0];
    let lo = k_list[0];
    let hi = *k_list.last().expect("nonempty");
    let doubled: Vec<u64> = (2 * lo..=2 * hi).step_by(step as usize).collect();
    let window = |ks: &[u64]| -> Result<(f64, f64)> {
        let data: Vec<(u64, f64)> = ks.iter().map(|&k| Ok((k, exact(k)?))).collect::<Result<_>>()?;
        let split = data.len().div_ceil(2);
        let (_, report) = fit_subleading(&data[..split], &data[split..], model, order)?;
        let scale = data.iter().map(|x| x.1.abs()).fold(0.0, f64::max);
        Ok((report.max_out_of_sample, scale))
    };
    let (r1, scale) = window(k_list)?;
    let (r2, _) = window(&doubled)?;
    let expected = order as f64 + 1.0 - model.top_dim() as f64;
    let exact_fit = r1 <= 1e-9 * scale.max(1.0);
    let measured = if exact_fit { f64::INFINITY } else { (r1 / r2).log2() };
    Ok(DecayCheck {
        residual: r1,
        residual_doubled: r2,
        measured_order: measured,
        expected_order: expected,
        passed: exact_fit || measured >= expected - 0.2,
    })
}
