//! Composite Gauss–Legendre quadrature with global panel doubling, and the
//! iterated integral over the weighted simplex `Σ p_i s_i = 1`.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

const ORDER: usize = 16;
const START_PANELS: usize = 2;
/// Hard cap on the number of nodes of one one-dimensional rule.
pub const MAX_NODES: usize = 1 << 20;
const PARALLEL_NODES: usize = 512;
/// `∫|f|` below this is accepted as converged: such values sit near the
/// subnormal range, where relative accuracy is unattainable, and callers
/// scale their integrands so that they are negligible.
const NEGLIGIBLE: f64 = 1e-250;

fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let gl = GaussLegendre::new(NonZeroUsize::new(ORDER).expect("nonzero order"));
        let mut pairs = gl.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs
    })
}

/// Value of a converged one-dimensional rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// `∫ |f|`, used as the scale of the convergence test.
    pub magnitude: f64,
    pub nodes: usize,
    pub rel_change: f64,
}

fn composite<F>(f: &F, a: f64, b: f64, panels: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    let h = (b - a) / panels as f64;
    let panel = |p: usize| -> (f64, f64) {
        let left = a + p as f64 * h;
        let mut s = 0.0;
        let mut m = 0.0;
        for &(x, w) in rule() {
            let v = f(left + 0.5 * h * (x + 1.0));
            s += w * v;
            m += w * v.abs();
        }
        (0.5 * h * s, 0.5 * h * m)
    };
    let parts: Vec<(f64, f64)> = if panels * ORDER >= PARALLEL_NODES {
        (0..panels).into_par_iter().map(panel).collect()
    } else {
        (0..panels).map(panel).collect()
    };
    // Fixed pairwise tree: the result does not depend on the thread schedule.
    let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let mags: Vec<f64> = parts.iter().map(|p| p.1).collect();
    (pairwise_sum(&values), pairwise_sum(&mags))
}

/// `∫_a^b f`, doubling the number of panels until the relative change
/// (against `∫|f|`) drops below `tol`.
pub fn integrate<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<Quadrature>
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    if a == b {
        return Ok(Quadrature { value: 0.0, magnitude: 0.0, nodes: 0, rel_change: 0.0 });
    }
    let mut panels = START_PANELS;
    let (mut value, _) = composite(f, a, b, panels);
    loop {
        panels *= 2;
        let (next, magnitude) = composite(f, a, b, panels);
        let change = (next - value).abs();
        let rel_change = if magnitude > 0.0 { change / magnitude } else { 0.0 };
        if rel_change <= tol || magnitude < NEGLIGIBLE {
            return Ok(Quadrature { value: next, magnitude, nodes: panels * ORDER, rel_change });
        }
        if panels * ORDER * 2 > MAX_NODES {
            return Err(Error::QuadratureNonConvergence { estimate: next, achieved: rel_change });
        }
        value = next;
    }
}

/// `∫_{Δ'} f dσ` over `Δ' = {s ≥ 0 : Σ p_i s_i = 1}` with the Leray measure
/// `ds_{≠j} / p_j`, coordinate `j` eliminated.
pub fn integrate_simplex<F>(p: &[u32], eliminated: usize, f: &F, tol: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let n = p.len();
    if eliminated >= n {
        return Err(Error::InvalidArgument(format!("eliminated coordinate {eliminated} out of range")));
    }
    let free: Vec<usize> = (0..n).filter(|&i| i != eliminated).collect();
    let mut point = vec![0.0; n];
    let v = simplex_rec(p, eliminated, &free, 0, 1.0, &mut point, f, tol)?;
    Ok(v / p[eliminated] as f64)
}

#[allow(clippy::too_many_arguments)]
fn simplex_rec<F>(
    p: &[u32],
    eliminated: usize,
    free: &[usize],
    depth: usize,
    budget: f64,
    point: &mut Vec<f64>,
    f: &F,
    tol: f64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if depth == free.len() {
        point[eliminated] = budget.max(0.0) / p[eliminated] as f64;
        return Ok(f(point));
    }
    let i = free[depth];
    let upper = budget.max(0.0) / p[i] as f64;
    let base = point.clone();
    // Inner failures are recorded and surfaced after the outer rule returns.
    let failure: std::sync::Mutex<Option<Error>> = std::sync::Mutex::new(None);
    let inner = |x: f64| -> f64 {
        let mut pt = base.clone();
        pt[i] = x;
        match simplex_rec(p, eliminated, free, depth + 1, budget - p[i] as f64 * x, &mut pt, f, tol) {
            Ok(v) => v,
            Err(e) => {
                failure.lock().expect("failure lock").get_or_insert(e);
                0.0
            }
        }
    };
    let q = integrate(&inner, 0.0, upper, tol)?;
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    *point = base;
    Ok(q.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = integrate(&|x: f64| x.powi(7) - 3.0 * x * x, 0.0, 2.0, 1e-14).unwrap();
        assert!((q.value - (32.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn peaked_integrand() {
        // ∫_0^∞ x^40 e^{-x} dx = 40!, truncated far in the tail.
        let lf = crate::numeric::ln_factorial(40);
        let q = integrate(&|x: f64| (40.0 * x.ln() - x - lf).exp(), 0.0, 200.0, 1e-12).unwrap();
        assert!((q.value - 1.0).abs() < 1e-11, "{}", q.value);
    }

    #[test]
    fn non_convergence_is_reported() {
        let r = integrate(&|x: f64| (1.0 / x).sin(), 1e-9, 1.0, 1e-15);
        assert!(matches!(r, Err(Error::QuadratureNonConvergence { .. })));
    }

    #[test]
    fn simplex_volumes() {
        let one = |_: &[f64]| 1.0;
        assert!((integrate_simplex(&[1, 1], 1, &one, 1e-12).unwrap() - 1.0).abs() < 1e-13);
        assert!((integrate_simplex(&[1, 2], 1, &one, 1e-12).unwrap() - 0.5).abs() < 1e-13);
        assert!((integrate_simplex(&[1, 2], 0, &one, 1e-12).unwrap() - 0.5).abs() < 1e-13);
        // Leray volume of {s_1 + 2 s_2 + 3 s_3 = 1}: 1 / (2! · 6).
        let v = integrate_simplex(&[1, 2, 3], 2, &one, 1e-12).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-13);
        assert!((integrate_simplex(&[3], 0, &one, 1e-12).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn simplex_moment() {
        let f = |s: &[f64]| s[0] * s[1] * s[1];
        // 1! 2! / (4! · 1^2 · 2^3)
        let expected = 2.0 / (24.0 * 8.0);
        for j in 0..2 {
            let v = integrate_simplex(&[1, 2], j, &f, 1e-13).unwrap();
            assert!((v - expected).abs() < 1e-14);
        }
    }
}
