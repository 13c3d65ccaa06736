//! Weighted multi-indices, exact Bargmann inner products and the monomial
//! basis of the joint eigenspace `H_{1,k}`.
//!
//! Measure convention: the Bargmann norm is taken against
//! `e^{-k|z|^2} Π ds_i dθ_i` with action coordinates `s_i = |z_i|^2`, so that
//! `‖z^α‖² = Π_i 2π α_i! / k^{α_i + 1}`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gcd, lcm, ln_factorial};

/// Coprime positive weights `p = (p_1, …, p_n)` of the circle action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightVector(Vec<u32>);

impl WeightVector {
    pub fn new(p: Vec<u32>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidWeights("at least one weight is required".into()));
        }
        if let Some(i) = p.iter().position(|&w| w == 0) {
            return Err(Error::InvalidWeights(format!("weight {} is zero", i + 1)));
        }
        let g = p.iter().fold(0u64, |acc, &w| gcd(acc, w as u64));
        if g != 1 {
            return Err(Error::InvalidWeights(format!(
                "weights {p:?} have common divisor {g}; the action must be effective"
            )));
        }
        Ok(Self(p))
    }

    /// Parses a comma separated list such as `"2,4,3"`.
    pub fn parse(text: &str) -> Result<Self> {
        let p = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::InvalidWeights(format!("`{}` is not a positive integer", t.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(p)
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    /// `<p, α>` for a (possibly negative) integer vector.
    pub fn pair_i64(&self, v: &[i64]) -> i64 {
        self.0.iter().zip(v).map(|(&p, &a)| p as i64 * a).sum()
    }

    pub fn pair(&self, alpha: &[u32]) -> u64 {
        self.0.iter().zip(alpha).map(|(&p, &a)| p as u64 * a as u64).sum()
    }

    pub fn lcm(&self) -> u64 {
        self.0.iter().fold(1u64, |acc, &w| lcm(acc, w as u64))
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|&w| w == 1)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), found: len });
        }
        Ok(())
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Exponent tuple `α ∈ N^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&a| a as u64).sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// `ln ‖z^α‖²` without any validation.
pub(crate) fn ln_norm_sq_raw(alpha: &[u32], k: u64) -> f64 {
    let n = alpha.len() as f64;
    let total: u64 = alpha.iter().map(|&a| a as u64).sum();
    let facts: f64 = alpha.iter().map(|&a| ln_factorial(a as u64)).sum();
    n * (2.0 * PI).ln() + facts - (total as f64 + n) * (k as f64).ln()
}

/// Exact squared Bargmann norm `‖z^α‖² = rational · (2π)^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactNormSq {
    pub rational: BigRational,
    pub two_pi_power: usize,
}

/// Monomial basis `{z^α : <p,α> = k}` of `H_{1,k}`, in lexicographically
/// descending order, together with the squared Bargmann norms.
#[derive(Debug, Clone)]
pub struct EigenspaceBasis {
    weights: WeightVector,
    k: u64,
    indices: Vec<MultiIndex>,
    ln_norms_sq: Vec<f64>,
    lookup: HashMap<Vec<u32>, usize>,
}

impl EigenspaceBasis {
    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// `ln ‖z^α‖²` for every basis element.
    pub fn ln_norms_sq(&self) -> &[f64] {
        &self.ln_norms_sq
    }

    /// Squared norms in double precision; these underflow once `k` reaches a
    /// few hundred, use [`Self::ln_norms_sq`] there.
    pub fn norms_sq(&self) -> Vec<f64> {
        self.ln_norms_sq.iter().map(|l| l.exp()).collect()
    }

    /// Copy of the basis with the stored norm of element `j` multiplied by
    /// `1 + rel`. Used for fault injection in the verification suite.
    pub fn with_perturbed_norm(&self, j: usize, rel: f64) -> Self {
        let mut out = self.clone();
        out.ln_norms_sq[j] += (1.0 + rel).ln();
        out
    }
}

fn enumerate_rec(p: &[u32], rest: u64, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    let i = prefix.len();
    if i + 1 == p.len() {
        if rest.is_multiple_of(p[i] as u64) {
            prefix.push((rest / p[i] as u64) as u32);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
        }
        return;
    }
    let max = rest / p[i] as u64;
    for a in (0..=max).rev() {
        prefix.push(a as u32);
        enumerate_rec(p, rest - a * p[i] as u64, prefix, out);
        prefix.pop();
    }
}

/// All `α` with `<p, α> = k`, lexicographically descending, with their norms.
pub fn enumerate_basis(weights: &WeightVector, k: u64) -> EigenspaceBasis {
    let mut indices = Vec::new();
    enumerate_rec(weights.as_slice(), k, &mut Vec::with_capacity(weights.n()), &mut indices);
    let ln_norms_sq = indices.iter().map(|a| ln_norm_sq_raw(a.as_slice(), k)).collect();
    let lookup = indices.iter().enumerate().map(|(j, a)| (a.0.clone(), j)).collect();
    EigenspaceBasis { weights: weights.clone(), k, indices, ln_norms_sq, lookup }
}

/// `dim H_{1,k}`: number of solutions of `<p, α> = k`, by the coin-change
/// recursion in `O(n k)`.
pub fn count_dim(weights: &WeightVector, k: u64) -> u128 {
    let k = k as usize;
    let mut ways = vec![0u128; k + 1];
    ways[0] = 1;
    for &p in weights.as_slice() {
        let p = p as usize;
        for m in p..=k {
            ways[m] += ways[m - p];
        }
    }
    ways[k]
}

/// `‖z^α‖² = Π_i 2π α_i! / k^{α_i+1}` in double precision.
pub fn bargmann_norm_sq(alpha: &MultiIndex, weights: &WeightVector, k: u64) -> Result<f64> {
    Ok(ln_bargmann_norm_sq(alpha, weights, k)?.exp())
}

pub fn ln_bargmann_norm_sq(alpha: &MultiIndex, weights: &WeightVector, k: u64) -> Result<f64> {
    weights.check_len(alpha.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(ln_norm_sq_raw(alpha.as_slice(), k))
}

/// Exact rational form of `‖z^α‖² / (2π)^n`.
pub fn exact_norm_sq(alpha: &MultiIndex, k: u64) -> ExactNormSq {
    let mut num = BigInt::from(1u32);
    for &a in alpha.as_slice() {
        for j in 2..=a as u64 {
            num *= j;
        }
    }
    let den = BigInt::from(k).pow((alpha.total() + alpha.len() as u64) as u32);
    ExactNormSq { rational: BigRational::new(num, den), two_pi_power: alpha.len() }
}

/// Eigenvalue `<p, α>/k` of the quantum oscillator on `z^α`.
pub fn oscillator_eigenvalue(alpha: &MultiIndex, weights: &WeightVector, k: u64) -> Result<f64> {
    weights.check_len(alpha.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(weights.pair(alpha.as_slice()) as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn w(p: &[u32]) -> WeightVector {
        WeightVector::new(p.to_vec()).unwrap()
    }

    fn brute_force(p: &[u32], k: u64) -> Vec<Vec<u32>> {
        // Exhaustive scan of the box α_i ≤ k / p_i.
        let bounds: Vec<u64> = p.iter().map(|&pi| k / pi as u64).collect();
        let mut out = Vec::new();
        let mut cur = vec![0u64; p.len()];
        loop {
            let s: u64 = cur.iter().zip(p).map(|(a, &pi)| a * pi as u64).sum();
            if s == k {
                out.push(cur.iter().map(|&a| a as u32).collect());
            }
            let mut i = p.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < bounds[i] {
                    cur[i] += 1;
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    #[test]
    fn weights_validation() {
        assert!(WeightVector::new(vec![]).is_err());
        assert!(WeightVector::new(vec![2, 4]).is_err());
        assert!(WeightVector::new(vec![0, 1]).is_err());
        assert!(WeightVector::new(vec![2, 4, 3]).is_ok());
        assert_eq!(WeightVector::parse("2, 4,3").unwrap().as_slice(), &[2, 4, 3]);
        assert!(WeightVector::parse("1,x").is_err());
    }

    #[test]
    fn enumerate_examples() {
        let b = enumerate_basis(&w(&[1, 1]), 2);
        let idx: Vec<Vec<u32>> = b.indices().iter().map(|a| a.0.clone()).collect();
        assert_eq!(idx, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);

        let b = enumerate_basis(&w(&[2, 3]), 6);
        let idx: Vec<Vec<u32>> = b.indices().iter().map(|a| a.0.clone()).collect();
        assert_eq!(idx, vec![vec![3, 0], vec![0, 2]]);
        assert_eq!(idx, {
            let mut bf = brute_force(&[2, 3], 6);
            bf.reverse();
            bf
        });

        assert_eq!(enumerate_basis(&w(&[2, 4, 3]), 1).dim(), 0);
        assert!(brute_force(&[2, 4, 3], 1).is_empty());
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_dim(&w(&[1, 1, 1]), 5), 21);
        assert_eq!(count_dim(&w(&[1, 2]), 7), 4);
        assert_eq!(count_dim(&w(&[2, 2, 3]), 12) as usize, brute_force(&[2, 2, 3], 12).len());
        assert_eq!(count_dim(&w(&[1, 1]), 0), 1);
    }

    #[test]
    fn count_matches_enumeration_up_to_60() {
        for p in [vec![1u32, 1], vec![1, 2], vec![2, 3], vec![2, 4, 3], vec![1, 2, 3, 5]] {
            let wv = w(&p);
            for k in 0..=60u64 {
                assert_eq!(count_dim(&wv, k) as usize, enumerate_basis(&wv, k).dim(), "p={p:?} k={k}");
            }
        }
    }

    #[test]
    fn periodic_monotonicity() {
        for p in [vec![1u32, 2], vec![2, 3], vec![2, 4, 3]] {
            let wv = w(&p);
            let l = wv.lcm();
            for k in 0..=80u64 {
                assert!(count_dim(&wv, k + l) >= count_dim(&wv, k));
            }
        }
    }

    #[test]
    fn norm_examples() {
        let one = w(&[1]);
        let v = bargmann_norm_sq(&MultiIndex(vec![0]), &one, 1).unwrap();
        assert!((v - 2.0 * PI).abs() < 1e-14);
        let v = bargmann_norm_sq(&MultiIndex(vec![1]), &one, 1).unwrap();
        assert!((v - 2.0 * PI).abs() < 1e-14);
        let v = bargmann_norm_sq(&MultiIndex(vec![2, 0]), &w(&[1, 1]), 2).unwrap();
        assert!((v - PI * PI / 2.0).abs() < 1e-13);
        assert!(bargmann_norm_sq(&MultiIndex(vec![2]), &w(&[1, 1]), 2).is_err());
    }

    #[test]
    fn exact_norm_matches_double() {
        let alpha = MultiIndex(vec![5, 3, 2]);
        let e = exact_norm_sq(&alpha, 9);
        let v = e.rational.to_f64().unwrap() * (2.0 * PI).powi(e.two_pi_power as i32);
        let d = bargmann_norm_sq(&alpha, &w(&[1, 2, 1]), 9).unwrap();
        assert!((v / d - 1.0).abs() < 1e-13);
    }

    #[test]
    fn eigenvalue_examples() {
        let p = w(&[2, 3]);
        assert_eq!(oscillator_eigenvalue(&MultiIndex(vec![1, 1]), &p, 1).unwrap(), 5.0);
        assert_eq!(oscillator_eigenvalue(&MultiIndex(vec![0, 0]), &p, 4).unwrap(), 0.0);
        let b = enumerate_basis(&w(&[1, 2, 3]), 11);
        for a in b.indices() {
            assert_eq!(oscillator_eigenvalue(a, b.weights(), 11).unwrap(), 1.0);
        }
    }

    proptest! {
        #[test]
        fn norm_is_permutation_equivariant(a in 0u32..12, b in 0u32..12, c in 0u32..12, k in 1u64..40) {
            let p = w(&[1, 2, 3]);
            let q = w(&[3, 1, 2]);
            let x = ln_bargmann_norm_sq(&MultiIndex(vec![a, b, c]), &p, k).unwrap();
            let y = ln_bargmann_norm_sq(&MultiIndex(vec![c, a, b]), &q, k).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn norm_scaling_law(a in 0u32..15, b in 0u32..15, k in 1u64..50, k2 in 1u64..50) {
            // norm_sq(α, k) · k^{|α|+n} does not depend on k.
            let p = w(&[1, 1]);
            let alpha = MultiIndex(vec![a, b]);
            let e = (alpha.total() + 2) as f64;
            let x = ln_bargmann_norm_sq(&alpha, &p, k).unwrap() + e * (k as f64).ln();
            let y = ln_bargmann_norm_sq(&alpha, &p, k2).unwrap() + e * (k2 as f64).ln();
            prop_assert!((x - y).abs() < 1e-11);
            prop_assert!(x.is_finite());
        }
    }
}
