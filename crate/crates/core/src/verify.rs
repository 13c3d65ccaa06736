//! The acceptance suite: ten numbered checks, each against an oracle that
//! does not share code with the computation it checks. Used by the `verify`
//! command and by the `acceptance` test target.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{count_dim, enumerate_basis, EigenspaceBasis, WeightVector};
use crate::numeric::{loglog_slope, ls_slope};
use crate::polytope::{bs_lattice_points, fixed_point_values, LatticePoint, TorusAction};
use crate::reduction::{
    concentration_bound, concentration_scan, control_norm_check, pres_identity, stirling_calibration,
    trace_vstar_v_ratio, vstar_v_symbol_check, ReductionMaps, CALIBRATION,
};
use crate::sectors::{decay_order_check, fit_subleading, leading_coefficient, model_eval, AsymptoticModel, RootOfUnity};
use crate::spectra::{density_compare, hermitian_eigen, SpectrumCache};
use crate::symbols::{PolySymbol, RealPoly, ReducedPoint};
use crate::wick::{commutator_norm_scan, lambda_toeplitz, wick_identity_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Wick,
    Dimension,
    Density,
    Calibration,
    ControlNorm,
    VstarV,
    Concentration,
    Commutator,
    Eigen,
    Polytope,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::Wick,
        Block::Dimension,
        Block::Density,
        Block::Calibration,
        Block::ControlNorm,
        Block::VstarV,
        Block::Concentration,
        Block::Commutator,
        Block::Eigen,
        Block::Polytope,
    ];

    pub fn number(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).expect("listed") + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Wick => "wick",
            Block::Dimension => "dimension",
            Block::Density => "density",
            Block::Calibration => "calibration",
            Block::ControlNorm => "control-norm",
            Block::VstarV => "vstar-v",
            Block::Concentration => "concentration",
            Block::Commutator => "commutator",
            Block::Eigen => "eigen",
            Block::Polytope => "polytope",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|b| b.name()).collect();
                Error::InvalidArgument(format!("unknown check {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Deliberate corruption used to confirm that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Fault {
    /// Multiplies the stored `‖z^α‖²` of the middle basis element by `1 + rel`.
    PerturbNorm { rel: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// `None` runs every block.
    pub only: Option<Vec<Block>>,
    pub fault: Option<Fault>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { only: None, fault: None, seed: 20240607 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub criterion: usize,
    pub block: Block,
    pub passed: bool,
    /// One line per sub-check, `ok`/`FAIL` prefixed.
    pub details: Vec<String>,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} criterion {:>2} [{}] ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.block,
            self.seconds
        )?;
        for d in &self.details {
            write!(f, "\n    {d}")?;
        }
        Ok(())
    }
}

/// Collects sub-check outcomes of one block.
struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { passed: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    /// Diagnostic line that does not affect the outcome.
    fn note(&mut self, line: String) {
        self.details.push(format!("info {line}"));
    }

    fn error(&mut self, what: &str, e: &Error) {
        self.check(false, format!("{what}: {e}"));
    }

    fn runtime(&mut self, start: Instant, limit: f64) {
        let s = start.elapsed().as_secs_f64();
        self.check(s <= limit, format!("runtime {s:.2} s ≤ {limit} s"));
    }
}

pub fn run_suite(options: &VerifyOptions) -> Vec<CheckResult> {
    Block::ALL
        .iter()
        .copied()
        .filter(|b| options.only.as_ref().is_none_or(|only| only.contains(b)))
        .map(|b| run_block(b, options))
        .collect()
}

pub fn run_block(block: Block, options: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let mut out = Outcome::new();
    match block {
        Block::Wick => wick(&mut out, options, start),
        Block::Dimension => dimension(&mut out, start),
        Block::Density => density(&mut out, start),
        Block::Calibration => calibration(&mut out, start),
        Block::ControlNorm => control_norm(&mut out, options.seed),
        Block::VstarV => vstar_v(&mut out),
        Block::Concentration => concentration(&mut out, options.seed),
        Block::Commutator => commutator(&mut out),
        Block::Eigen => eigen(&mut out),
        Block::Polytope => polytope(&mut out),
    }
    CheckResult {
        criterion: block.number(),
        block,
        passed: out.passed,
        details: out.details,
        seconds: start.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------------------
// 1. Moment form against normal-ordered form.

const WICK_WEIGHTS: [&[u32]; 4] = [&[1, 1], &[1, 2], &[2, 3], &[2, 4, 3]];

/// Random symbol of degree ≤ 4, mostly circle-invariant terms (the others
/// contribute nothing on `H_{1,k}`), some carrying a `k^{-1}` factor.
pub fn random_symbol(weights: &WeightVector, rng: &mut impl Rng) -> PolySymbol {
    let n = weights.n();
    let mut f = PolySymbol::zero(n);
    let terms = rng.gen_range(1..=5);
    let mut invariant = 0;
    let mut attempts = 0;
    while invariant < terms && attempts < 10_000 {
        attempts += 1;
        let deg = rng.gen_range(0..=4u32);
        let mut gamma = vec![0u32; n];
        let mut delta = vec![0u32; n];
        for _ in 0..deg {
            let i = rng.gen_range(0..n);
            if rng.gen_bool(0.5) {
                gamma[i] += 1;
            } else {
                delta[i] += 1;
            }
        }
        let is_inv = weights.pair(&gamma) == weights.pair(&delta);
        if !is_inv && rng.gen_bool(0.8) {
            continue;
        }
        let l = if rng.gen_bool(0.2) { 1 } else { 0 };
        let c = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        f = f.add(&PolySymbol::monomial(gamma, delta, l, c));
        invariant += usize::from(is_inv);
    }
    f
}

fn random_level(weights: &WeightVector, rng: &mut impl Rng) -> u64 {
    loop {
        let k = rng.gen_range(1..=80u64);
        let d = count_dim(weights, k);
        if (1..=300).contains(&d) {
            return k;
        }
    }
}

fn apply_fault(basis: EigenspaceBasis, fault: Option<Fault>) -> EigenspaceBasis {
    match fault {
        Some(Fault::PerturbNorm { rel }) => {
            let j = basis.dim() / 2;
            basis.with_perturbed_norm(j, rel)
        }
        None => basis,
    }
}

fn wick(out: &mut Outcome, options: &VerifyOptions, start: Instant) {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    for case in 0..50 {
        let p = WeightVector::new(WICK_WEIGHTS[case % 4].to_vec()).expect("valid weights");
        let k = random_level(&p, &mut rng);
        let f = random_symbol(&p, &mut rng);
        let basis = apply_fault(enumerate_basis(&p, k), options.fault);
        match wick_identity_error(&f, &basis) {
            Ok(e) if e > worst || e.is_nan() => {
                worst = if e.is_nan() { f64::INFINITY } else { e };
                worst_case = format!("p = ({p}), k = {k}, f = {}", f.render());
            }
            Ok(_) => {}
            Err(e) => return out.error("wick identity", &e),
        }
    }
    out.check(worst <= 1e-12, format!("50 random symbols: max relative entry error {worst:.2e} ≤ 1e-12 (worst: {worst_case})"));
    out.runtime(start, 60.0);
}

// ---------------------------------------------------------------------------
// 2. Dimension quasi-polynomial.

fn counts(p: &WeightVector, ks: impl Iterator<Item = u64>) -> Vec<(u64, f64)> {
    ks.map(|k| (k, count_dim(p, k) as f64)).collect()
}

fn dimension(out: &mut Outcome, start: Instant) {
    let run = |out: &mut Outcome| -> Result<()> {
        let p = WeightVector::new(vec![1, 2])?;
        let model = AsymptoticModel::dimension_model(&p)?;
        let one = model.coefficient(model.sector_index(RootOfUnity::one()).expect("trivial sector"), 0);
        let minus = model.coefficient(model.sector_index(RootOfUnity::new(1, 2)).expect("sector -1"), 0);
        out.check((one.re - PI).abs() <= 1e-12, format!("p = (1,2): computed I_0(1) = {:.15} (π)", one.re));
        out.check((minus.re - 0.25).abs() <= 1e-12, format!("p = (1,2): computed I_0(-1) = {:.15} (1/4)", minus.re));
        let data = counts(&p, 1..=200);
        let (fitted, _) = fit_subleading(&data[..100], &data[100..], &model, 1)?;
        let i1 = fitted.coefficient(0, 1).re;
        let worst = data.iter().map(|&(k, n)| model_eval(&fitted, k).map(|m| (m - n).abs())).collect::<Result<Vec<_>>>()?;
        let worst = worst.into_iter().fold(0.0, f64::max);
        out.check(worst <= 1e-9, format!("p = (1,2): fitted I_1(1) = {i1:.12}, max |N(k) − model| over 1 ≤ k ≤ 200 = {worst:.2e} ≤ 1e-9"));

        let p = WeightVector::new(vec![2, 4, 3])?;
        let model = AsymptoticModel::dimension_model(&p)?;
        let data = counts(&p, 1..=200);
        let (_, report) = fit_subleading(&data[..100], &data[100..], &model, p.n() - 1)?;
        out.check(
            report.max_out_of_sample <= 0.5,
            format!("p = (2,4,3): fit on k ≤ 100, max out-of-sample residual on 100 < k ≤ 200 = {:.2e} ≤ 0.5", report.max_out_of_sample),
        );
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("dimension model", &e);
    }
    out.runtime(start, 30.0);
}

// ---------------------------------------------------------------------------
// 3. Spectral density of s_1 on p = (1, 2).

/// `Σ_i λ_i` for `T_{s_1}` on `H_{1,k}`, `p = (1, 2)`, by direct summation of
/// the diagonal entries `(α_1 + 1)/k` over `α_1 = k − 2j`.
fn s1_trace_oracle(k: u64) -> f64 {
    (0..=k / 2).map(|j| (k - 2 * j + 1) as f64 / k as f64).sum()
}

fn s1_square_oracle(k: u64) -> f64 {
    (0..=k / 2).map(|j| ((k - 2 * j + 1) as f64 / k as f64).powi(2)).sum()
}

pub const DENSITY_KS: std::ops::RangeInclusive<u64> = 40..=120;

fn density(out: &mut Outcome, start: Instant) {
    let run = |out: &mut Outcome| -> Result<()> {
        let p = WeightVector::new(vec![1, 2])?;
        let s1 = PolySymbol::parse("s(1)", 2)?;
        let ks: Vec<u64> = DENSITY_KS.collect();
        let cache = SpectrumCache::new();
        let cmp = density_compare(&p, &s1, &[RealPoly::identity()], &ks, 2, &cache)?;
        let fit = &cmp.fits[0];
        let i0 = fit.model.coefficient(0, 0).re;
        out.check((i0 - PI / 2.0).abs() <= 1e-12, format!("computed I_0(1) = {i0:.15} (π/2)"));
        let mut worst_oracle = 0.0f64;
        let mut worst = 0.0f64;
        for r in &cmp.reports {
            let sum = r.sums[0].1;
            let kf = r.k as f64;
            if r.k % 2 == 0 {
                let closed = (kf / 2.0 + 1.0).powi(2) / kf;
                worst_oracle = worst_oracle.max((sum - closed).abs());
                worst = worst.max(r.residuals[0].1.abs());
            }
            worst_oracle = worst_oracle.max((sum - s1_trace_oracle(r.k)).abs());
        }
        out.check(worst_oracle <= 1e-10, format!("Σλ against direct summation and (k/2+1)²/k: max error {worst_oracle:.2e}"));
        out.check(
            worst <= 1e-6,
            format!("f = x, fitted I_1(1) = {:.12}: max residual on even k ∈ [40,120] = {worst:.2e} ≤ 1e-6", fit.model.coefficient(0, 1).re),
        );

        let mut model = AsymptoticModel::new(p.clone(), crate::sectors::enumerate_sectors(&p));
        let g0 = s1.average_circle(&p).order(0);
        let sq = RealPoly::monomial(2);
        for idx in 0..model.sectors.len() {
            let c = leading_coefficient(&model.sectors[idx], &g0, &sq, &p)?;
            model.set_coefficient(idx, 0, c);
        }
        let window: Vec<u64> = (40..=80).collect();
        let check = decay_order_check(|k| Ok(s1_square_oracle(k)), &model, &window, 2)?;
        out.check(
            check.passed,
            format!(
                "f = x²: out-of-sample residual {:.2e} → {:.2e} on doubled window, measured order {:.2} (need ≥ {:.1} − 0.2)",
                check.residual, check.residual_doubled, check.measured_order, check.expected_order
            ),
        );
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("spectral density", &e);
    }
    out.runtime(start, 120.0);
}

// ---------------------------------------------------------------------------
// 4. Calibration identity.

fn calibration(out: &mut Outcome, start: Instant) {
    let run = |out: &mut Outcome| -> Result<()> {
        let kappa = stirling_calibration();
        out.check(
            (kappa / CALIBRATION - 1.0).abs() <= 1e-9,
            format!("constant from the n = 1 Stirling limit: {kappa:.12} (fixed value {CALIBRATION:.12})"),
        );
        let p = WeightVector::new(vec![1, 2])?;
        let bump = PolySymbol::parse("s(1)^2*s(2)^2", 2)?;
        for k in [10u64, 20, 30] {
            let basis = enumerate_basis(&p, k);
            let n = basis.dim();
            for alpha in [basis.indices()[n / 4].clone(), basis.indices()[n / 2].clone(), basis.indices()[3 * n / 4].clone()] {
                let c = pres_identity(&alpha, &bump, &p, k, 1e-10)?;
                out.check(
                    c.rel_err <= 1e-6,
                    format!("k = {k}, α = {:?}: lhs {:.12e}, rhs {:.12e}, relative error {:.2e} ≤ 1e-6", alpha.0, c.lhs, c.rhs, c.rel_err),
                );
            }
        }
        // The same constant reproduces the ζ = 1 leading term of the counts:
        // Tr V*V against the Liouville prediction, Richardson over even k.
        let (a, b) = (trace_vstar_v_ratio(&p, 200)?, trace_vstar_v_ratio(&p, 400)?);
        let limit = 2.0 * b - a;
        out.check(
            (limit - 1.0).abs() <= 1e-3,
            format!("Tr(V*V) / Liouville prediction: {a:.6} (k=200), {b:.6} (k=400), extrapolated {limit:.6} (|· − 1| ≤ 1e-3)"),
        );
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("calibration identity", &e);
    }
    out.runtime(start, 60.0);
}

// ---------------------------------------------------------------------------
// 5. Control-norm identity along the imaginary flow.

fn control_norm(out: &mut Outcome, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let p = WeightVector::new(if draw % 2 == 0 { vec![1, 2] } else { vec![2, 3] }).expect("valid weights");
        let k = loop {
            let k = rng.gen_range(4..=60u64);
            if count_dim(&p, k) > 0 {
                break k;
            }
        };
        let basis = enumerate_basis(&p, k);
        let alpha = &basis.indices()[rng.gen_range(0..basis.dim())];
        let t = rng.gen_range(-2.0..=2.0);
        let x: f64 = rng.gen_range(0.02..0.98);
        let s = vec![x / p.get(0) as f64, (1.0 - x) / p.get(1) as f64];
        let y = match ReducedPoint::new(s, vec![rng.gen_range(0.0..2.0 * PI)], &p) {
            Ok(y) => y,
            Err(e) => return out.error("control norm draw", &e),
        };
        match control_norm_check(alpha, &p, k, t, &y) {
            Ok(r) => worst = worst.max(if r.is_nan() { f64::INFINITY } else { r }),
            Err(e) => return out.error("control norm", &e),
        }
    }
    out.check(worst <= 1e-10, format!("100 draws over p ∈ {{(1,2),(2,3)}}, |t| ≤ 2: max residual {worst:.2e} ≤ 1e-10"));
}

// ---------------------------------------------------------------------------
// 6. V*V against its principal symbol.

fn vstar_v(out: &mut Outcome) {
    let run = |out: &mut Outcome| -> Result<()> {
        let p = WeightVector::new(vec![1, 2])?;
        let ks = [16u64, 32, 64, 128];
        let devs: Vec<f64> = ks.iter().map(|&k| vstar_v_symbol_check(&enumerate_basis(&p, k))).collect::<Result<_>>()?;
        let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let slope = loglog_slope(&kf, &devs);
        out.check(
            -slope >= 0.8,
            format!("p = (1,2): deviations {} for k = 16..128, fitted order {:.3} ≥ 0.8", fmt_list(&devs), -slope),
        );
        for n in [2usize, 3] {
            let p = WeightVector::new(vec![1; n])?;
            let spread = ks
                .iter()
                .map(|&k| {
                    let maps = ReductionMaps::build(&enumerate_basis(&p, k))?;
                    let d2: Vec<f64> = maps.d.iter().map(|d| d * d).collect();
                    let max = d2.iter().copied().fold(f64::MIN, f64::max);
                    let min = d2.iter().copied().fold(f64::MAX, f64::min);
                    Ok((max - min) / max)
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            out.check(spread <= 1e-9, format!("p = (1,…,1), n = {n}, k ∈ {ks:?}: diagonal of V*V spread {spread:.2e} ≤ 1e-9"));
        }
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("V*V symbol law", &e);
    }
}

// ---------------------------------------------------------------------------
// 7. Concentration near the level set.

fn concentration(out: &mut Outcome, seed: u64) {
    let run = |out: &mut Outcome| -> Result<()> {
        let p = WeightVector::new(vec![1, 2])?;
        let eps = 0.3;
        let scan = concentration_scan(&p, &[10, 20, 40, 80], eps, seed)?;
        let ks: Vec<f64> = scan.iter().map(|x| x.0 as f64).collect();
        let logs: Vec<f64> = scan.iter().map(|x| x.1.ln()).collect();
        let slope = ls_slope(&ks, &logs);
        let bound = concentration_bound(&p, eps);
        let rel = (-slope / bound - 1.0).abs();
        out.check(
            slope < 0.0 && rel <= 0.3,
            format!(
                "log outside-mass {} for k = 10,20,40,80: slope {slope:.4} vs −C(0.3) = {:.4} (relative gap {rel:.3} ≤ 0.3)",
                fmt_list(&logs),
                -bound
            ),
        );
        let local: Vec<String> = scan
            .windows(2)
            .map(|w| format!("{:.4}", (w[1].1.ln() - w[0].1.ln()) / (w[1].0 as f64 - w[0].0 as f64)))
            .collect();
        out.note(format!("slopes between consecutive k: [{}]", local.join(", ")));
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("concentration", &e);
    }
}

// ---------------------------------------------------------------------------
// 8. Commutator order.

/// The documented pair: a non-quadratic function of the actions and a
/// circle-invariant symbol mixing the two coordinates, on `p = (1, 2)`.
pub const COMMUTATOR_PAIR: (&str, &str) = ("s(1)^2 + s(2)", "zb(1)^2*z(2) + zb(2)*z(1)^2");

fn commutator(out: &mut Outcome) {
    let run = |out: &mut Outcome| -> Result<()> {
        let p = WeightVector::new(vec![1, 2])?;
        let f = PolySymbol::parse(COMMUTATOR_PAIR.0, 2)?;
        let g = PolySymbol::parse(COMMUTATOR_PAIR.1, 2)?;
        let ks = [8u64, 16, 32, 64];
        let scan = commutator_norm_scan(&f, &g, &p, &ks)?;
        let x: Vec<f64> = scan.iter().map(|s| s.0 as f64).collect();
        let y: Vec<f64> = scan.iter().map(|s| s.1).collect();
        let slope = loglog_slope(&x, &y);
        out.check(slope <= -0.85, format!("‖[T_f, T_g]‖ = {} for k = 8..64: slope {slope:.3} ≤ −0.85", fmt_list(&y)));
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("commutator scan", &e);
    }
}

// ---------------------------------------------------------------------------
// 9. Eigensolver.

fn eigen(out: &mut Outcome) {
    let run = |out: &mut Outcome| -> Result<()> {
        let p = WeightVector::new(vec![1, 2])?;
        let mut worst = 0.0f64;
        // The criterion-3 matrices, plus a non-diagonal symbol on the same bases.
        for text in ["s(1)", "zb(1)^2*z(2) + zb(2)*z(1)^2 + s(1)"] {
            let f = PolySymbol::parse(text, 2)?;
            for k in DENSITY_KS {
                let t = lambda_toeplitz(&f, &enumerate_basis(&p, k))?;
                let e = hermitian_eigen(t.entries())?;
                let r = e.max_residual(t.entries());
                worst = worst.max(if r.is_nan() { f64::INFINITY } else { r });
            }
        }
        out.check(worst <= 1e-10, format!("max ‖Tv − λv‖ / ‖T‖ over k ∈ [40,120] = {worst:.2e} ≤ 1e-10"));
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let cases: [([Complex64; 4], [f64; 2]); 3] = [
            ([c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)], [-1.0, 1.0]),
            ([c(2.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(2.0, 0.0)], [1.0, 3.0]),
            ([c(5.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-3.0, 0.0)], [-3.0, 5.0]),
        ];
        for (m, expected) in cases {
            let e = hermitian_eigen(&nalgebra::DMatrix::from_row_slice(2, 2, &m))?;
            out.check(e.values == expected, format!("2×2 spectrum {:?} = {expected:?}", e.values));
        }
        Ok(())
    };
    if let Err(e) = run(out) {
        out.error("eigensolver", &e);
    }
}

// ---------------------------------------------------------------------------
// 10. Bohr–Sommerfeld lattice points.

/// Lattice points `m/k` of the hull of `action`'s weight rows, found by
/// testing every point of a bounding box for membership in a simplex spanned
/// by `d + 1` of the rows, with exact barycentric coordinates.
pub fn brute_force_points(action: &TorusAction, k: u64) -> Vec<LatticePoint> {
    let v = action.weights();
    let d = action.rank();
    let k = k as i64;
    let lo: Vec<i64> = (0..d).map(|i| v.iter().map(|r| r[i]).min().expect("rows") * k - 1).collect();
    let hi: Vec<i64> = (0..d).map(|i| v.iter().map(|r| r[i]).max().expect("rows") * k + 1).collect();
    let simplices = combinations(v.len(), d + 1);
    let mut out = Vec::new();
    let mut cur = lo.clone();
    loop {
        if simplices.iter().any(|s| in_simplex(&s.iter().map(|&i| v[i].as_slice()).collect::<Vec<_>>(), &cur, k)) {
            out.push(LatticePoint { numer: cur.clone(), denom: k as u64 });
        }
        let mut i = 0;
        loop {
            if i == d {
                out.sort();
                return out;
            }
            cur[i] += 1;
            if cur[i] <= hi[i] {
                break;
            }
            cur[i] = lo[i];
            i += 1;
        }
    }
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![Vec::new()];
    }
    if n < r {
        return Vec::new();
    }
    let mut with: Vec<Vec<usize>> = combinations(n - 1, r - 1);
    with.iter_mut().for_each(|c| c.push(n - 1));
    let mut out = combinations(n - 1, r);
    out.extend(with);
    out
}

fn det(m: &[Vec<i128>]) -> i128 {
    if m.len() == 1 {
        return m[0][0];
    }
    (0..m.len())
        .map(|c| {
            let minor: Vec<Vec<i128>> =
                m[1..].iter().map(|r| r.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, &x)| x).collect()).collect();
            let sign = if c % 2 == 0 { 1 } else { -1 };
            sign * m[0][c] * det(&minor)
        })
        .sum()
}

/// Solves `Σ λ_j k s_j = m`, `Σ λ_j = 1` by Cramer's rule and tests `λ ≥ 0`.
fn in_simplex(s: &[&[i64]], m: &[i64], k: i64) -> bool {
    let d = m.len();
    let entry = |r: usize, j: usize| -> i128 { if r < d { (s[j][r] * k) as i128 } else { 1 } };
    let rhs = |r: usize| -> i128 { if r < d { m[r] as i128 } else { 1 } };
    let build = |replace: Option<usize>| -> Vec<Vec<i128>> {
        (0..=d).map(|r| (0..=d).map(|j| if Some(j) == replace { rhs(r) } else { entry(r, j) }).collect()).collect()
    };
    let base = det(&build(None));
    if base == 0 {
        return false;
    }
    (0..=d).all(|j| {
        let num = det(&build(Some(j)));
        num == 0 || (num > 0) == (base > 0)
    })
}

fn polytope(out: &mut Outcome) {
    let action = TorusAction::cp3_example();
    let poly = match fixed_point_values(&action) {
        Ok(p) => p,
        Err(e) => return out.error("momentum polytope", &e),
    };
    let expected = vec![vec![0, 0], vec![0, 3], vec![1, 1], vec![3, 0]];
    out.check(poly.vertices == expected, format!("CP³ fixed-point values / 2π: {:?}", poly.vertices));
    for k in [2u64, 4] {
        let reference = brute_force_points(&action, k);
        let mut all_equal = true;
        for base in 0..poly.vertices.len() {
            match bs_lattice_points(&poly, k, base) {
                Ok(pts) => {
                    if base == 0 {
                        out.check(
                            pts == reference,
                            format!("k = {k}: {} lattice points, brute-force oracle {}", pts.len(), reference.len()),
                        );
                    }
                    all_equal &= pts == reference;
                }
                Err(e) => return out.error("lattice points", &e),
            }
        }
        out.check(all_equal, format!("k = {k}: identical point sets from all {} base vertices", poly.vertices.len()));
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}
