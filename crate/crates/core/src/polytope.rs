//! Momentum polytopes of diagonal torus actions on projective space and the
//! Bohr–Sommerfeld lattice inside them.
//!
//! All coordinates are stored in units of `2π`: the fixed-point values are the
//! integer weight rows, and the level-`k` lattice is `ν + (1/k) Z^d`, so every
//! membership test reduces to integer arithmetic.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::gcd_i64;

/// Diagonal action of `T^d` on `CP^N`: row `j` of `weights` is the weight of
/// the action on the homogeneous coordinate `z_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TorusAction {
    d: usize,
    weights: Vec<Vec<i64>>,
}

impl TorusAction {
    pub fn new(weights: Vec<Vec<i64>>) -> Result<Self> {
        let d = weights.first().map(Vec::len).unwrap_or(0);
        if d == 0 || weights.len() < 2 {
            return Err(Error::Polytope("need at least two rows of positive length".into()));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: row.len() });
        }
        if rank(&weights) < d {
            return Err(Error::Polytope(format!("weight matrix has rank below {d}; the action is not effective")));
        }
        Ok(Self { d, weights })
    }

    /// Parses rows separated by `;`, entries by `,`: `"0,0;1,1;3,0;0,3"`.
    pub fn parse(text: &str) -> Result<Self> {
        let rows = text
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|e| {
                        e.trim()
                            .parse::<i64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad weight entry {:?}", e.trim())))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// The `CP^3` action whose moment map is
    /// `(2π/|z|²)(|z_1|² + 3|z_2|², |z_1|² + 3|z_3|²)`.
    pub fn cp3_example() -> Self {
        Self::new(vec![vec![0, 0], vec![1, 1], vec![3, 0], vec![0, 3]]).expect("valid example")
    }

    /// `CP^1` with weights `0, 1`.
    pub fn cp1() -> Self {
        Self::new(vec![vec![0], vec![1]]).expect("valid example")
    }

    pub fn rank(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[Vec<i64>] {
        &self.weights
    }
}

/// `normal · x ≤ offset`, in units of `2π`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct HalfSpace {
    pub normal: Vec<i64>,
    pub offset: i64,
}

impl HalfSpace {
    /// Tests `normal · (m / k) ≤ offset` exactly.
    fn contains_scaled(&self, m: &[i64], k: i64) -> bool {
        dot(&self.normal, m) <= self.offset as i128 * k as i128
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MomentumPolytope {
    pub d: usize,
    /// Distinct fixed-point values, in units of `2π`.
    pub vertices: Vec<Vec<i64>>,
    /// The extreme points among `vertices`.
    pub extreme: Vec<Vec<i64>>,
    pub hull: Vec<HalfSpace>,
}

/// A point `numer / denom` in units of `2π`; `denom` is the level `k`, so
/// points of one level order lexicographically by value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LatticePoint {
    pub numer: Vec<i64>,
    pub denom: u64,
}

impl LatticePoint {
    /// Coordinates divided by `2π`.
    pub fn reduced(&self) -> Vec<f64> {
        self.numer.iter().map(|&m| m as f64 / self.denom as f64).collect()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.reduced().into_iter().map(|x| 2.0 * PI * x).collect()
    }
}

impl MomentumPolytope {
    pub fn contains(&self, point: &LatticePoint) -> bool {
        let k = point.denom as i64;
        self.hull.iter().all(|h| h.contains_scaled(&point.numer, k))
    }

    /// Integer box containing `k · hull`.
    fn scaled_box(&self, k: i64) -> Vec<(i64, i64)> {
        (0..self.d)
            .map(|i| {
                let lo = self.extreme.iter().map(|v| v[i]).min().expect("nonempty");
                let hi = self.extreme.iter().map(|v| v[i]).max().expect("nonempty");
                (lo * k, hi * k)
            })
            .collect()
    }
}

/// Reads the fixed-point values off the weight rows and computes the hull.
pub fn fixed_point_values(action: &TorusAction) -> Result<MomentumPolytope> {
    let d = action.d;
    let vertices: Vec<Vec<i64>> = action.weights.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let base = &vertices[0];
    let diffs: Vec<Vec<i64>> = vertices[1..].iter().map(|v| v.iter().zip(base).map(|(a, b)| a - b).collect()).collect();
    if diffs.is_empty() || rank(&diffs) < d {
        return Err(Error::Polytope(format!("fixed-point values span fewer than {d} affine dimensions")));
    }
    let hull = match d {
        1 => interval(&vertices),
        2 => polygon(&vertices),
        3 => polyhedron(&vertices),
        _ => return Err(Error::Polytope(format!("hull computation supports d ≤ 3, got {d}"))),
    };
    let extreme = vertices
        .iter()
        .filter(|v| is_extreme(v, &hull))
        .cloned()
        .collect();
    Ok(MomentumPolytope { d, vertices, extreme, hull })
}

/// `hull ∩ (ν_base + (1/k) Z^d)` with `ν_base = vertices[base]`, sorted.
pub fn bs_lattice_points(polytope: &MomentumPolytope, k: u64, base: usize) -> Result<Vec<LatticePoint>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let nu = polytope
        .vertices
        .get(base)
        .ok_or_else(|| Error::InvalidArgument(format!("base vertex {base} out of range")))?;
    let ki = k as i64;
    // Scaled coordinates: k·x = k·ν + m with m ∈ Z^d.
    let shift: Vec<i64> = nu.iter().map(|&v| v * ki).collect();
    let bounds: Vec<(i64, i64)> = polytope.scaled_box(ki).iter().zip(&shift).map(|(b, s)| (b.0 - s, b.1 - s)).collect();
    let mut out = Vec::new();
    let mut m: Vec<i64> = bounds.iter().map(|b| b.0).collect();
    loop {
        let scaled: Vec<i64> = m.iter().zip(&shift).map(|(a, b)| a + b).collect();
        if polytope.hull.iter().all(|h| h.contains_scaled(&scaled, ki)) {
            out.push(reduce(&scaled, k));
        }
        let mut i = 0;
        loop {
            if i == m.len() {
                out.sort();
                return Ok(out);
            }
            m[i] += 1;
            if m[i] <= bounds[i].1 {
                break;
            }
            m[i] = bounds[i].0;
            i += 1;
        }
    }
}

fn reduce(m: &[i64], k: u64) -> LatticePoint {
    LatticePoint { numer: m.to_vec(), denom: k }
}

fn dot(a: &[i64], b: &[i64]) -> i128 {
    a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum()
}

fn is_extreme(v: &[i64], hull: &[HalfSpace]) -> bool {
    // A vertex of a d-polytope lies on at least d facets with independent normals.
    let tight: Vec<Vec<i64>> = hull.iter().filter(|h| dot(&h.normal, v) == h.offset as i128).map(|h| h.normal.clone()).collect();
    !tight.is_empty() && rank(&tight) == v.len()
}

/// Rank over the rationals by fraction-free elimination.
fn rank(rows: &[Vec<i64>]) -> usize {
    let mut m: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let cols = m.first().map(Vec::len).unwrap_or(0);
    let mut r = 0;
    for c in 0..cols {
        let Some(pivot) = (r..m.len()).find(|&i| m[i][c] != 0) else { continue };
        m.swap(r, pivot);
        for i in r + 1..m.len() {
            let (a, b) = (m[r][c], m[i][c]);
            let (top, rest) = m.split_at_mut(i);
            for (x, &y) in rest[0].iter_mut().zip(&top[r]) {
                *x = a * *x - b * y;
            }
            let g = m[i].iter().fold(0i128, |g, &x| gcd_i128(g, x));
            if g > 1 {
                m[i].iter_mut().for_each(|x| *x /= g);
            }
        }
        r += 1;
    }
    r
}

fn gcd_i128(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn normalized(normal: Vec<i64>, offset: i64) -> HalfSpace {
    let g = normal.iter().fold(offset, |g, &x| gcd_i64(g, x)).max(1);
    HalfSpace { normal: normal.iter().map(|x| x / g).collect(), offset: offset / g }
}

fn interval(vertices: &[Vec<i64>]) -> Vec<HalfSpace> {
    let lo = vertices.iter().map(|v| v[0]).min().expect("nonempty");
    let hi = vertices.iter().map(|v| v[0]).max().expect("nonempty");
    vec![HalfSpace { normal: vec![-1], offset: -lo }, HalfSpace { normal: vec![1], offset: hi }]
}

fn cross2(o: &[i64], a: &[i64], b: &[i64]) -> i128 {
    (a[0] - o[0]) as i128 * (b[1] - o[1]) as i128 - (a[1] - o[1]) as i128 * (b[0] - o[0]) as i128
}

fn dist2(a: &[i64], b: &[i64]) -> i128 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as i128).pow(2)).sum()
}

/// Gift wrapping; returns the edges of the counter-clockwise hull.
fn polygon(vertices: &[Vec<i64>]) -> Vec<HalfSpace> {
    let start = vertices.iter().min().expect("nonempty").clone();
    let mut ring = vec![start.clone()];
    let mut current = start.clone();
    loop {
        let mut next = vertices.iter().find(|v| **v != current).expect("two distinct points").clone();
        for v in vertices {
            if *v == current {
                continue;
            }
            let c = cross2(&current, &next, v);
            // Clockwise of the candidate, or collinear and farther: wrap tighter.
            if c < 0 || (c == 0 && dist2(&current, v) > dist2(&current, &next)) {
                next = v.clone();
            }
        }
        if next == start {
            break;
        }
        ring.push(next.clone());
        current = next;
    }
    let mut hull: Vec<HalfSpace> = (0..ring.len())
        .map(|i| {
            let a = &ring[i];
            let b = &ring[(i + 1) % ring.len()];
            // Outward normal of a counter-clockwise edge a → b.
            let normal = vec![b[1] - a[1], a[0] - b[0]];
            let offset = normal[0] * a[0] + normal[1] * a[1];
            normalized(normal, offset)
        })
        .collect();
    hull.sort();
    hull.dedup();
    hull
}

/// Facet enumeration over all point triples; adequate for the handful of
/// fixed points of a projective space.
fn polyhedron(vertices: &[Vec<i64>]) -> Vec<HalfSpace> {
    let n = vertices.len();
    let mut hull = BTreeSet::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let (p, q, r) = (&vertices[a], &vertices[b], &vertices[c]);
                let u: Vec<i64> = (0..3).map(|i| q[i] - p[i]).collect();
                let v: Vec<i64> = (0..3).map(|i| r[i] - p[i]).collect();
                let normal = vec![u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                if normal.iter().all(|&x| x == 0) {
                    continue;
                }
                let offset = dot(&normal, p);
                let sides: Vec<i128> = vertices.iter().map(|w| dot(&normal, w) - offset).collect();
                if sides.iter().all(|&s| s <= 0) {
                    hull.insert(normalized(normal, offset as i64));
                } else if sides.iter().all(|&s| s >= 0) {
                    hull.insert(normalized(normal.iter().map(|x| -x).collect(), -offset as i64));
                }
            }
        }
    }
    hull.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(action: &TorusAction, k: i64) -> Vec<LatticePoint> {
        crate::verify::brute_force_points(action, k as u64)
    }

    #[test]
    fn cp3_vertices() {
        let poly = fixed_point_values(&TorusAction::cp3_example()).unwrap();
        assert_eq!(poly.vertices, vec![vec![0, 0], vec![0, 3], vec![1, 1], vec![3, 0]]);
        assert_eq!(poly.extreme, vec![vec![0, 0], vec![0, 3], vec![3, 0]]);
        assert_eq!(poly.hull.len(), 3);
    }

    #[test]
    fn cp3_matches_brute_force() {
        let action = TorusAction::cp3_example();
        let poly = fixed_point_values(&action).unwrap();
        for k in [1u64, 2, 3, 4] {
            let pts = bs_lattice_points(&poly, k, 0).unwrap();
            assert_eq!(pts, brute(&action, k as i64), "k={k}");
        }
        assert_eq!(bs_lattice_points(&poly, 4, 0).unwrap().len(), 91);
        assert_eq!(bs_lattice_points(&poly, 2, 0).unwrap().len(), 28);
    }

    #[test]
    fn cp1_segment() {
        let poly = fixed_point_values(&TorusAction::cp1()).unwrap();
        let pts = bs_lattice_points(&poly, 2, 0).unwrap();
        let values: Vec<f64> = pts.iter().map(|p| p.lambda()[0]).collect();
        assert_eq!(values, vec![0.0, PI, 2.0 * PI]);
    }

    #[test]
    fn duplicates_are_merged() {
        let a = TorusAction::new(vec![vec![0, 0], vec![1, 0], vec![1, 0], vec![0, 1]]).unwrap();
        let poly = fixed_point_values(&a).unwrap();
        assert_eq!(poly.vertices.len(), 3);
        assert_eq!(bs_lattice_points(&poly, 3, 0).unwrap(), brute(&a, 3));
    }

    #[test]
    fn level_one_contains_vertices() {
        let poly = fixed_point_values(&TorusAction::cp3_example()).unwrap();
        let pts = bs_lattice_points(&poly, 1, 0).unwrap();
        for v in &poly.vertices {
            assert!(pts.contains(&LatticePoint { numer: v.clone(), denom: 1 }));
        }
    }

    #[test]
    fn rejects_degenerate_actions() {
        assert!(TorusAction::new(vec![vec![1, 2], vec![2, 4]]).is_err());
        let flat = TorusAction::new(vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert!(fixed_point_values(&flat).is_err());
        assert!(TorusAction::parse("0,0;1").is_err());
        assert!(bs_lattice_points(&fixed_point_values(&TorusAction::cp1()).unwrap(), 0, 0).is_err());
    }

    #[test]
    fn three_dimensional_hull() {
        // CP^3 with the standard T^3 action; the simplex has 4 facets.
        let a = TorusAction::parse("0,0,0;1,0,0;0,1,0;0,0,1").unwrap();
        let poly = fixed_point_values(&a).unwrap();
        assert_eq!(poly.hull.len(), 4);
        for k in 1..=4u64 {
            let pts = bs_lattice_points(&poly, k, 0).unwrap();
            assert_eq!(pts.len() as u64, (k + 1) * (k + 2) * (k + 3) / 6);
            assert_eq!(pts, brute(&a, k as i64));
        }
        let cube = TorusAction::parse("0,0,0;1,0,0;0,1,0;0,0,1;1,1,0;1,0,1;0,1,1;1,1,1;1,1,1").unwrap();
        let poly = fixed_point_values(&cube).unwrap();
        assert_eq!(poly.hull.len(), 6);
        assert_eq!(bs_lattice_points(&poly, 3, 0).unwrap().len(), 64);
    }

    #[test]
    fn count_grows_like_k_to_the_d() {
        let poly = fixed_point_values(&TorusAction::cp3_example()).unwrap();
        let ks: Vec<f64> = [4.0, 8.0, 16.0, 32.0, 64.0].to_vec();
        let counts: Vec<f64> = ks.iter().map(|&k| bs_lattice_points(&poly, k as u64, 0).unwrap().len() as f64).collect();
        let slope = crate::numeric::loglog_slope(&ks, &counts);
        assert!((slope - 2.0).abs() <= 0.1, "{slope}");
    }

    fn arb_action() -> impl Strategy<Value = TorusAction> {
        proptest::collection::vec((-3i64..4, -3i64..4), 3..6)
            .prop_map(|rows| rows.into_iter().map(|(a, b)| vec![a, b]).collect::<Vec<_>>())
            .prop_filter_map("full-dimensional", |rows| {
                let a = TorusAction::new(rows).ok()?;
                fixed_point_values(&a).ok().map(|_| a)
            })
    }

    proptest! {
        #[test]
        fn base_vertex_independence(a in arb_action(), k in 1u64..5) {
            let poly = fixed_point_values(&a).unwrap();
            let reference = bs_lattice_points(&poly, k, 0).unwrap();
            for base in 1..poly.vertices.len() {
                prop_assert_eq!(&bs_lattice_points(&poly, k, base).unwrap(), &reference);
            }
        }

        #[test]
        fn hull_agrees_with_brute_force(a in arb_action(), k in 1u64..4) {
            let poly = fixed_point_values(&a).unwrap();
            let pts = bs_lattice_points(&poly, k, 0).unwrap();
            prop_assert!(pts.iter().all(|p| poly.contains(p)));
            prop_assert_eq!(pts, brute(&a, k as i64));
        }
    }
}
