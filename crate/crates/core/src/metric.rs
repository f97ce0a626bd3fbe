//! Finite metric spaces, power-type costs and discrete slopes.
//!
//! A [`FiniteMetricSpace`] owns a validated distance matrix. A
//! [`PowerTypeCost`] applies a convex profile `phi` to every distance and
//! records the exponent `p_o = sup x phi'(x) / phi(x)`, the doubling ratio
//! `K = sup phi(2x) / phi(x)` and an optional truncation level. The induced
//! metric `c^(1/p_o)` is what concentration statements are phrased in.

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Absolute tolerance for triangle-inequality scans.
pub const TRIANGLE_TOL: f64 = 1e-12;

/// Profiles whose doubling ratio exceeds this are rejected.
pub const DOUBLING_CAP: f64 = 1e6;

const PROFILE_GRID_LEN: usize = 2048;
const PROFILE_GRID_LO: f64 = 1e-6;
const PROFILE_GRID_HI: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMetricSpace {
    points: Option<Vec<f64>>,
    dist: SquareMatrix,
}

impl FiniteMetricSpace {
    /// Validates a distance matrix given as rows.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        validate_space(rows)
    }

    /// `n` equally spaced points on `[a, b]` with the distance `|x - y|`.
    pub fn grid(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::InvalidGrid(format!("need finite a < b, got [{a}, {b}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        let points: Vec<f64> =
            (0..n).map(|i| a + (b - a) * (i as f64) / ((n - 1) as f64)).collect();
        Self::from_points(points)
    }

    /// Strictly increasing reals with the distance `|x - y|`.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("points must be finite and strictly increasing".into()));
        }
        let n = points.len();
        let dist = SquareMatrix::from_fn(n, |i, j| (points[i] - points[j]).abs());
        check_matrix(&dist)?;
        Ok(Self { points: Some(points), dist })
    }

    pub fn n(&self) -> usize {
        self.dist.n()
    }

    pub fn dist(&self) -> &SquareMatrix {
        &self.dist
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist.get(i, j)
    }

    /// Coordinates for one-dimensional grid spaces.
    pub fn points(&self) -> Option<&[f64]> {
        self.points.as_deref()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.max().max(0.0)
    }

    /// Smallest distance between two distinct points (0 for a single point).
    pub fn min_separation(&self) -> f64 {
        let n = self.n();
        let mut m = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.min(self.d(i, j));
                }
            }
        }
        if m.is_finite() {
            m
        } else {
            0.0
        }
    }

    /// Same points with every distance multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.as_ref().map(|p| p.iter().map(|x| x * s).collect()),
            dist: self.dist.map(|d| d * s),
        }
    }
}

/// Validates a square matrix of nonnegative reals as a metric.
pub fn validate_space(rows: &[Vec<f64>]) -> Result<FiniteMetricSpace> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    for (row, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::NotSquare { row, len: r.len(), n });
        }
    }
    let dist = SquareMatrix::from_rows(rows);
    check_matrix(&dist)?;
    Ok(FiniteMetricSpace { points: None, dist })
}

fn check_matrix(m: &SquareMatrix) -> Result<()> {
    let n = m.n();
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            if !v.is_finite() {
                return Err(Error::NonFiniteDistance(i, j));
            }
            if v < 0.0 {
                return Err(Error::NegativeDistance(i, j));
            }
        }
    }
    for i in 0..n {
        if m.get(i, i) != 0.0 {
            return Err(Error::NonzeroDiagonal(i));
        }
        for j in (i + 1)..n {
            if m.get(i, j) != m.get(j, i) {
                return Err(Error::AsymmetricDistance(i, j));
            }
            if m.get(i, j) == 0.0 {
                return Err(Error::CoincidentPoints(i, j));
            }
        }
    }
    match find_triangle_violation(m, TRIANGLE_TOL) {
        Some((i, k, j)) => Err(Error::TriangleViolation(i, k, j)),
        None => Ok(()),
    }
}

/// First `(i, k, j)` in lexicographic order with `m[i][k] > m[i][j] + m[j][k] + tol`.
pub fn find_triangle_violation(m: &SquareMatrix, tol: f64) -> Option<(usize, usize, usize)> {
    let n = m.n();
    (0..n).into_par_iter().find_map_first(|i| {
        let ri = m.row(i);
        for k in 0..n {
            let dik = ri[k];
            for j in 0..n {
                if dik > ri[j] + m.get(j, k) + tol {
                    return Some((i, k, j));
                }
            }
        }
        None
    })
}

/// Closed library of convex cost profiles `phi` with `phi(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Profile {
    /// `x^2`
    Square,
    /// `x^p` with `p >= 1`
    Power { p: f64 },
    /// `x + x^2`
    LinearPlusSquare,
}

impl Profile {
    pub fn phi(&self, x: f64) -> f64 {
        match *self {
            Profile::Square => x * x,
            Profile::Power { p } => x.powf(p),
            Profile::LinearPlusSquare => x + x * x,
        }
    }

    /// Right derivative of `phi`.
    pub fn dphi(&self, x: f64) -> f64 {
        match *self {
            Profile::Square => 2.0 * x,
            Profile::Power { p } => {
                if x == 0.0 && p == 1.0 {
                    1.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }
            Profile::LinearPlusSquare => 1.0 + 2.0 * x,
        }
    }

    fn check(&self) -> Result<()> {
        if let Profile::Power { p } = *self {
            if !(p.is_finite() && p >= 1.0) {
                return Err(Error::InvalidProfile(format!("power profile needs p >= 1, got {p}")));
            }
        }
        Ok(())
    }

    /// Limits of `x phi'(x) / phi(x)` and `phi(2x) / phi(x)` known in closed form.
    fn analytic(&self) -> (f64, f64) {
        match *self {
            Profile::Square => (2.0, 4.0),
            Profile::Power { p } => (p, 2f64.powf(p)),
            Profile::LinearPlusSquare => (2.0, 4.0),
        }
    }

    fn log_grid() -> impl Iterator<Item = f64> {
        let (lo, hi) = (PROFILE_GRID_LO.ln(), PROFILE_GRID_HI.ln());
        (0..PROFILE_GRID_LEN)
            .map(move |k| (lo + (hi - lo) * k as f64 / (PROFILE_GRID_LEN - 1) as f64).exp())
    }
}

/// Exponent `p_o = sup x phi'(x) / phi(x)`, exact for library members.
pub fn cost_exponent(profile: &Profile) -> Result<f64> {
    profile.check()?;
    doubling_ratio(profile)?;
    let scan = Profile::log_grid()
        .map(|x| x * profile.dphi(x) / profile.phi(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let (exact, _) = profile.analytic();
    debug_assert!(scan <= exact * (1.0 + 1e-12));
    Ok(exact)
}

/// Doubling ratio `K = sup phi(2x) / phi(x)` over the log grid and its analytic limit.
pub fn doubling_ratio(profile: &Profile) -> Result<f64> {
    profile.check()?;
    let scan = Profile::log_grid()
        .map(|x| profile.phi(2.0 * x) / profile.phi(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let k = scan.max(profile.analytic().1);
    if !(k <= DOUBLING_CAP) {
        return Err(Error::DoublingUnbounded { ratio: k, cap: DOUBLING_CAP });
    }
    Ok(k)
}

/// Cost matrix `c = phi(d)`, optionally truncated at a level `M` as `c ∧ M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTypeCost {
    pub profile: Profile,
    pub exponent_po: f64,
    pub doubling_ratio_k: f64,
    pub truncation_level: Option<f64>,
    matrix: SquareMatrix,
}

impl PowerTypeCost {
    pub fn new(space: &FiniteMetricSpace, profile: Profile, truncate: Option<f64>) -> Result<Self> {
        let exponent_po = cost_exponent(&profile)?;
        let doubling_ratio_k = doubling_ratio(&profile)?;
        if let Some(m) = truncate {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidTruncation(m));
            }
        }
        let cap = truncate.unwrap_or(f64::INFINITY);
        let matrix = space.dist().map(|d| profile.phi(d).min(cap));
        Ok(Self { profile, exponent_po, doubling_ratio_k, truncation_level: truncate, matrix })
    }

    pub fn square(space: &FiniteMetricSpace) -> Self {
        Self::new(space, Profile::Square, None).expect("square profile is always valid")
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn max_cost(&self) -> f64 {
        self.matrix.max().max(0.0)
    }

    /// Entrywise `c ∧ level`; a tighter existing level is kept.
    pub fn truncated(&self, level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0) {
            return Err(Error::InvalidTruncation(level));
        }
        let new_level = self.truncation_level.map_or(level, |m| m.min(level));
        Ok(Self {
            truncation_level: Some(new_level),
            matrix: self.matrix.map(|c| c.min(level)),
            ..self.clone()
        })
    }
}

/// `d~ = c^(1/p_o)`, checked to be a metric.
pub fn induced_distance(cost: &PowerTypeCost) -> Result<SquareMatrix> {
    let p = cost.exponent_po;
    let dt = if p == 1.0 {
        cost.matrix().clone()
    } else if p == 2.0 {
        cost.matrix().map(f64::sqrt)
    } else {
        cost.matrix().map(|c| c.powf(1.0 / p))
    };
    match find_triangle_violation(&dt, TRIANGLE_TOL) {
        Some((i, k, j)) => Err(Error::TriangleViolation(i, k, j)),
        None => Ok(dt),
    }
}

/// Discrete surrogate for the local slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SlopeOperator {
    /// Maximum over every other point.
    Global,
    /// Maximum over points within `radius`.
    Graph { radius: f64 },
}

impl SlopeOperator {
    #[inline]
    pub fn admits(&self, d: f64) -> bool {
        match *self {
            SlopeOperator::Global => true,
            SlopeOperator::Graph { radius } => d <= radius * (1.0 + 1e-9),
        }
    }

    /// Largest distance the operator looks across.
    pub fn reach(&self, space: &FiniteMetricSpace) -> f64 {
        match *self {
            SlopeOperator::Global => space.diameter(),
            SlopeOperator::Graph { .. } => {
                let n = space.n();
                let mut r: f64 = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let d = space.d(i, j);
                        if i != j && self.admits(d) {
                            r = r.max(d);
                        }
                    }
                }
                r
            }
        }
    }
}

/// `|∇⁺g|(x) = max_{y} [g(y) - g(x)]₊ / d(x, y)` over admissible `y ≠ x`.
///
/// Entries equal to `-inf` never raise a neighbour's slope; a point with
/// `g = -inf` next to a finite value gets slope `+inf`. Points without
/// admissible neighbours get 0.
pub fn slope(space: &FiniteMetricSpace, op: &SlopeOperator, g: &[f64]) -> Vec<f64> {
    let n = space.n();
    assert_eq!(g.len(), n, "slope: function length must match the space");
    (0..n)
        .map(|x| {
            let mut s: f64 = 0.0;
            for y in 0..n {
                if y == x || g[y] == f64::NEG_INFINITY {
                    continue;
                }
                let d = space.d(x, y);
                if !op.admits(d) {
                    continue;
                }
                let inc = g[y] - g[x];
                if inc > 0.0 {
                    s = s.max(inc / d);
                }
            }
            s
        })
        .collect()
}
