//! Probability vectors, entropy, Fisher information, exponential moments and
//! concentration profiles.

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::metric::{slope, FiniteMetricSpace, SlopeOperator};
use crate::numerics::{log_sum_exp, neumaier_sum, sorted_sum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MASS_TOL: f64 = 1e-12;

/// Largest space handled by exact subset enumeration.
pub const EXACT_PROFILE_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct ProbVector {
    w: Vec<f64>,
    support: Vec<usize>,
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.w
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        ProbVector::new(w)
    }
}

impl ProbVector {
    /// Weights must be finite, nonnegative and sum to 1 within [`MASS_TOL`].
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidProbability("empty weight vector".into()));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidProbability(format!("weight {i} is {}", w[i])));
        }
        let s = neumaier_sum(w.iter().copied());
        if (s - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidProbability(format!("weights sum to {s}")));
        }
        let support = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        Ok(Self { w, support })
    }

    /// Rescales nonnegative finite weights with positive total mass.
    pub fn normalized(mut w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidProbability(format!("weight {i} is {}", w[i])));
        }
        let s = neumaier_sum(w.iter().copied());
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidProbability(format!("total mass {s}")));
        }
        w.iter_mut().for_each(|x| *x /= s);
        let support = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        Ok(Self { w, support })
    }

    /// Normalizes `exp(logw)` stably; `-inf` entries get weight 0.
    pub fn from_log_weights(logw: &[f64]) -> Result<Self> {
        let lse = log_sum_exp(logw);
        if !lse.is_finite() {
            return Err(Error::InvalidProbability("log-weights have no finite mass".into()));
        }
        Self::normalized(logw.iter().map(|&l| (l - lse).exp()).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self::normalized(vec![1.0; n]).expect("n > 0")
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self::new(w).expect("valid point mass")
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.w[i]
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn in_support(&self, i: usize) -> bool {
        self.w[i] > 0.0
    }

    /// Total-variation distance `½ Σ |a - b|`.
    pub fn tv(&self, other: &ProbVector) -> f64 {
        0.5 * neumaier_sum(self.w.iter().zip(&other.w).map(|(a, b)| (a - b).abs()))
    }

    pub fn check_same_space(&self, other: &ProbVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: other.len(), got: self.len() });
        }
        Ok(())
    }

    /// First point charged by `self` but not by `reference`.
    pub fn first_outside(&self, reference: &ProbVector) -> Option<usize> {
        self.support.iter().copied().find(|&i| reference.w[i] <= 0.0)
    }
}

/// `H(nu|mu) = Σ nu_i log(nu_i / mu_i)`, `+inf` when `nu` is not absolutely
/// continuous with respect to `mu`.
pub fn relative_entropy(nu: &ProbVector, mu: &ProbVector) -> Result<f64> {
    nu.check_same_space(mu)?;
    let mut terms = Vec::with_capacity(nu.support().len());
    for &i in nu.support() {
        let (a, b) = (nu.get(i), mu.get(i));
        if b <= 0.0 {
            return Ok(f64::INFINITY);
        }
        terms.push(a * (a / b).ln());
    }
    Ok(sorted_sum(terms).max(0.0))
}

/// `log(nu_i / mu_i)` on the support of `nu`, `-inf` elsewhere.
pub fn log_density(nu: &ProbVector, mu: &ProbVector) -> Result<Vec<f64>> {
    nu.check_same_space(mu)?;
    if let Some(i) = nu.first_outside(mu) {
        return Err(Error::AbsoluteContinuityViolated(i));
    }
    Ok((0..nu.len())
        .map(|i| if nu.get(i) > 0.0 { (nu.get(i) / mu.get(i)).ln() } else { f64::NEG_INFINITY })
        .collect())
}

/// `I(nu|mu) = Σ nu_i |∇⁺ log(nu/mu)|²(i)`.
pub fn fisher_information(
    nu: &ProbVector,
    mu: &ProbVector,
    space: &FiniteMetricSpace,
    op: &SlopeOperator,
) -> Result<f64> {
    if space.n() != nu.len() {
        return Err(Error::DimensionMismatch { expected: space.n(), got: nu.len() });
    }
    let g = log_density(nu, mu)?;
    let s = slope(space, op, &g);
    Ok(neumaier_sum(nu.support().iter().map(|&i| nu.get(i) * s[i] * s[i])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpIntegral {
    /// `I_delta`, `+inf` on overflow.
    pub value: f64,
    pub log_value: f64,
    pub overflow: bool,
}

/// `I_delta = Σ_{i,j} mu_i mu_j exp(delta c_ij)` via log-sum-exp.
pub fn exp_integral(mu: &ProbVector, cost: &SquareMatrix, delta: f64) -> Result<ExpIntegral> {
    if cost.n() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: cost.n() });
    }
    if !delta.is_finite() {
        return Err(Error::InvalidInput(format!("delta must be finite, got {delta}")));
    }
    let supp = mu.support();
    let mut logs = Vec::with_capacity(supp.len() * supp.len());
    for &i in supp {
        for &j in supp {
            logs.push(mu.get(i).ln() + mu.get(j).ln() + delta * cost.get(i, j));
        }
    }
    let log_value = log_sum_exp(&logs);
    let value = log_value.exp();
    Ok(ExpIntegral { value, log_value, overflow: value.is_infinite() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// Every subset with `mu(A) >= 1/2`.
    Exact,
    /// Sublevel sets of distance-to-point and of weight or index orderings.
    Sublevel,
}

/// `alpha(r) = max { 1 - mu(A_r) : mu(A) >= 1/2 }` at the distinct radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub radii: Vec<f64>,
    pub alpha: Vec<f64>,
    pub witness_sets: Vec<Vec<bool>>,
    pub exact: bool,
}

impl ConcentrationProfile {
    /// Rows `(radius, alpha, witness bitmask)` with point 0 first in the mask.
    pub fn csv_rows(&self) -> Vec<(f64, f64, String)> {
        self.radii
            .iter()
            .zip(&self.alpha)
            .zip(&self.witness_sets)
            .map(|((&r, &a), w)| (r, a, w.iter().map(|&b| if b { '1' } else { '0' }).collect()))
            .collect()
    }

    /// Whether `alpha(r) <= exp(-((r - r_o)₊)^p / a')` for every `r >= 0`.
    ///
    /// `alpha` is constant on `[r_k, r_{k+1})`, so the binding value on each
    /// piece is the left limit at `r_{k+1}`. Returns the smallest slack
    /// `bound - alpha` found.
    pub fn bound_slack(&self, p_o: f64, a_prime: f64, r_o: f64) -> f64 {
        let mut worst = f64::INFINITY;
        for k in 0..self.radii.len() {
            let r_next = match self.radii.get(k + 1) {
                Some(&r) => r,
                None => {
                    worst = worst.min(-self.alpha[k]);
                    continue;
                }
            };
            let excess = (r_next - r_o).max(0.0);
            let bound = (-excess.powf(p_o) / a_prime).exp();
            worst = worst.min(bound - self.alpha[k]);
        }
        worst
    }
}

/// Sorted distinct values of `dt` (plus 0), merging values within `1e-12`
/// relative, and the group index of every entry.
fn radius_groups(dt: &SquareMatrix) -> (Vec<f64>, Vec<u32>) {
    let n = dt.n();
    let mut vals: Vec<f64> = dt.as_slice().to_vec();
    vals.push(0.0);
    vals.sort_by(f64::total_cmp);
    let mut radii: Vec<f64> = Vec::new();
    for v in vals {
        match radii.last() {
            Some(&last) if v - last <= 1e-12 * last.abs().max(1.0) => {}
            _ => radii.push(v),
        }
    }
    let idx = dt
        .as_slice()
        .iter()
        .map(|&v| {
            let pos = radii.partition_point(|&r| r <= v);
            (pos - 1) as u32
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(idx.len(), n * n);
    (radii, idx)
}

struct Scanner<'a> {
    n: usize,
    mu: &'a [f64],
    ridx: &'a [u32],
    nr: usize,
}

impl Scanner<'_> {
    /// Complement masses `1 - mu(A_r)` for every radius group.
    fn complement_curve(&self, members: &[usize], hist: &mut [f64], out: &mut [f64]) {
        hist.iter_mut().for_each(|h| *h = 0.0);
        for x in 0..self.n {
            if self.mu[x] == 0.0 {
                continue;
            }
            let row = &self.ridx[x * self.n..(x + 1) * self.n];
            let k = members.iter().map(|&y| row[y]).min().expect("nonempty set");
            hist[k as usize] += self.mu[x];
        }
        let mut acc = 0.0;
        for t in (0..self.nr).rev() {
            out[t] = acc;
            acc += hist[t];
        }
    }
}

/// Concentration profile of `mu` under the metric `dtilde`.
pub fn concentration_profile(
    mu: &ProbVector,
    dtilde: &SquareMatrix,
    mode: ProfileMode,
) -> Result<ConcentrationProfile> {
    let n = mu.len();
    if dtilde.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: dtilde.n() });
    }
    let (radii, ridx) = radius_groups(dtilde);
    let nr = radii.len();
    let scanner = Scanner { n, mu: mu.weights(), ridx: &ridx, nr };
    let half = 0.5 - MASS_TOL;

    let (alpha, witness_masks): (Vec<f64>, Vec<Vec<bool>>) = match mode {
        ProfileMode::Exact => {
            if n > EXACT_PROFILE_MAX_N {
                return Err(Error::TooLargeForExact { n, max: EXACT_PROFILE_MAX_N });
            }
            let total: u32 = 1 << n;
            let block = 1u32 << 10.min(n);
            let nblocks = total.div_ceil(block);
            let best = (0..nblocks)
                .into_par_iter()
                .map(|b| {
                    let mut best = vec![(f64::NEG_INFINITY, u32::MAX); nr];
                    let mut hist = vec![0.0; nr];
                    let mut curve = vec![0.0; nr];
                    let mut members = Vec::with_capacity(n);
                    for mask in (b * block)..((b + 1) * block).min(total) {
                        members.clear();
                        let mut mass = 0.0;
                        for y in 0..n {
                            if mask >> y & 1 == 1 {
                                members.push(y);
                                mass += scanner.mu[y];
                            }
                        }
                        if mass < half {
                            continue;
                        }
                        scanner.complement_curve(&members, &mut hist, &mut curve);
                        for t in 0..nr {
                            if curve[t] > best[t].0 {
                                best[t] = (curve[t], mask);
                            }
                        }
                    }
                    best
                })
                .reduce(
                    || vec![(f64::NEG_INFINITY, u32::MAX); nr],
                    |a, b| {
                        a.into_iter()
                            .zip(b)
                            .map(|(x, y)| {
                                if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                                    y
                                } else {
                                    x
                                }
                            })
                            .collect()
                    },
                );
            best.into_iter()
                .map(|(a, m)| (a.max(0.0), (0..n).map(|y| m >> y & 1 == 1).collect()))
                .unzip()
        }
        ProfileMode::Sublevel => {
            let candidates = sublevel_candidates(mu, dtilde);
            let mut best: Vec<(f64, usize)> = vec![(f64::NEG_INFINITY, 0); nr];
            let mut hist = vec![0.0; nr];
            let mut curve = vec![0.0; nr];
            for (c, members) in candidates.iter().enumerate() {
                scanner.complement_curve(members, &mut hist, &mut curve);
                for t in 0..nr {
                    if curve[t] > best[t].0 {
                        best[t] = (curve[t], c);
                    }
                }
            }
            best.into_iter()
                .map(|(a, c)| {
                    let mut set = vec![false; n];
                    candidates[c].iter().for_each(|&y| set[y] = true);
                    (a.max(0.0), set)
                })
                .unzip()
        }
    };

    Ok(ConcentrationProfile {
        radii,
        alpha,
        witness_sets: witness_masks,
        exact: mode == ProfileMode::Exact,
    })
}

/// Minimal prefixes of mass at least 1/2 along several point orderings.
fn sublevel_candidates(mu: &ProbVector, dt: &SquareMatrix) -> Vec<Vec<usize>> {
    let n = mu.len();
    let w = mu.weights();
    let mut orders: Vec<Vec<usize>> = Vec::new();
    for x0 in 0..n {
        let mut near: Vec<usize> = (0..n).collect();
        near.sort_by(|&a, &b| dt.get(x0, a).total_cmp(&dt.get(x0, b)).then(a.cmp(&b)));
        let mut far = near.clone();
        far.reverse();
        orders.push(near);
        orders.push(far);
    }
    let mut by_weight: Vec<usize> = (0..n).collect();
    by_weight.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    orders.push(by_weight.clone());
    by_weight.reverse();
    orders.push(by_weight);
    orders.push((0..n).collect());
    orders.push((0..n).rev().collect());

    let mut out: Vec<Vec<usize>> = Vec::new();
    for ord in orders {
        let mut mass = 0.0;
        let mut set = Vec::new();
        for y in ord {
            set.push(y);
            mass += w[y];
            if mass >= 0.5 - MASS_TOL {
                break;
            }
        }
        set.sort_unstable();
        if !out.contains(&set) {
            out.push(set);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationFit {
    pub a_prime: f64,
    pub r_o: f64,
}

/// Smallest `a'` with `alpha(r) <= exp(-((r - r_o)₊)^p / a')` for a fixed `r_o`.
pub fn min_a_prime(profile: &ConcentrationProfile, p_o: f64, r_o: f64) -> f64 {
    let mut a: f64 = 0.0;
    for k in 0..profile.radii.len() {
        let alpha = profile.alpha[k];
        if alpha <= 0.0 {
            continue;
        }
        let r_next = match profile.radii.get(k + 1) {
            Some(&r) => r,
            None => return f64::INFINITY,
        };
        let excess = (r_next - r_o).max(0.0);
        if excess > 0.0 {
            a = a.max(excess.powf(p_o) / (-alpha.ln()));
        }
    }
    a
}

/// Fitted concentration constants with `r_o = 0`, the smallest admissible
/// offset, and the smallest `a'` for it.
pub fn fit_concentration_constants(profile: &ConcentrationProfile, p_o: f64) -> ConcentrationFit {
    ConcentrationFit { a_prime: min_a_prime(profile, p_o, 0.0), r_o: 0.0 }
}

/// Concentration constants from a finite exponential integral:
/// `a' = 1/delta`, `r_o = (log(2 I_delta) / delta)^{1/p_o}`.
pub fn constants_from_exp_integral(i_delta: f64, delta: f64, p_o: f64) -> Result<ConcentrationFit> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    if !i_delta.is_finite() {
        return Err(Error::InvalidInput("exponential integral is infinite".into()));
    }
    let r_o = ((2.0 * i_delta).ln().max(0.0) / delta).powf(1.0 / p_o);
    Ok(ConcentrationFit { a_prime: 1.0 / delta, r_o })
}

/// Concentration constants implied by `aH - T_c >= -b`:
/// `a' = a`, `r_o = (a log 2)^{1/p_o} + 2 b^{1/p_o}`.
pub fn constants_from_lower_bound(a: f64, b: f64, p_o: f64) -> ConcentrationFit {
    ConcentrationFit {
        a_prime: a,
        r_o: (a * std::f64::consts::LN_2).powf(1.0 / p_o) + 2.0 * b.max(0.0).powf(1.0 / p_o),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{induced_distance, FiniteMetricSpace, PowerTypeCost, SlopeOperator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> FiniteMetricSpace {
        FiniteMetricSpace::new(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn random_pv(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
        ProbVector::normalized((0..n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(ProbVector::new(vec![0.5, 0.6]), Err(Error::InvalidProbability(_))));
        assert!(matches!(ProbVector::new(vec![-0.1, 1.1]), Err(Error::InvalidProbability(_))));
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::normalized(vec![0.0, 0.0]).is_err());
        let p = ProbVector::normalized(vec![0.0, 2.0, 6.0]).unwrap();
        assert_eq!(p.weights(), &[0.0, 0.25, 0.75]);
        assert_eq!(p.support(), &[1, 2]);
        let q: ProbVector = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(serde_json::to_string(&q).unwrap(), "[0.25,0.75]");
        assert!(serde_json::from_str::<ProbVector>("[0.2, 0.2]").is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        let mu = ProbVector::uniform(2);
        assert_eq!(relative_entropy(&mu, &mu).unwrap(), 0.0);
        let delta = ProbVector::point_mass(2, 0);
        assert!((relative_entropy(&delta, &mu).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(relative_entropy(&mu, &delta).unwrap(), f64::INFINITY);
    }

    #[test]
    fn entropy_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let nu = random_pv(&mut rng, 4);
            let mu = random_pv(&mut rng, 4);
            // pairwise summation in a different order
            let terms: Vec<f64> = (0..4).map(|i| nu.get(i) * (nu.get(i).ln() - mu.get(i).ln())).collect();
            let oracle = (terms[3] + terms[2]) + (terms[1] + terms[0]);
            assert!((relative_entropy(&nu, &mu).unwrap() - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn log_density_requires_absolute_continuity() {
        let mu = ProbVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        let nu = ProbVector::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(log_density(&nu, &mu).unwrap_err(), Error::AbsoluteContinuityViolated(2));
        let l = log_density(&ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap(), &mu).unwrap();
        assert_eq!(l[1], f64::NEG_INFINITY);
    }

    #[test]
    fn fisher_two_point() {
        let s = two_point();
        let mu = ProbVector::uniform(2);
        let nu = ProbVector::new(vec![0.75, 0.25]).unwrap();
        let i = fisher_information(&nu, &mu, &s, &SlopeOperator::Global).unwrap();
        let expect = 0.25 * 3f64.ln().powi(2);
        assert!((i - expect).abs() < 1e-14, "{i} vs {expect}");
        assert_eq!(fisher_information(&mu, &mu, &s, &SlopeOperator::Global).unwrap(), 0.0);
    }

    #[test]
    fn fisher_ignores_constant_shifts() {
        let s = FiniteMetricSpace::grid(0.0, 1.0, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_pv(&mut rng, 6);
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tilt = |c: f64| {
            let lw: Vec<f64> = (0..6).map(|i| mu.get(i).ln() + g[i] + c).collect();
            ProbVector::from_log_weights(&lw).unwrap()
        };
        let a = fisher_information(&tilt(0.0), &mu, &s, &SlopeOperator::Global).unwrap();
        let b = fisher_information(&tilt(5.0), &mu, &s, &SlopeOperator::Global).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn exp_integral_closed_forms() {
        let s = two_point();
        let c = PowerTypeCost::square(&s);
        let mu = ProbVector::uniform(2);
        assert_eq!(exp_integral(&mu, c.matrix(), 0.0).unwrap().value, 1.0);
        let v = exp_integral(&mu, c.matrix(), 1.0).unwrap().value;
        let e = std::f64::consts::E;
        assert!((v - (2.0 + 2.0 * e) / 4.0).abs() < 1e-14);
    }

    #[test]
    fn exp_integral_gaussian_matches_double_sum() {
        let s = FiniteMetricSpace::grid(-6.0, 6.0, 201).unwrap();
        let x = s.points().unwrap().to_vec();
        let mu = ProbVector::normalized(x.iter().map(|x| (-x * x / 2.0).exp()).collect()).unwrap();
        let c = PowerTypeCost::square(&s);
        let v = exp_integral(&mu, c.matrix(), 0.2).unwrap().value;
        let mut oracle = 0.0;
        for i in 0..201 {
            let mut row = 0.0;
            for j in 0..201 {
                row += mu.get(j) * (0.2 * (x[i] - x[j]).powi(2)).exp();
            }
            oracle += mu.get(i) * row;
        }
        assert!((v - oracle).abs() < 1e-10 * oracle);
        let larger = exp_integral(&mu, c.matrix(), 0.24).unwrap().value;
        assert!(larger > v);
    }

    #[test]
    fn profile_trivial_cases() {
        let d = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let p = concentration_profile(&ProbVector::uniform(2), &d, ProfileMode::Exact).unwrap();
        assert_eq!(p.radii, vec![0.0, 1.0]);
        assert!((p.alpha[0] - 0.5).abs() < 1e-15);
        assert_eq!(p.alpha[1], 0.0);
        let atom = ProbVector::point_mass(2, 1);
        let p = concentration_profile(&atom, &d, ProfileMode::Exact).unwrap();
        assert!(p.alpha.iter().all(|&a| a == 0.0));
        let big = SquareMatrix::from_fn(21, |i, j| (i as f64 - j as f64).abs());
        assert!(matches!(
            concentration_profile(&ProbVector::uniform(21), &big, ProfileMode::Exact),
            Err(Error::TooLargeForExact { .. })
        ));
    }

    /// Independent brute force: for each radius, scan all subsets with mass
    /// at least one half and take the largest mass outside the closed
    /// `r`-enlargement.
    fn brute_profile(mu: &[f64], d: &SquareMatrix, radii: &[f64]) -> Vec<f64> {
        let n = mu.len();
        radii
            .iter()
            .map(|&r| {
                let mut best: f64 = 0.0;
                for mask in 1u32..(1 << n) {
                    let mass: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| mu[i]).sum();
                    if mass < 0.5 - 1e-12 {
                        continue;
                    }
                    let outside: f64 = (0..n)
                        .filter(|&x| (0..n).filter(|&y| mask >> y & 1 == 1).all(|y| d.get(x, y) > r + 1e-12))
                        .map(|x| mu[x])
                        .sum();
                    best = best.max(outside);
                }
                best
            })
            .collect()
    }

    #[test]
    fn exact_profile_matches_brute_force_on_path() {
        let d = SquareMatrix::from_fn(8, |i, j| (i as f64 - j as f64).abs());
        let mu = ProbVector::uniform(8);
        let p = concentration_profile(&mu, &d, ProfileMode::Exact).unwrap();
        let oracle = brute_profile(mu.weights(), &d, &p.radii);
        for (a, b) in p.alpha.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert_eq!(p.alpha[0], 0.5);
        assert_eq!(p.alpha[1], 0.375);
    }

    #[test]
    fn exact_profile_matches_brute_force_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut pts: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..5.0)).collect();
            pts.sort_by(f64::total_cmp);
            let s = FiniteMetricSpace::from_points(pts).unwrap();
            let mu = random_pv(&mut rng, 8);
            let p = concentration_profile(&mu, s.dist(), ProfileMode::Exact).unwrap();
            let oracle = brute_profile(mu.weights(), s.dist(), &p.radii);
            for (a, b) in p.alpha.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-13);
            }
            // sublevel mode never exceeds the exact profile
            let q = concentration_profile(&mu, s.dist(), ProfileMode::Sublevel).unwrap();
            assert!(!q.exact);
            for (a, b) in q.alpha.iter().zip(&p.alpha) {
                assert!(*a <= b + 1e-14);
            }
        }
    }

    #[test]
    fn witnesses_attain_the_profile() {
        let d = SquareMatrix::from_fn(6, |i, j| (i as f64 - j as f64).abs());
        let mu = ProbVector::normalized(vec![1.0, 2.0, 3.0, 1.0, 1.0, 4.0]).unwrap();
        let p = concentration_profile(&mu, &d, ProfileMode::Exact).unwrap();
        for (k, w) in p.witness_sets.iter().enumerate() {
            let mass: f64 = (0..6).filter(|&i| w[i]).map(|i| mu.get(i)).sum();
            assert!(mass >= 0.5 - 1e-12);
            let outside: f64 = (0..6)
                .filter(|&x| (0..6).filter(|&y| w[y]).all(|y| d.get(x, y) > p.radii[k]))
                .map(|x| mu.get(x))
                .sum();
            assert!((outside - p.alpha[k]).abs() < 1e-14);
        }
        let rows = p.csv_rows();
        assert_eq!(rows.len(), p.radii.len());
        assert_eq!(rows[0].2.len(), 6);
    }

    #[test]
    fn two_point_fit_matches_grid_search() {
        let d = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let p = concentration_profile(&ProbVector::uniform(2), &d, ProfileMode::Exact).unwrap();
        let fit = fit_concentration_constants(&p, 2.0);
        assert_eq!(fit.r_o, 0.0);
        assert!((fit.a_prime - 1.0 / std::f64::consts::LN_2).abs() < 1e-12);
        // grid search over a' at r_o = 0 for the smallest admissible value
        let mut smallest = f64::INFINITY;
        for k in 1..=20000 {
            let a = k as f64 * 1e-4;
            if p.bound_slack(2.0, a, 0.0) >= 0.0 {
                smallest = smallest.min(a);
            }
        }
        assert!((smallest - fit.a_prime).abs() < 1e-4);
        assert!(p.bound_slack(2.0, fit.a_prime, 0.0) >= -1e-15);
    }

    #[test]
    fn gaussian_fit_close_to_two() {
        let s = FiniteMetricSpace::grid(-6.0, 6.0, 201).unwrap();
        let x = s.points().unwrap().to_vec();
        let mu = ProbVector::normalized(x.iter().map(|x| (-x * x / 2.0).exp()).collect()).unwrap();
        let dt = induced_distance(&PowerTypeCost::square(&s)).unwrap();
        let p = concentration_profile(&mu, &dt, ProfileMode::Sublevel).unwrap();
        let fit = fit_concentration_constants(&p, 2.0);
        assert!((fit.a_prime - 2.0).abs() <= 0.3, "a' = {}", fit.a_prime);
    }

    #[test]
    fn exp_integral_constants_bound_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut pts: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..3.0)).collect();
            pts.sort_by(f64::total_cmp);
            let s = FiniteMetricSpace::from_points(pts).unwrap();
            let cost = PowerTypeCost::square(&s);
            let mu = random_pv(&mut rng, 9);
            let delta = rng.random_range(0.1..2.0);
            let ie = exp_integral(&mu, cost.matrix(), delta).unwrap();
            let fit = constants_from_exp_integral(ie.value, delta, 2.0).unwrap();
            let p = concentration_profile(&mu, &induced_distance(&cost).unwrap(), ProfileMode::Exact).unwrap();
            assert!(p.bound_slack(2.0, fit.a_prime, fit.r_o) >= -1e-12);
        }
    }
}
