//! Estimation of inequality constants and checks of the implications between
//! them.
//!
//! Suprema over all measures are reported as witnessed lower bounds. The
//! Talagrand constant and the uniqueness threshold `A(mu)` also get upper
//! certificates from global minimization. On a finite space the strict T2
//! constant is infinite: moving a small mass `m` by one step costs `W² ~ m`
//! while `H ~ m²`. Threshold searches therefore use an additive resolution
//! defect, so that a level fails only when some measure beats it by more than
//! the defect.

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::measures::{log_density, relative_entropy, ProbVector};
use crate::metric::{FiniteMetricSpace, PowerTypeCost, Profile, SlopeOperator};
use crate::numerics::{dot, log_sum_exp, neumaier_sum};
use crate::transport::{c_transform, ot_solve, subdifferential_costs, Side};
use crate::variational::{
    evaluate_full, minimize_fixed_point_from, minimize_mirror_from, multistart_battery,
    stationarity, FunctionalSpec, MinimizeConfig, StartStatus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Default chain tolerance: absolute part.
pub const CHAIN_ABS_TOL: f64 = 1e-6;
/// Default chain tolerance: relative part.
pub const CHAIN_REL_TOL: f64 = 0.01;
/// Best suite probes refined by gradient ascent.
const ASCENT_STARTS: usize = 3;

/// Half the smallest positive induced distance, raised to `p_o / 2`: the
/// scale below which `sqrt(T_c)` cannot resolve measures on the space.
pub fn resolution_defect(cost: &PowerTypeCost) -> f64 {
    let p = cost.exponent_po;
    let n = cost.n();
    let mut m = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let c = cost.c(i, j);
            if i != j && c > 0.0 {
                m = m.min(c);
            }
        }
    }
    if !m.is_finite() {
        return 0.0;
    }
    (0.5 * m.powf(1.0 / p)).powf(0.5 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn contains_in(&self, lo: f64, hi: f64) -> bool {
        lo <= self.lo && self.hi <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelProbe {
    pub a: f64,
    pub min_value: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Options {
    /// Additive defect; `None` selects [`resolution_defect`].
    pub defect: Option<f64>,
    /// Bisection stops when `hi - lo <= bracket_tol * max(1, lo)`.
    pub bracket_tol: f64,
    pub minimize: MinimizeConfig,
}

impl Default for T2Options {
    fn default() -> Self {
        Self { defect: None, bracket_tol: 1e-4, minimize: MinimizeConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Estimate {
    pub bracket: Bracket,
    pub defect: f64,
    /// Measure certifying the lower end: `sqrt(lo H) < W - defect` fails just below `lo`.
    pub witness: Option<ProbVector>,
    /// `W² / H` of the witness.
    pub witness_ratio: Option<f64>,
    pub probes: Vec<LevelProbe>,
}

/// Largest `a` at which `nu` violates `sqrt(a H) >= sqrt(T) - defect`.
fn breaking_level(h: f64, t: f64, defect: f64) -> f64 {
    let excess = (t.max(0.0).sqrt() - defect).max(0.0);
    if h <= 0.0 {
        return if excess > 0.0 { f64::INFINITY } else { 0.0 };
    }
    excess * excess / h
}

/// Bracket for the smallest `a` with `sqrt(a H(nu|mu)) >= sqrt(T_c(nu, mu)) - defect`
/// for all `nu`, by bisection on global minima of `sqrt(a H) - sqrt(T_c)`.
pub fn estimate_t2(mu: &ProbVector, cost: &PowerTypeCost, opts: &T2Options) -> Result<T2Estimate> {
    let c = cost.matrix();
    let defect = opts.defect.unwrap_or_else(|| resolution_defect(cost));
    if mu.support().len() <= 1 {
        return Ok(T2Estimate {
            bracket: Bracket { lo: 0.0, hi: 0.0 },
            defect,
            witness: None,
            witness_ratio: None,
            probes: Vec::new(),
        });
    }

    let mut lo = 0.0;
    let mut witness: Option<(ProbVector, f64, f64)> = None;
    let mut pool: Vec<ProbVector> = Vec::new();
    let absorb = |nu: &ProbVector, lo: &mut f64, witness: &mut Option<(ProbVector, f64, f64)>| -> Result<()> {
        let h = relative_entropy(nu, mu)?;
        let t = ot_solve(nu, mu, c)?.primal_cost;
        let lvl = breaking_level(h, t, defect);
        if lvl > *lo && lvl.is_finite() {
            *lo = lvl;
            *witness = Some((nu.clone(), h, t));
        }
        Ok(())
    };
    for s in multistart_battery(mu, c, opts.minimize.multistarts.max(2), opts.minimize.seed) {
        absorb(&s, &mut lo, &mut witness)?;
    }

    let mut probes = Vec::new();
    let mut test = |a: f64,
                    pool: &mut Vec<ProbVector>,
                    lo: &mut f64,
                    witness: &mut Option<(ProbVector, f64, f64)>|
     -> Result<bool> {
        let spec = FunctionalSpec::talagrand(a)?;
        let r = minimize_mirror_from(&spec, mu, c, &opts.minimize, pool, Some(-defect))?;
        let holds = r.value >= -defect;
        probes.push(LevelProbe { a, min_value: r.value, holds });
        if !holds {
            absorb(&r.minimizer, lo, witness)?;
            pool.insert(0, r.minimizer);
            pool.truncate(4);
        }
        Ok(holds)
    };

    // grow an upper level until it holds
    let mut hi = (2.0 * lo).max(f64::MIN_POSITIVE);
    if lo == 0.0 {
        hi = c.max().max(1.0);
    }
    let mut guard = 0;
    while !test(hi, &mut pool, &mut lo, &mut witness)? {
        hi = (2.0 * hi).max(2.0 * lo);
        guard += 1;
        if guard > 60 {
            return Err(Error::InvalidInput("no level certified T2 below 2^60 scale".into()));
        }
    }
    while hi - lo > opts.bracket_tol * lo.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if test(mid, &mut pool, &mut lo, &mut witness)? {
            hi = mid;
        } else {
            lo = lo.max(mid);
        }
    }
    let lo = lo.min(hi);
    let (w, wr) = match witness {
        Some((nu, h, t)) => (Some(nu), Some(t / h)),
        None => (None, None),
    };
    Ok(T2Estimate { bracket: Bracket { lo, hi }, defect, witness: w, witness_ratio: wr, probes })
}

/// Independent scan oracle on two points: the T2 threshold with a defect,
/// maximized over `nu_t = (t, 1 - t)` on a uniform grid of `t`.
pub fn scan_t2_two_point(mu: &ProbVector, cost: &SquareMatrix, defect: f64, steps: usize) -> f64 {
    assert_eq!(mu.len(), 2);
    let (m0, c01) = (mu.get(0), cost.get(0, 1));
    let mut best: f64 = 0.0;
    for k in 1..steps {
        let t = k as f64 / steps as f64;
        let h = t * (t / m0).ln() + (1.0 - t) * ((1.0 - t) / (1.0 - m0)).ln();
        let w = (t - m0).abs() * c01;
        best = best.max(breaking_level(h, w, defect));
    }
    best
}

/// Settings for the randomized density suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub tilts: usize,
    pub ascent_steps: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { tilts: 64, ascent_steps: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    /// Largest ratio found; a lower bound on the supremum.
    pub value: f64,
    pub witness: Option<ProbVector>,
    pub slope_op: SlopeOperator,
    pub probes: usize,
    /// Probes with `I = 0 < numerator`, skipped.
    pub degenerate_probes: usize,
    pub seed: u64,
}

/// Smooth random fields on the space: white noise convolved with a Gaussian
/// kernel of length `ell`, scaled to unit standard deviation under `mu`.
pub fn gaussian_field(space: &FiniteMetricSpace, mu: &ProbVector, ell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = space.n();
    let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut g: Vec<f64> = (0..n)
        .map(|i| {
            neumaier_sum((0..n).map(|j| {
                let d = space.d(i, j) / ell;
                (-0.5 * d * d).exp() * xi[j]
            }))
        })
        .collect();
    let mean = dot(&g, mu.weights());
    let var = neumaier_sum(mu.weights().iter().zip(&g).map(|(w, x)| w * (x - mean) * (x - mean)));
    let sd = var.sqrt().max(1e-300);
    g.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    g
}

#[derive(Clone, Copy)]
enum Numerator {
    Entropy,
    Transport,
}

struct RatioProblem<'a> {
    space: &'a FiniteMetricSpace,
    mu: &'a ProbVector,
    cost: Option<&'a SquareMatrix>,
    op: SlopeOperator,
    numerator: Numerator,
}

struct RatioEval {
    num: f64,
    fisher: f64,
    grad: Vec<f64>,
}

impl RatioProblem<'_> {
    fn measure(&self, g: &[f64]) -> Result<ProbVector> {
        let logw: Vec<f64> = (0..g.len())
            .map(|i| if self.mu.get(i) > 0.0 { self.mu.get(i).ln() + g[i] } else { f64::NEG_INFINITY })
            .collect();
        ProbVector::from_log_weights(&logw)
    }

    fn eval(&self, g: &[f64], with_grad: bool) -> Result<RatioEval> {
        let nu = self.measure(g)?;
        let n = nu.len();
        let ell = log_density(&nu, self.mu)?;
        let h = relative_entropy(&nu, self.mu)?;
        let (num, dnum): (f64, Vec<f64>) = match self.numerator {
            Numerator::Entropy => {
                let d = (0..n).map(|j| if nu.get(j) > 0.0 { nu.get(j) * (ell[j] - h) } else { 0.0 });
                (h, d.collect())
            }
            Numerator::Transport => {
                let sol = ot_solve(&nu, self.mu, self.cost.expect("transport numerator has a cost"))?;
                let mean = dot(&sol.psi, nu.weights());
                let d = (0..n).map(|j| if nu.get(j) > 0.0 { nu.get(j) * (sol.psi[j] - mean) } else { 0.0 });
                (sol.primal_cost.max(0.0), d.collect())
            }
        };
        // slopes with their maximizing neighbours
        let mut s = vec![0.0; n];
        let mut arg = vec![usize::MAX; n];
        for &x in nu.support() {
            for &y in nu.support() {
                if y == x {
                    continue;
                }
                let d = self.space.d(x, y);
                if !self.op.admits(d) {
                    continue;
                }
                let v = (ell[y] - ell[x]) / d;
                if v > s[x] {
                    s[x] = v;
                    arg[x] = y;
                }
            }
        }
        let fisher = neumaier_sum(nu.support().iter().map(|&i| nu.get(i) * s[i] * s[i]));
        let mut grad = Vec::new();
        if with_grad && num > 0.0 && fisher > 0.0 {
            let mut di = vec![0.0; n];
            for &j in nu.support() {
                di[j] += nu.get(j) * (s[j] * s[j] - fisher);
            }
            for &x in nu.support() {
                if arg[x] != usize::MAX {
                    let k = 2.0 * nu.get(x) * s[x] / self.space.d(x, arg[x]);
                    di[arg[x]] += k;
                    di[x] -= k;
                }
            }
            grad = (0..n).map(|j| dnum[j] / num - di[j] / fisher).collect();
        }
        Ok(RatioEval { num, fisher, grad })
    }

    /// Sigmoid tilts `t tanh((d(x, y) - r) / w)` across level sets of the
    /// distance to the two ends of a diametral pair, at `mu`-quantile radii,
    /// from grid-scale steps to smooth ramps.
    fn threshold_tilts(&self) -> Vec<Vec<f64>> {
        let n = self.space.n();
        let supp = self.mu.support();
        let y0 = supp[0];
        let y1 = *supp.iter().max_by(|&&a, &&b| self.space.d(y0, a).total_cmp(&self.space.d(y0, b))).expect("support");
        let diam = self.space.diameter().max(f64::MIN_POSITIVE);
        let widths = [self.space.min_separation().max(f64::MIN_POSITIVE), 0.02 * diam, 0.1 * diam, 0.3 * diam];
        let mut out = Vec::new();
        for y in [y0, y1] {
            let mut order: Vec<usize> = supp.to_vec();
            order.sort_by(|&a, &b| self.space.d(y, a).total_cmp(&self.space.d(y, b)));
            let mut cum = 0.0;
            let mut k = 0;
            for q in 1..10 {
                let target = q as f64 / 10.0;
                while k + 1 < order.len() && cum + self.mu.get(order[k]) < target {
                    cum += self.mu.get(order[k]);
                    k += 1;
                }
                let r = self.space.d(y, order[k]);
                for w in widths {
                    for t in [0.5, 2.0, 5.0, 10.0] {
                        out.push((0..n).map(|x| t * ((self.space.d(x, y) - r) / w).tanh()).collect());
                    }
                }
            }
        }
        out
    }

    /// Gradient ascent on the ratio from `g`.
    fn ascend(&self, mut g: Vec<f64>, mut ratio: f64, steps: usize) -> Result<(f64, Vec<f64>)> {
        for _ in 0..steps {
            let ev = self.eval(&g, true)?;
            if ev.grad.is_empty() {
                break;
            }
            let gmax = ev.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if gmax == 0.0 {
                break;
            }
            let mut eta = 0.5 / gmax;
            let mut improved = false;
            for _ in 0..30 {
                let cand: Vec<f64> = g.iter().zip(&ev.grad).map(|(x, d)| x + eta * d).collect();
                let ce = self.eval(&cand, false)?;
                if ce.fisher > 0.0 && ce.num / ce.fisher > ratio {
                    ratio = ce.num / ce.fisher;
                    g = cand;
                    improved = true;
                    break;
                }
                eta *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((ratio, g))
    }

    fn sup(&self, suite: &SuiteConfig) -> Result<RatioEstimate> {
        let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
        let lens = [0.05, 0.15, 0.5].map(|f| f * self.space.diameter().max(f64::MIN_POSITIVE));
        let strengths = [0.1, 0.3, 1.0, 3.0];
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut degenerate = 0;
        let mut probes = 0;
        if self.mu.support().len() > 1 {
            let mut candidates: Vec<Vec<f64>> = (0..suite.tilts)
                .map(|s| {
                    let field = gaussian_field(self.space, self.mu, lens[s % 3], &mut rng);
                    let t = strengths[(s / 3) % strengths.len()];
                    field.iter().map(|x| t * x).collect()
                })
                .collect();
            candidates.extend(self.threshold_tilts());
            for g in candidates {
                let ev = self.eval(&g, false)?;
                probes += 1;
                if ev.num <= 0.0 {
                    continue;
                }
                if ev.fisher <= 0.0 {
                    degenerate += 1;
                    continue;
                }
                scored.push((ev.num / ev.fisher, g));
            }
        }
        if scored.is_empty() {
            if degenerate > 0 {
                return Err(Error::DegenerateSlope);
            }
            return Ok(RatioEstimate {
                value: 0.0,
                witness: None,
                slope_op: self.op,
                probes,
                degenerate_probes: degenerate,
                seed: suite.seed,
            });
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(ASCENT_STARTS);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for (r, g) in scored {
            let (r, g) = self.ascend(g, r, suite.ascent_steps)?;
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, g));
            }
        }
        let (ratio, g) = best.expect("nonempty");
        let nu = self.measure(&g)?;
        Ok(RatioEstimate {
            value: ratio,
            witness: Some(nu),
            slope_op: self.op,
            probes,
            degenerate_probes: degenerate,
            seed: suite.seed,
        })
    }
}

/// `sup H(nu|mu) / I(nu|mu)` over the tilt suite with ascent refinement.
pub fn estimate_lsi(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    op: &SlopeOperator,
    suite: &SuiteConfig,
) -> Result<RatioEstimate> {
    RatioProblem { space, mu, cost: None, op: *op, numerator: Numerator::Entropy }.sup(suite)
}

/// `sup T_c(nu, mu) / I(nu|mu)` over the tilt suite with ascent refinement.
pub fn estimate_w2i(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    cost: &PowerTypeCost,
    op: &SlopeOperator,
    suite: &SuiteConfig,
) -> Result<RatioEstimate> {
    RatioProblem { space, mu, cost: Some(cost.matrix()), op: *op, numerator: Numerator::Transport }
        .sup(suite)
}

/// H/I and T/I of a given density, for re-evaluating witnesses.
pub fn ratios_of(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    nu: &ProbVector,
    cost: &SquareMatrix,
    op: &SlopeOperator,
) -> Result<(f64, f64)> {
    let h = relative_entropy(nu, mu)?;
    let i = crate::measures::fisher_information(nu, mu, space, op)?;
    let t = ot_solve(nu, mu, cost)?.primal_cost;
    Ok((h / i, t / i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AMuOptions {
    pub bracket_tol: f64,
    /// Fixed points within this TV of `mu` count as trivial.
    pub trivial_tv: f64,
    /// Non-trivial fixed points must also reach `F_a < -value_defect`;
    /// `None` selects the square of [`resolution_defect`], 0 disables.
    pub value_defect: Option<f64>,
    /// Levels are searched up to this value.
    pub a_max: f64,
    pub minimize: MinimizeConfig,
}

impl Default for AMuOptions {
    fn default() -> Self {
        Self {
            bracket_tol: 1e-3,
            trivial_tv: 1e-6,
            value_defect: None,
            a_max: 1e6,
            minimize: MinimizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AMuEstimate {
    pub bracket: Bracket,
    pub value_defect: f64,
    /// Levels where neither certificate held.
    pub inconclusive_levels: Vec<f64>,
    /// The search reached `a_max` without a trivial level.
    pub unbounded: bool,
    pub probes: Vec<LevelProbe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AVerdict {
    Above,
    Below,
    Inconclusive,
}

/// Bracket for the threshold above which the identity-spec critical-point
/// equation only has the trivial solution.
pub fn estimate_a_mu(mu: &ProbVector, cost: &PowerTypeCost, opts: &AMuOptions) -> Result<AMuEstimate> {
    let c = cost.matrix();
    let value_defect = opts.value_defect.unwrap_or_else(|| resolution_defect(cost).powi(2));
    if mu.support().len() <= 1 {
        return Ok(AMuEstimate {
            bracket: Bracket { lo: 0.0, hi: 0.0 },
            value_defect,
            inconclusive_levels: Vec::new(),
            unbounded: false,
            probes: Vec::new(),
        });
    }
    let mut probes = Vec::new();
    let mut inconclusive = Vec::new();
    let mut classify = |a: f64| -> Result<AVerdict> {
        let spec = FunctionalSpec::linear(a)?;
        let r = minimize_fixed_point_from(&spec, mu, c, &opts.minimize, &[])?;
        let mut nontrivial = false;
        let mut unresolved = false;
        // classify the best point and every tie; other starts are local fixed points
        for nu in &r.ties {
            if nu.tv(mu) <= opts.trivial_tv {
                continue;
            }
            let ev = evaluate_full(&spec, nu, mu, c)?;
            if ev.value >= -value_defect {
                continue;
            }
            match stationarity(&spec, nu, mu, c)? {
                Some((_, res, _)) if res <= 1e-6 => nontrivial = true,
                _ => unresolved = true,
            }
        }
        let converged_all = r.starts.iter().all(|s| s.status == StartStatus::Converged);
        let verdict = if nontrivial {
            AVerdict::Below
        } else if unresolved || !converged_all && r.value < -value_defect {
            AVerdict::Inconclusive
        } else {
            AVerdict::Above
        };
        probes.push(LevelProbe { a, min_value: r.value, holds: verdict == AVerdict::Above });
        Ok(verdict)
    };

    let mut lo = 0.0;
    let mut hi = c.max().max(1e-12);
    let mut unbounded = false;
    loop {
        match classify(hi)? {
            AVerdict::Above => break,
            AVerdict::Below => lo = hi,
            AVerdict::Inconclusive => inconclusive.push(hi),
        }
        if hi >= opts.a_max {
            unbounded = true;
            break;
        }
        hi = (2.0 * hi).min(opts.a_max);
    }
    if unbounded {
        return Ok(AMuEstimate {
            bracket: Bracket { lo, hi: f64::INFINITY },
            value_defect,
            inconclusive_levels: inconclusive,
            unbounded,
            probes,
        });
    }
    while hi - lo > opts.bracket_tol * lo.max(1.0) {
        let mid = 0.5 * (lo + hi);
        match classify(mid)? {
            AVerdict::Above => hi = mid,
            AVerdict::Below => lo = mid,
            AVerdict::Inconclusive => {
                inconclusive.push(mid);
                // widen conservatively: keep the upper certificate, stop refining
                break;
            }
        }
    }
    Ok(AMuEstimate {
        bracket: Bracket { lo, hi },
        value_defect,
        inconclusive_levels: inconclusive,
        unbounded,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    /// Relative inflation applied to suite-based lower bounds.
    pub margin: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { margin: 0.10, abs_tol: CHAIN_ABS_TOL, rel_tol: CHAIN_REL_TOL }
    }
}

impl ChainOptions {
    /// `lhs <= rhs` up to the chain tolerance.
    pub fn le(&self, lhs: f64, rhs: f64) -> bool {
        lhs <= rhs + self.abs_tol + self.rel_tol * rhs.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubdifferentialCheck {
    pub measures: usize,
    /// `Σ_ij π_ij c_ij - Σ_ij π_ij s_i^{p_o}` minimized over measures; never negative.
    pub worst_slack: f64,
    pub holds: bool,
    /// `max_x |∇⁺psi|(x) - 2 s(x) - reach`; only for the unmodified square cost.
    pub slope_excess: Option<f64>,
    pub slope_holds: Option<bool>,
}

/// Checks `∫ s^{p_o} dπ <= ∫ c dπ` with `s` the distance to the plan support,
/// and for the square cost `|∇⁺psi| <= 2 s + reach`, on each measure.
pub fn subdifferential_check(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    cost: &PowerTypeCost,
    op: &SlopeOperator,
    measures: &[ProbVector],
) -> Result<SubdifferentialCheck> {
    let c = cost.matrix();
    let square = cost.profile == Profile::Square && cost.truncation_level.is_none();
    let reach = op.reach(space);
    let mut worst_slack = f64::INFINITY;
    let mut slope_excess: f64 = f64::NEG_INFINITY;
    for nu in measures {
        let sol = ot_solve(nu, mu, c)?;
        let s_cost = subdifferential_costs(&sol, c);
        let n = c.n();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = sol.plan.get(i, j);
                if p > 0.0 {
                    lhs += p * s_cost[i].expect("row with positive plan mass");
                    rhs += p * c.get(i, j);
                }
            }
        }
        worst_slack = worst_slack.min(rhs - lhs);
        if square {
            let slopes = crate::metric::slope(space, op, &sol.psi);
            for &i in nu.support() {
                let s = s_cost[i].expect("support row").sqrt();
                slope_excess = slope_excess.max(slopes[i] - 2.0 * s - reach);
            }
        }
    }
    let holds = measures.is_empty() || worst_slack >= 0.0;
    let (slope_excess, slope_holds) = if square && !measures.is_empty() {
        (Some(slope_excess), Some(slope_excess <= 1e-9))
    } else {
        (None, None)
    };
    Ok(SubdifferentialCheck {
        measures: measures.len(),
        worst_slack: if measures.is_empty() { 0.0 } else { worst_slack },
        holds,
        slope_excess,
        slope_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OttoVillaniReport {
    pub c_t2: T2Estimate,
    pub c_lsi: RatioEstimate,
    /// `4 c_lsi (1 + margin)`.
    pub bound: f64,
    pub holds: bool,
    pub subdifferential: SubdifferentialCheck,
}

pub fn verify_otto_villani(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    cost: &PowerTypeCost,
    op: &SlopeOperator,
    c_t2: &T2Estimate,
    suite: &SuiteConfig,
    chain: &ChainOptions,
) -> Result<OttoVillaniReport> {
    let c_lsi = estimate_lsi(space, mu, op, suite)?;
    let bound = 4.0 * c_lsi.value * (1.0 + chain.margin);
    let holds = c_t2.bracket.hi <= bound + chain.abs_tol;
    let mut probes: Vec<ProbVector> = c_t2.witness.iter().cloned().collect();
    probes.extend(c_lsi.witness.iter().cloned());
    probes.extend(suite_measures(space, mu, suite, 16));
    let subdifferential = subdifferential_check(space, mu, cost, op, &probes)?;
    Ok(OttoVillaniReport { c_t2: c_t2.clone(), c_lsi, bound, holds, subdifferential })
}

/// A few measures from the tilt suite, for support checks.
pub fn suite_measures(space: &FiniteMetricSpace, mu: &ProbVector, suite: &SuiteConfig, count: usize) -> Vec<ProbVector> {
    if mu.support().len() <= 1 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed ^ 0x5eed);
    let lens = [0.05, 0.15, 0.5].map(|f| f * space.diameter().max(f64::MIN_POSITIVE));
    (0..count)
        .map(|s| {
            let g = gaussian_field(space, mu, lens[s % 3], &mut rng);
            let logw: Vec<f64> = (0..g.len())
                .map(|i| if mu.get(i) > 0.0 { mu.get(i).ln() + g[i] } else { f64::NEG_INFINITY })
                .collect();
            ProbVector::from_log_weights(&logw).expect("finite tilt")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2iReport {
    pub c_t2: T2Estimate,
    pub c_w2i: RatioEstimate,
    /// `2 sqrt(c_w2i (1 + margin))`.
    pub bound: f64,
    pub holds: bool,
}

pub fn verify_w2i(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    cost: &PowerTypeCost,
    op: &SlopeOperator,
    c_t2: &T2Estimate,
    suite: &SuiteConfig,
    chain: &ChainOptions,
) -> Result<W2iReport> {
    let c_w2i = estimate_w2i(space, mu, cost, op, suite)?;
    let bound = 2.0 * c_w2i.value.sqrt() * (1.0 + chain.margin);
    let holds = c_t2.bracket.hi <= bound + chain.abs_tol;
    Ok(W2iReport { c_t2: c_t2.clone(), c_w2i, bound, holds })
}

/// Samples of `f(x) = min_y -g(y) + lambda d(x, y)²` with `lambda < lambda_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiconcaveClass {
    pub lambda_o: f64,
    pub samples: Vec<SemiconcaveSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiconcaveSample {
    pub lambda: f64,
    pub f: Vec<f64>,
}

impl SemiconcaveClass {
    pub fn sample(
        space: &FiniteMetricSpace,
        mu: &ProbVector,
        lambda_o: f64,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(lambda_o.is_finite() && lambda_o > 0.0) {
            return Err(Error::InvalidInput(format!("lambda_o must be positive, got {lambda_o}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.n();
        let lens = [0.05, 0.15, 0.5].map(|f| f * space.diameter().max(f64::MIN_POSITIVE));
        let amps = [0.5, 1.0, 2.0, 4.0];
        let samples = (0..count)
            .map(|s| {
                let lambda = lambda_o * rng.random_range(0.05..1.0);
                let amp = amps[(s / 3) % amps.len()];
                let g: Vec<f64> =
                    gaussian_field(space, mu, lens[s % 3], &mut rng).iter().map(|x| amp * x).collect();
                let f = (0..n)
                    .map(|x| {
                        (0..n)
                            .map(|y| -g[y] + lambda * space.d(x, y).powi(2))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                SemiconcaveSample { lambda, f }
            })
            .collect();
        Ok(Self { lambda_o, samples })
    }

    /// Worst `f(m) - f(x)/2 - f(z)/2 + lambda |x - z|² / 4` over grid midpoints.
    pub fn midpoint_slack(&self, space: &FiniteMetricSpace) -> Result<f64> {
        let pts = space.points().ok_or(Error::NotAGrid)?;
        let n = pts.len();
        let mut worst = f64::INFINITY;
        for s in &self.samples {
            for i in 0..n {
                for j in ((i + 2)..n).step_by(2) {
                    let m = (i + j) / 2;
                    let dx = pts[j] - pts[i];
                    let slack = s.f[m] - 0.5 * s.f[i] - 0.5 * s.f[j] + 0.25 * s.lambda * dx * dx;
                    worst = worst.min(slack);
                }
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedLsiReport {
    pub lambda_o: f64,
    pub d_restricted: f64,
    pub midpoint_slack: f64,
    pub midpoint_ok: bool,
    pub c_t2: T2Estimate,
    /// `max(4 D (1 + margin), 1 / lambda_o)`.
    pub bound: f64,
    pub holds: bool,
}

pub fn verify_restricted_lsi(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    op: &SlopeOperator,
    class: &SemiconcaveClass,
    c_t2: &T2Estimate,
    chain: &ChainOptions,
) -> Result<RestrictedLsiReport> {
    let midpoint_slack = class.midpoint_slack(space)?;
    let mut d_restricted: f64 = 0.0;
    for s in &class.samples {
        let logw: Vec<f64> = (0..s.f.len())
            .map(|i| if mu.get(i) > 0.0 { mu.get(i).ln() + s.f[i] } else { f64::NEG_INFINITY })
            .collect();
        let nu = ProbVector::from_log_weights(&logw)?;
        let h = relative_entropy(&nu, mu)?;
        let i = crate::measures::fisher_information(&nu, mu, space, op)?;
        if h > 0.0 && i > 0.0 {
            d_restricted = d_restricted.max(h / i);
        }
    }
    let bound = (4.0 * d_restricted * (1.0 + chain.margin)).max(1.0 / class.lambda_o);
    let holds = c_t2.bracket.hi <= bound + chain.abs_tol;
    let scale = class.samples.iter().flat_map(|s| s.f.iter()).fold(1.0f64, |m, x| m.max(x.abs()));
    Ok(RestrictedLsiReport {
        lambda_o: class.lambda_o,
        d_restricted,
        midpoint_slack,
        midpoint_ok: midpoint_slack >= -1e-12 * scale,
        c_t2: c_t2.clone(),
        bound,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub t2_le_a_mu: bool,
    pub a_mu_le_w2i: bool,
    pub w2i_le_lsi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub c_t2: T2Estimate,
    pub c_lsi: RatioEstimate,
    pub c_w2i: RatioEstimate,
    pub a_mu: AMuEstimate,
    pub chain_ok: ChainReport,
    /// Suite-based constants are lower bounds; upper certificates exist only
    /// for `c_t2` and `a_mu`.
    pub note: String,
}

#[allow(clippy::too_many_arguments)]
pub fn constants_report(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    cost: &PowerTypeCost,
    op: &SlopeOperator,
    t2: &T2Options,
    a_mu: &AMuOptions,
    suite: &SuiteConfig,
    chain: &ChainOptions,
) -> Result<ConstantsReport> {
    let c_t2 = estimate_t2(mu, cost, t2)?;
    let c_lsi = estimate_lsi(space, mu, op, suite)?;
    let c_w2i = estimate_w2i(space, mu, cost, op, suite)?;
    let a_est = estimate_a_mu(mu, cost, a_mu)?;
    let m = 1.0 + chain.margin;
    let chain_ok = ChainReport {
        t2_le_a_mu: chain.le(c_t2.bracket.lo, a_est.bracket.hi),
        a_mu_le_w2i: chain.le(a_est.bracket.lo, 2.0 * (c_w2i.value * m).sqrt()),
        w2i_le_lsi: chain.le(2.0 * c_w2i.value.sqrt(), 4.0 * c_lsi.value * m),
    };
    Ok(ConstantsReport {
        c_t2,
        c_lsi,
        c_w2i,
        a_mu: a_est,
        chain_ok,
        note: "c_lsi and c_w2i are suite lower bounds inflated by the margin in chain checks; \
               c_t2 and a_mu brackets are relative to their resolution defects"
            .into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualResult {
    pub value: f64,
    pub psi: Vec<f64>,
    pub start_values: Vec<f64>,
}

struct Dual<'a> {
    mu: &'a ProbVector,
    cost: &'a SquareMatrix,
    a: f64,
    supp: Vec<usize>,
}

impl Dual<'_> {
    /// `-Σ psi^c mu - a log Σ e^{psi/a} mu` on `supp(mu)`.
    fn value(&self, psi: &[f64]) -> f64 {
        let phi = self.transform(psi);
        let lin = neumaier_sum(self.supp.iter().map(|&y| self.mu.get(y) * phi[y]));
        let logs: Vec<f64> = self.supp.iter().map(|&x| psi[x] / self.a + self.mu.get(x).ln()).collect();
        -lin - self.a * log_sum_exp(&logs)
    }

    fn transform(&self, psi: &[f64]) -> Vec<f64> {
        let n = self.mu.len();
        let mut phi = vec![f64::INFINITY; n];
        for &y in &self.supp {
            phi[y] = self
                .supp
                .iter()
                .map(|&x| self.cost.get(x, y) - psi[x])
                .fold(f64::INFINITY, f64::min);
        }
        phi
    }

    /// Subgradient `m - nu`: `m_x` is the `mu`-mass whose transform is attained at `x`.
    fn gradient(&self, psi: &[f64]) -> Vec<f64> {
        let n = self.mu.len();
        let mut g = vec![0.0; n];
        for &y in &self.supp {
            let mut best = (f64::INFINITY, usize::MAX);
            for &x in &self.supp {
                let v = self.cost.get(x, y) - psi[x];
                if v < best.0 {
                    best = (v, x);
                }
            }
            g[best.1] += self.mu.get(y);
        }
        let logs: Vec<f64> = self.supp.iter().map(|&x| psi[x] / self.a + self.mu.get(x).ln()).collect();
        let lse = log_sum_exp(&logs);
        for (k, &x) in self.supp.iter().enumerate() {
            g[x] -= (logs[k] - lse).exp();
        }
        g
    }

    /// Exact minimization along coordinate `x`: the objective is concave
    /// between the breakpoints where `x` enters or leaves an argmin.
    fn coordinate_step(&self, psi: &mut [f64], x: usize, current: f64) -> f64 {
        let mut best = (current, psi[x]);
        let orig = psi[x];
        for &y in &self.supp {
            let other = self
                .supp
                .iter()
                .filter(|&&z| z != x)
                .map(|&z| self.cost.get(z, y) - psi[z])
                .fold(f64::INFINITY, f64::min);
            if !other.is_finite() {
                continue;
            }
            let bp = self.cost.get(x, y) - other;
            psi[x] = bp;
            let v = self.value(psi);
            if v < best.0 {
                best = (v, bp);
            }
        }
        psi[x] = if best.0 < current { best.1 } else { orig };
        best.0.min(current)
    }

    /// Replaces `psi` by a Kantorovich potential for `(e^{psi/a} mu, mu)`:
    /// the linearization of the log-term is minimized exactly by it.
    fn potential_step(&self, psi: &[f64]) -> Option<(f64, Vec<f64>)> {
        let logw: Vec<f64> = (0..psi.len())
            .map(|x| if self.mu.get(x) > 0.0 { psi[x] / self.a + self.mu.get(x).ln() } else { f64::NEG_INFINITY })
            .collect();
        let nu = ProbVector::from_log_weights(&logw).ok()?;
        let sol = ot_solve(&nu, self.mu, self.cost).ok()?;
        let mut next = sol.psi;
        for (x, p) in next.iter_mut().enumerate() {
            if !p.is_finite() || self.mu.get(x) == 0.0 {
                *p = psi[x];
            }
        }
        Some((self.value(&next), next))
    }

    fn descend(&self, mut psi: Vec<f64>, max_iter: usize) -> (f64, Vec<f64>) {
        let mut val = self.value(&psi);
        for _ in 0..max_iter {
            let start = val;
            let g = self.gradient(&psi);
            let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if gmax > 0.0 {
                let scale = self.cost.max().max(1e-12);
                let mut eta = scale / gmax;
                for _ in 0..40 {
                    let cand: Vec<f64> = psi.iter().zip(&g).map(|(p, d)| p - eta * d).collect();
                    let cv = self.value(&cand);
                    if cv < val {
                        psi = cand;
                        val = cv;
                        break;
                    }
                    eta *= 0.5;
                }
            }
            if let Some((v, p)) = self.potential_step(&psi) {
                if v < val {
                    val = v;
                    psi = p;
                }
            }
            for k in 0..self.supp.len() {
                let x = self.supp[k];
                val = self.coordinate_step(&mut psi, x, val);
            }
            if start - val <= 1e-15 * val.abs().max(1.0) {
                break;
            }
        }
        (val, psi)
    }
}

/// `inf_psi -Σ psi^c mu - a log Σ e^{psi/a} mu` for the identity spec.
pub fn dual_value(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    cfg: &MinimizeConfig,
) -> Result<DualResult> {
    use crate::variational::ScalarProfile::Identity;
    if spec.alpha != Identity || spec.beta != Identity {
        return Err(Error::InvalidFunctional("dual formulation needs alpha = beta = identity".into()));
    }
    if cost.n() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: cost.n() });
    }
    let dual = Dual { mu, cost, a: spec.a, supp: mu.support().to_vec() };
    let n = mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd0a1);
    let scale = cost.max().max(1e-12);
    let mut results = Vec::new();
    let supp = mu.support();
    for s in 0..cfg.multistarts.max(1) {
        let psi: Vec<f64> = if s == 0 {
            vec![0.0; n]
        } else if s % 2 == 0 {
            // concentrate e^{psi/a} mu near a random support point
            let y = supp[rng.random_range(0..supp.len())];
            let k = [0.5, 2.0, 8.0][(s / 2) % 3];
            (0..n).map(|x| -k * cost.get(x, y)).collect()
        } else {
            let amp = scale * [0.1, 0.5, 1.0, 2.0][(s / 2) % 4];
            (0..n).map(|_| amp * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        results.push(dual.descend(psi, cfg.max_iter));
    }
    let start_values: Vec<f64> = results.iter().map(|r| r.0).collect();
    let mut best = (0..results.len())
        .min_by(|&x, &y| results[x].0.total_cmp(&results[y].0).then(x.cmp(&y)))
        .expect("at least one start");
    // perturbation restarts around the incumbent
    let mut stale = 0;
    while stale < 2 * cfg.multistarts.max(1) {
        let amp = scale * [0.02, 0.1, 0.5][stale % 3];
        let psi: Vec<f64> =
            results[best].1.iter().map(|p| p + amp * rng.sample::<f64, _>(StandardNormal)).collect();
        let cand = dual.descend(psi, cfg.max_iter);
        if cand.0 < results[best].0 - 1e-13 * results[best].0.abs().max(1.0) {
            results.push(cand);
            best = results.len() - 1;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let (value, psi) = results.swap_remove(best);
    Ok(DualResult { value, psi, start_values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaProfile {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    pub d2v: Vec<f64>,
    pub pre_ma: Vec<f64>,
    pub ma: Vec<f64>,
    /// Points within `stencil` of an end use one-sided differences and are
    /// excluded from the norms.
    pub boundary: Vec<bool>,
    pub stencil: usize,
    pub rms_pre_ma: f64,
    pub rms_ma: f64,
    /// Smallest second difference of `V + x² / lambda_bar`.
    pub min_convexity_second_difference: f64,
}

impl MaProfile {
    /// Rows `(x, V, V', V'', preMA, MA)`.
    pub fn csv_rows(&self) -> Vec<[f64; 6]> {
        (0..self.x.len())
            .map(|i| [self.x[i], self.v[i], self.dv[i], self.d2v[i], self.pre_ma[i], self.ma[i]])
            .collect()
    }
}

/// Monotone rearrangement of `nu` onto `mu` on sorted points: barycentre of
/// the quantile coupling from each source point.
pub fn quantile_map(points: &[f64], nu: &ProbVector, mu: &ProbVector) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![f64::NAN; n];
    let mut j = 0;
    let mut left_mu = mu.get(0);
    for (i, o) in out.iter_mut().enumerate() {
        let mut left = nu.get(i);
        if left <= 0.0 {
            continue;
        }
        let total = left;
        let mut moment = 0.0;
        while left > 0.0 && j < n {
            let take = left.min(left_mu);
            moment += take * points[j];
            left -= take;
            left_mu -= take;
            if left_mu <= 1e-300 {
                j += 1;
                left_mu = if j < n { mu.get(j) } else { 0.0 };
            }
            if take == 0.0 && left_mu <= 0.0 && j >= n {
                break;
            }
        }
        *o = moment / (total - left.max(0.0));
    }
    out
}

/// Default finite-difference spacing in grid steps for `n` points.
///
/// Second differences of a discrete potential are quantized at the grid
/// scale, so derivatives are taken over `m ~ sqrt(n) / 2` steps; both the
/// truncation error `(m h)²` and the quantization error `1 / m` then vanish
/// under refinement.
pub fn default_stencil(n: usize) -> usize {
    (((n.max(2) - 1) as f64).sqrt() / 2.0).ceil().max(1.0) as usize
}

/// Residuals of the 1D stationarity equations for `nu = e^{-V} mu`, with
/// central differences over `stencil` grid steps.
pub fn ma_residual_1d(
    space: &FiniteMetricSpace,
    mu: &ProbVector,
    nu: &ProbVector,
    lambda_bar: f64,
    stencil: usize,
) -> Result<MaProfile> {
    let x = space.points().ok_or(Error::NotAGrid)?.to_vec();
    let n = x.len();
    let m = stencil.max(1);
    if n < 2 * m + 1 {
        return Err(Error::InvalidInput(format!("need at least {} grid points for stencil {m}", 2 * m + 1)));
    }
    if !(lambda_bar.is_finite() && lambda_bar > 0.0) {
        return Err(Error::InvalidInput(format!("lambda_bar must be positive, got {lambda_bar}")));
    }
    if nu.support().len() != n || mu.support().len() != n {
        return Err(Error::InvalidInput("minimizer and reference must have full support".into()));
    }
    let step = (x[n - 1] - x[0]) / (n - 1) as f64;
    let span = m as f64 * step;
    let v: Vec<f64> = (0..n).map(|i| -(nu.get(i) / mu.get(i)).ln()).collect();
    let boundary: Vec<bool> = (0..n).map(|i| i < m || i + m >= n).collect();
    let mut dv = vec![0.0; n];
    let mut d2v = vec![0.0; n];
    for i in m..n - m {
        dv[i] = (v[i + m] - v[i - m]) / (2.0 * span);
        d2v[i] = (v[i + m] - 2.0 * v[i] + v[i - m]) / (span * span);
    }
    // one-sided near the ends
    for i in 0..n {
        if boundary[i] {
            let (a, b) = if i < m { (i, i + m) } else { (i - m, i) };
            dv[i] = (v[b] - v[a]) / span;
            d2v[i] = if i < m { d2v[m] } else { d2v[n - 1 - m] };
        }
    }
    let t = quantile_map(&x, nu, mu);
    let density = |z: f64| -> f64 {
        if z < x[0] || z > x[n - 1] {
            return 0.0;
        }
        let u = (z - x[0]) / step;
        let k = (u.floor() as usize).min(n - 2);
        let f = u - k as f64;
        ((1.0 - f) * mu.get(k) + f * mu.get(k + 1)) / step
    };
    let half = 0.5 * lambda_bar;
    let pre_ma: Vec<f64> = (0..n).map(|i| lambda_bar * dv[i] - 2.0 * (t[i] - x[i])).collect();
    let ma: Vec<f64> = (0..n)
        .map(|i| density(x[i] + half * dv[i]) * (1.0 + half * d2v[i]) - (-v[i]).exp() * density(x[i]))
        .collect();
    let rms = |r: &[f64]| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in (0..n).filter(|&i| !boundary[i]) {
            num += nu.get(i) * r[i] * r[i];
            den += nu.get(i);
        }
        (num / den).sqrt()
    };
    let w: Vec<f64> = (0..n).map(|k| v[k] + x[k] * x[k] / lambda_bar).collect();
    let min_conv = (1..n - 1).map(|i| w[i + 1] - 2.0 * w[i] + w[i - 1]).fold(f64::INFINITY, f64::min);
    Ok(MaProfile {
        rms_pre_ma: rms(&pre_ma),
        rms_ma: rms(&ma),
        stencil: m,
        x,
        v,
        dv,
        d2v,
        pre_ma,
        ma,
        boundary,
        min_convexity_second_difference: min_conv,
    })
}

/// `c_transform` on the `mu` side, re-exported for dual checks.
pub fn conjugate(psi: &[f64], cost: &SquareMatrix) -> Vec<f64> {
    c_transform(psi, cost, Side::Mu)
}
