//! The functional `F_a(nu) = alpha(a H(nu|mu)) - beta(T_c(nu, mu))`.
//!
//! Minimization runs from a deterministic battery of starting measures:
//! `mu` itself, exponential tilts `e^{t g} mu` and Dirichlet draws. Each start
//! owns its solver state, so starts are evaluated in parallel and merged by
//! (value, start index).

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::measures::{exp_integral, log_density, relative_entropy, ProbVector};
use crate::numerics::{dot, golden_section, neumaier_sum};
use crate::transport::{ot_solve, TransportSolution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `lambda_bar` is clamped to this range when `alpha` is singular at 0.
pub const LAMBDA_CLAMP: (f64, f64) = (1e-8, 1e8);

/// Measures with entropy below this are treated as `mu` itself.
pub const REFERENCE_BALL: f64 = 1e-10;

/// Scalar profiles for `alpha` and `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarProfile {
    Sqrt,
    Identity,
    Power(f64),
}

impl ScalarProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ScalarProfile::Sqrt => t.sqrt(),
            ScalarProfile::Identity => t,
            ScalarProfile::Power(q) => t.powf(q),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match *self {
            ScalarProfile::Sqrt => 0.5 / t.sqrt(),
            ScalarProfile::Identity => 1.0,
            ScalarProfile::Power(q) => {
                if t == 0.0 {
                    if q < 1.0 {
                        f64::INFINITY
                    } else if q == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    q * t.powf(q - 1.0)
                }
            }
        }
    }

    /// Growth exponent at infinity.
    pub fn exponent(&self) -> f64 {
        match *self {
            ScalarProfile::Sqrt => 0.5,
            ScalarProfile::Identity => 1.0,
            ScalarProfile::Power(q) => q,
        }
    }

    pub fn singular_at_zero(&self) -> bool {
        self.deriv(0.0).is_infinite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub alpha: ScalarProfile,
    pub beta: ScalarProfile,
    pub a: f64,
}

impl FunctionalSpec {
    /// Rejects pairs for which `t -> alpha(t) - beta(t + b)` is unbounded below.
    pub fn new(alpha: ScalarProfile, beta: ScalarProfile, a: f64) -> Result<Self> {
        for p in [alpha, beta] {
            if let ScalarProfile::Power(q) = p {
                if !(q.is_finite() && q > 0.0) {
                    return Err(Error::InvalidFunctional(format!("power exponent {q} must be > 0")));
                }
            }
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidFunctional(format!("a must be positive, got {a}")));
        }
        let (ea, eb) = (alpha.exponent(), beta.exponent());
        if ea < eb || (ea == eb && ea > 1.0) {
            return Err(Error::InvalidFunctional(format!(
                "alpha(t) - beta(t + b) is unbounded below for ({alpha:?}, {beta:?})"
            )));
        }
        Ok(Self { alpha, beta, a })
    }

    /// `sqrt(a H) - sqrt(T)`: nonnegative everywhere iff `mu` satisfies T2(a).
    pub fn talagrand(a: f64) -> Result<Self> {
        Self::new(ScalarProfile::Sqrt, ScalarProfile::Sqrt, a)
    }

    /// `a H - T`.
    pub fn linear(a: f64) -> Result<Self> {
        Self::new(ScalarProfile::Identity, ScalarProfile::Identity, a)
    }

    pub fn with_a(&self, a: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, a)
    }

    #[inline]
    pub fn combine(&self, h: f64, t: f64) -> f64 {
        self.alpha.value(self.a * h) - self.beta.value(t)
    }

    /// `a alpha'(a H) / beta'(T)`, clamped when `alpha` is singular at 0.
    pub fn lambda_bar(&self, h: f64, t: f64) -> f64 {
        let raw = self.a * self.alpha.deriv(self.a * h) / self.beta.deriv(t);
        if self.alpha.singular_at_zero() || self.beta.singular_at_zero() {
            if raw.is_nan() {
                return LAMBDA_CLAMP.1;
            }
            raw.clamp(LAMBDA_CLAMP.0, LAMBDA_CLAMP.1)
        } else {
            raw
        }
    }
}

/// Value of `F_a` with its ingredients.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub entropy: f64,
    pub transport: TransportSolution,
}

pub fn evaluate_full(
    spec: &FunctionalSpec,
    nu: &ProbVector,
    mu: &ProbVector,
    cost: &SquareMatrix,
) -> Result<Evaluation> {
    let h = relative_entropy(nu, mu)?;
    if h.is_infinite() {
        return Err(Error::EntropyInfinite);
    }
    let transport = ot_solve(nu, mu, cost)?;
    let t = transport.primal_cost.max(0.0);
    Ok(Evaluation { value: spec.combine(h, t), entropy: h, transport })
}

pub fn evaluate(
    spec: &FunctionalSpec,
    nu: &ProbVector,
    mu: &ProbVector,
    cost: &SquareMatrix,
) -> Result<f64> {
    Ok(evaluate_full(spec, nu, mu, cost)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `inf_h alpha(a h) - beta(h / delta + e^{-1} I_delta / delta)`; `F_a` is never below it.
    pub lower_bound: f64,
    pub i_delta: f64,
    pub young_constant: f64,
    pub argmin_h: f64,
}

/// Lower bound on `F_a` from the Young inequality with `theta(x) = x log x`.
pub fn lower_bound_certificate(
    mu: &ProbVector,
    cost: &SquareMatrix,
    delta: f64,
    spec: &FunctionalSpec,
) -> Result<Certificate> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    if spec.a < 1.0 / delta {
        return Err(Error::BoundVacuous { a: spec.a, inv_delta: 1.0 / delta });
    }
    let ie = exp_integral(mu, cost, delta)?;
    let b = (-1f64).exp() * ie.value / delta;
    let f = |h: f64| spec.alpha.value(spec.a * h) - spec.beta.value(h / delta + b);
    if ie.overflow {
        return Ok(Certificate {
            lower_bound: f64::NEG_INFINITY,
            i_delta: ie.value,
            young_constant: b,
            argmin_h: 0.0,
        });
    }
    let mut grid = vec![0.0];
    grid.extend((0..=480).map(|k| 10f64.powf(-12.0 + k as f64 * 0.05)));
    let vals: Vec<f64> = grid.iter().map(|&h| f(h)).collect();
    let best = (0..grid.len()).min_by(|&x, &y| vals[x].total_cmp(&vals[y])).unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (h, v) = golden_section(f, lo, hi, 1e-10);
    let (argmin_h, lower_bound) = if v < vals[best] { (h, v) } else { (grid[best], vals[best]) };
    Ok(Certificate { lower_bound, i_delta: ie.value, young_constant: b, argmin_h })
}

/// `H/delta + e^{-1} I_delta / delta - Σ c nu⊗mu`, nonnegative by Young's inequality.
pub fn young_slack(nu: &ProbVector, mu: &ProbVector, cost: &SquareMatrix, delta: f64) -> Result<f64> {
    let h = relative_entropy(nu, mu)?;
    let ie = exp_integral(mu, cost, delta)?;
    let n = mu.len();
    let lhs = neumaier_sum(
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| nu.get(i) * mu.get(j) * cost.get(i, j)),
    );
    Ok(h / delta + (-1f64).exp() * ie.value / delta - lhs)
}

/// Directional-derivative kernel of `F_a` at `nu`.
#[derive(Debug, Clone)]
pub struct FirstVariation {
    /// `a alpha'(aH) log(nu/mu) - beta'(T) psi`, centered so `Σ k nu = 0`; zero off `supp(nu)`.
    pub kernel: Vec<f64>,
    /// `supp(nu)` is strictly smaller than `supp(mu)`.
    pub boundary: bool,
    pub value: f64,
    pub entropy: f64,
    pub transport_cost: f64,
    pub psi: Vec<f64>,
}

pub fn first_variation(
    spec: &FunctionalSpec,
    nu: &ProbVector,
    mu: &ProbVector,
    cost: &SquareMatrix,
) -> Result<FirstVariation> {
    let ev = evaluate_full(spec, nu, mu, cost)?;
    kernel_from(spec, nu, mu, ev)
}

fn kernel_from(
    spec: &FunctionalSpec,
    nu: &ProbVector,
    mu: &ProbVector,
    ev: Evaluation,
) -> Result<FirstVariation> {
    let h = ev.entropy;
    let t = ev.transport.primal_cost.max(0.0);
    let ga = spec.a * spec.alpha.deriv(spec.a * h);
    let gb = spec.beta.deriv(t);
    if !ga.is_finite() || !gb.is_finite() {
        return Err(Error::SingularPoint);
    }
    let logd = log_density(nu, mu)?;
    let psi = ev.transport.psi;
    let mut kernel = vec![0.0; nu.len()];
    for &i in nu.support() {
        kernel[i] = ga * logd[i] - gb * psi[i];
    }
    let mean = dot(&kernel, nu.weights());
    for &i in nu.support() {
        kernel[i] -= mean;
    }
    Ok(FirstVariation {
        kernel,
        boundary: nu.support().len() < mu.support().len(),
        value: ev.value,
        entropy: h,
        transport_cost: t,
        psi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mirror,
    FixedPoint,
    Truncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub multistarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Consecutive unsuccessful perturbation restarts around the incumbent
    /// before giving up.
    #[serde(default = "default_hops")]
    pub hops: usize,
}

fn default_hops() -> usize {
    8
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self { multistarts: 32, max_iter: 5000, tol: 1e-10, seed: 0, hops: default_hops() }
    }
}

/// How a single start ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStatus {
    Converged,
    /// Backtracking could not find descent above the minimal step.
    StallWithoutDescent,
    /// Damping was halved the maximal number of times.
    OscillationDetected,
    IterationCap,
    /// The start sits at `mu`, where the stationarity equation does not apply.
    AtReference,
    /// A caller-supplied target value was reached.
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub index: usize,
    pub value: f64,
    pub status: StartStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizationResult {
    pub minimizer: ProbVector,
    pub value: f64,
    pub method: Method,
    pub lambda_bar: Option<f64>,
    /// Standard deviation over `supp(minimizer)` of `lambda_bar log(nu/mu) - psi`.
    pub residual: Option<f64>,
    /// `nu`-weighted mean of `lambda_bar log(nu/mu) - psi`.
    pub constant_c: Option<f64>,
    pub trace: Vec<f64>,
    pub multistart_count: usize,
    pub agreement_tv: f64,
    /// Minimizers within `1e-9` of the best value, best first.
    pub ties: Vec<ProbVector>,
    pub starts: Vec<StartOutcome>,
}

impl MinimizationResult {
    pub fn is_reference(&self, mu: &ProbVector, tv_tol: f64) -> bool {
        self.minimizer.tv(mu) <= tv_tol
    }
}

/// Critical-point data at `nu`: `(lambda_bar, residual, C)`.
pub fn stationarity(
    spec: &FunctionalSpec,
    nu: &ProbVector,
    mu: &ProbVector,
    cost: &SquareMatrix,
) -> Result<Option<(f64, f64, f64)>> {
    let ev = evaluate_full(spec, nu, mu, cost)?;
    if ev.entropy < REFERENCE_BALL && spec.alpha.singular_at_zero() {
        return Ok(None);
    }
    let lam = spec.lambda_bar(ev.entropy, ev.transport.primal_cost.max(0.0));
    let logd = log_density(nu, mu)?;
    let supp = nu.support();
    let r: Vec<f64> = supp.iter().map(|&i| lam * logd[i] - ev.transport.psi[i]).collect();
    let c = neumaier_sum(supp.iter().zip(&r).map(|(&i, x)| nu.get(i) * x));
    let mean = neumaier_sum(r.iter().copied()) / r.len() as f64;
    let var = neumaier_sum(r.iter().map(|x| (x - mean) * (x - mean))) / r.len() as f64;
    Ok(Some((lam, var.sqrt(), c)))
}

/// Deterministic starting measures on `supp(mu)`: `mu`, random tilts,
/// Dirichlet draws and mixtures with a point mass.
pub fn multistart_battery(
    mu: &ProbVector,
    cost: &SquareMatrix,
    count: usize,
    seed: u64,
) -> Vec<ProbVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let supp = mu.support();
    let n = mu.len();
    let scale = supp
        .iter()
        .flat_map(|&i| supp.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost.get(i, j))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let strengths = [0.5, 1.0, 2.0, 4.0, 8.0];
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(mu.clone());
    }
    for s in 1..count {
        let mut logw = vec![f64::NEG_INFINITY; n];
        match s % 4 {
            1 => {
                let t = strengths[(s / 3) % strengths.len()];
                for &i in supp {
                    let g: f64 = rng.sample(StandardNormal);
                    logw[i] = mu.get(i).ln() + t * g;
                }
            }
            2 => {
                let t = strengths[(s / 3) % strengths.len()];
                let y = supp[rng.random_range(0..supp.len())];
                for &i in supp {
                    logw[i] = mu.get(i).ln() - t * cost.get(i, y) / scale * 4.0;
                }
            }
            3 => {
                let y = supp[rng.random_range(0..supp.len())];
                let keep: f64 = rng.random_range(0.5..0.95);
                for &i in supp {
                    let w = (1.0 - keep) * mu.get(i) + if i == y { keep } else { 0.0 };
                    logw[i] = w.ln();
                }
            }
            _ => {
                for &i in supp {
                    let e: f64 = rng.sample(Exp1);
                    logw[i] = e.max(1e-300).ln();
                }
            }
        }
        out.push(ProbVector::from_log_weights(&logw).expect("finite log-weights on supp(mu)"));
    }
    out
}

struct Run {
    nu: ProbVector,
    value: f64,
    trace: Vec<f64>,
    status: StartStatus,
    iterations: usize,
}

fn mirror_run(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    start: ProbVector,
    cfg: &MinimizeConfig,
    target: Option<f64>,
) -> Result<Run> {
    let mut nu = start;
    let mut ev = evaluate_full(spec, &nu, mu, cost)?;
    let mut trace = vec![ev.value];
    let mut eta_prev: Option<f64> = None;
    let mut status = StartStatus::IterationCap;
    let mut it = 0;
    while it < cfg.max_iter {
        if target.is_some_and(|t| ev.value < t) {
            status = StartStatus::TargetReached;
            break;
        }
        let value = ev.value;
        let fv = match kernel_from(spec, &nu, mu, ev.clone()) {
            Ok(fv) => fv,
            Err(Error::SingularPoint) => {
                status = StartStatus::AtReference;
                break;
            }
            Err(e) => return Err(e),
        };
        let kmax = nu.support().iter().map(|&i| fv.kernel[i].abs()).fold(0.0, f64::max);
        if kmax <= 1e-15 {
            status = StartStatus::Converged;
            break;
        }
        let eta0 = 0.5 / kmax;
        let mut eta = eta_prev.map_or(eta0, |e| (2.0 * e).min(eta0));
        let accepted = loop {
            let logw: Vec<f64> = (0..nu.len())
                .map(|i| {
                    if nu.get(i) > 0.0 {
                        nu.get(i).ln() - eta * fv.kernel[i]
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let cand = ProbVector::from_log_weights(&logw)?;
            let cev = evaluate_full(spec, &cand, mu, cost)?;
            if cev.value < value {
                break Some((cand, cev));
            }
            eta *= 0.5;
            if eta < 1e-12 {
                break None;
            }
        };
        it += 1;
        let Some((cand, cev)) = accepted else {
            status = StartStatus::StallWithoutDescent;
            break;
        };
        eta_prev = Some(eta);
        let tv = cand.tv(&nu);
        let drop = value - cev.value;
        nu = cand;
        ev = cev;
        trace.push(ev.value);
        if tv <= cfg.tol && drop <= cfg.tol * ev.value.abs().max(1.0) {
            status = StartStatus::Converged;
            break;
        }
    }
    Ok(Run { nu, value: ev.value, trace, status, iterations: it })
}

fn fixed_point_run(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    start: ProbVector,
    cfg: &MinimizeConfig,
) -> Result<Run> {
    let mut nu = start;
    let mut ev = evaluate_full(spec, &nu, mu, cost)?;
    let mut trace = vec![ev.value];
    let mut tau = 0.5;
    let mut halvings = 0;
    let mut status = StartStatus::IterationCap;
    let singular = spec.alpha.singular_at_zero();
    let mut it = 0;
    while it < cfg.max_iter {
        if singular && ev.entropy < REFERENCE_BALL {
            status = StartStatus::AtReference;
            break;
        }
        let lam = spec.lambda_bar(ev.entropy, ev.transport.primal_cost.max(0.0));
        let psi = &ev.transport.psi;
        let logw: Vec<f64> = (0..nu.len())
            .map(|i| {
                if mu.get(i) <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let target = psi[i] / lam + mu.get(i).ln();
                if nu.get(i) > 0.0 {
                    (1.0 - tau) * nu.get(i).ln() + tau * target
                } else if tau >= 1.0 {
                    target
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let cand = ProbVector::from_log_weights(&logw)?;
        let cev = evaluate_full(spec, &cand, mu, cost)?;
        it += 1;
        if cev.value > ev.value + 1e-12 * ev.value.abs().max(1.0) {
            if halvings < 6 {
                tau *= 0.5;
                halvings += 1;
                continue;
            }
            status = StartStatus::OscillationDetected;
            break;
        }
        let tv = cand.tv(&nu);
        nu = cand;
        ev = cev;
        trace.push(ev.value);
        if tv <= cfg.tol {
            status = StartStatus::Converged;
            break;
        }
    }
    Ok(Run { nu, value: ev.value, trace, status, iterations: it })
}

/// Basin hopping: restart from random log-perturbations of the incumbent and
/// its mixtures with point masses
/// until `cfg.hops` consecutive restarts fail to improve it.
fn hop<F>(runs: &mut Vec<Run>, mu: &ProbVector, cfg: &MinimizeConfig, target: Option<f64>, run: F) -> Result<()>
where
    F: Fn(ProbVector) -> Result<Run>,
{
    let best_of = |runs: &[Run]| {
        (0..runs.len()).min_by(|&x, &y| runs[x].value.total_cmp(&runs[y].value).then(x.cmp(&y)))
    };
    let Some(mut best) = best_of(runs) else { return Ok(()) };
    if mu.support().len() <= 1 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0b0b);
    let amps = [0.1, 0.3, 1.0, 2.0];
    let mut stale = 0;
    let mut round = 0;
    while stale < cfg.hops {
        if target.is_some_and(|t| runs[best].value < t) {
            break;
        }
        let amp = amps[round % amps.len()];
        round += 1;
        let supp = mu.support();
        let y = supp[rng.random_range(0..supp.len())];
        let keep: f64 = rng.random_range(0.2..0.8);
        let logw: Vec<f64> = (0..mu.len())
            .map(|i| {
                let w = runs[best].nu.get(i);
                if mu.get(i) == 0.0 {
                    f64::NEG_INFINITY
                } else if round % 2 == 0 {
                    ((1.0 - keep) * w + if i == y { keep } else { 0.0 }).max(1e-300).ln()
                } else {
                    w.max(1e-300).ln() + amp * rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        let start = ProbVector::from_log_weights(&logw)?;
        let r = run(start)?;
        let improved = r.value < runs[best].value - 1e-12 * runs[best].value.abs().max(1.0);
        runs.push(r);
        if improved {
            best = runs.len() - 1;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    Ok(())
}

fn assemble(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    method: Method,
    runs: Vec<Run>,
) -> Result<MinimizationResult> {
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&x, &y| runs[x].value.total_cmp(&runs[y].value).then(x.cmp(&y)));
    let best = order[0];
    let best_value = runs[best].value;
    let tie_tol = 1e-9 * best_value.abs().max(1.0);
    let ties: Vec<ProbVector> = order
        .iter()
        .filter(|&&i| runs[i].value <= best_value + tie_tol)
        .map(|&i| runs[i].nu.clone())
        .collect();
    let agreement_tv = ties.iter().map(|t| t.tv(&runs[best].nu)).fold(0.0, f64::max);
    let minimizer = runs[best].nu.clone();
    let stat = stationarity(spec, &minimizer, mu, cost)?;
    let starts = runs
        .iter()
        .enumerate()
        .map(|(index, r)| StartOutcome {
            index,
            value: r.value,
            status: r.status,
            iterations: r.iterations,
        })
        .collect();
    Ok(MinimizationResult {
        minimizer,
        value: best_value,
        method,
        lambda_bar: stat.map(|s| s.0),
        residual: stat.map(|s| s.1),
        constant_c: stat.map(|s| s.2),
        trace: runs[best].trace.clone(),
        multistart_count: runs.len(),
        agreement_tv,
        ties,
        starts,
    })
}

fn check_inputs(mu: &ProbVector, cost: &SquareMatrix) -> Result<()> {
    if cost.n() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: cost.n() });
    }
    Ok(())
}

/// Mirror descent `nu <- nu exp(-eta k) / Z` with backtracking, best over starts.
pub fn minimize_mirror(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    cfg: &MinimizeConfig,
) -> Result<MinimizationResult> {
    minimize_mirror_from(spec, mu, cost, cfg, &[], None)
}

/// As [`minimize_mirror`], with extra starts appended to the battery and an
/// optional target value at which a start stops early.
pub fn minimize_mirror_from(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    cfg: &MinimizeConfig,
    extra_starts: &[ProbVector],
    target: Option<f64>,
) -> Result<MinimizationResult> {
    check_inputs(mu, cost)?;
    let mut starts = multistart_battery(mu, cost, cfg.multistarts.max(1), cfg.seed);
    starts.extend(extra_starts.iter().cloned());
    let run = |s| mirror_run(spec, mu, cost, s, cfg, target);
    let mut runs = starts.into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
    hop(&mut runs, mu, cfg, target, run)?;
    assemble(spec, mu, cost, Method::Mirror, runs)
}

/// Damped iteration `nu <- nu^{1-tau} (e^{psi/lambda_bar} mu)^tau`, best over starts.
pub fn minimize_fixed_point(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    cfg: &MinimizeConfig,
) -> Result<MinimizationResult> {
    minimize_fixed_point_from(spec, mu, cost, cfg, &[])
}

pub fn minimize_fixed_point_from(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    cfg: &MinimizeConfig,
    extra_starts: &[ProbVector],
) -> Result<MinimizationResult> {
    check_inputs(mu, cost)?;
    let mut starts = multistart_battery(mu, cost, cfg.multistarts.max(1), cfg.seed);
    starts.extend(extra_starts.iter().cloned());
    let run = |s| fixed_point_run(spec, mu, cost, s, cfg);
    let mut runs = starts.into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
    hop(&mut runs, mu, cfg, None, run)?;
    assemble(spec, mu, cost, Method::FixedPoint, runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationResult {
    pub result: MinimizationResult,
    pub levels: Vec<f64>,
    /// `F_{a,n}(nu_n)` per level.
    pub level_values: Vec<f64>,
    pub monotone: bool,
}

/// Continuation over increasing truncation levels `c ∧ n`, each level solved
/// by the fixed-point method and warm-started from the previous minimizer.
pub fn minimize_truncation(
    spec: &FunctionalSpec,
    mu: &ProbVector,
    cost: &SquareMatrix,
    levels: &[f64],
    cfg: &MinimizeConfig,
) -> Result<TruncationResult> {
    check_inputs(mu, cost)?;
    if levels.is_empty()
        || levels.iter().any(|l| !(l.is_finite() && *l > 0.0))
        || levels.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::ScheduleNotIncreasing);
    }
    let max_cost = cost.max();
    let last = *levels.last().expect("nonempty");
    if last < max_cost {
        return Err(Error::ScheduleIncomplete { last, max_cost });
    }
    let mut warm: Vec<ProbVector> = Vec::new();
    let mut level_values = Vec::with_capacity(levels.len());
    let mut result = None;
    for &level in levels {
        let cn = cost.map(|c| c.min(level));
        let r = minimize_fixed_point_from(spec, mu, &cn, cfg, &warm)?;
        level_values.push(r.value);
        warm = vec![r.minimizer.clone()];
        result = Some(r);
    }
    let mut result = result.expect("at least one level");
    result.method = Method::Truncation;
    result.trace = level_values.clone();
    let monotone = level_values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
    Ok(TruncationResult { result, levels: levels.to_vec(), level_values, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{FiniteMetricSpace, PowerTypeCost};
    use rand::{Rng, SeedableRng};

    fn two_point_cost() -> SquareMatrix {
        SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (ProbVector, SquareMatrix) {
        let mut pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        pts.sort_by(f64::total_cmp);
        let s = FiniteMetricSpace::from_points(pts).unwrap();
        let mu = ProbVector::normalized((0..n).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        (mu, PowerTypeCost::square(&s).matrix().clone())
    }

    fn quick() -> MinimizeConfig {
        MinimizeConfig { multistarts: 16, max_iter: 5000, tol: 1e-12, seed: 1, hops: 4 }
    }

    #[test]
    fn spec_admissibility() {
        use ScalarProfile::*;
        assert!(FunctionalSpec::new(Sqrt, Identity, 1.0).is_err());
        assert!(FunctionalSpec::new(Power(2.0), Power(2.0), 1.0).is_err());
        assert!(FunctionalSpec::new(Identity, Sqrt, 1.0).is_ok());
        assert!(FunctionalSpec::new(Power(-1.0), Sqrt, 1.0).is_err());
        assert!(FunctionalSpec::talagrand(0.0).is_err());
        assert!(Power(0.5).singular_at_zero() && Sqrt.singular_at_zero() && !Identity.singular_at_zero());
        for t in [0.1, 1.0, 3.0] {
            for p in [Sqrt, Identity, Power(1.5)] {
                let h = 1e-6;
                let fd = (p.value(t + h) - p.value(t - h)) / (2.0 * h);
                assert!((fd - p.deriv(t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn evaluate_closed_forms() {
        let c = two_point_cost();
        let mu = ProbVector::uniform(2);
        assert_eq!(evaluate(&FunctionalSpec::talagrand(2.0).unwrap(), &mu, &mu, &c).unwrap(), 0.0);
        let nu = ProbVector::point_mass(2, 0);
        let v = evaluate(&FunctionalSpec::linear(1.0).unwrap(), &nu, &mu, &c).unwrap();
        assert!((v - (std::f64::consts::LN_2 - 0.5)).abs() < 1e-15);
        let bad = ProbVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(evaluate(&FunctionalSpec::linear(1.0).unwrap(), &mu, &bad, &c).unwrap_err(), Error::EntropyInfinite);
    }

    #[test]
    fn evaluate_is_the_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (mu, c) = random_instance(&mut rng, 7);
            let nu = ProbVector::normalized((0..7).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let spec = FunctionalSpec::talagrand(1.3).unwrap();
            let h = relative_entropy(&nu, &mu).unwrap();
            let t = ot_solve(&nu, &mu, &c).unwrap().primal_cost;
            let v = evaluate(&spec, &nu, &mu, &c).unwrap();
            assert!((v - ((1.3 * h).sqrt() - t.sqrt())).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_certificate_is_young_constant() {
        let c = two_point_cost();
        let mu = ProbVector::uniform(2);
        let spec = FunctionalSpec::linear(1.0).unwrap();
        let cert = lower_bound_certificate(&mu, &c, 2.0, &spec).unwrap();
        let ie = exp_integral(&mu, &c, 2.0).unwrap().value;
        let b = (-1f64).exp() * ie / 2.0;
        assert!((cert.young_constant - b).abs() < 1e-15);
        assert!((cert.lower_bound + b).abs() < 1e-12);
        assert_eq!(cert.argmin_h, 0.0);
        assert!(matches!(
            lower_bound_certificate(&mu, &c, 0.5, &spec),
            Err(Error::BoundVacuous { .. })
        ));
    }

    #[test]
    fn young_slack_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..=12);
            let (mu, c) = random_instance(&mut rng, n);
            let nu = ProbVector::normalized((0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let delta = rng.random_range(0.05..5.0);
            assert!(young_slack(&nu, &mu, &c, delta).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn young_scalar_inequality() {
        let theta = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
        let theta_star = |y: f64| (y - 1.0).exp();
        for delta in [0.3, 1.0, 2.5] {
            for i in 0..=40 {
                for j in 0..=40 {
                    let x = i as f64 * 0.1;
                    let y = -2.0 + j as f64 * 0.1;
                    let rhs = theta(x) / delta + theta_star(delta * y) / delta;
                    assert!(x * y <= rhs + 1e-12);
                }
                let y = -1.0 + i as f64 * 0.05;
                let x = (delta * y - 1.0).exp();
                let rhs = theta(x) / delta + theta_star(delta * y) / delta;
                assert!((x * y - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_variation_at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mu, c) = random_instance(&mut rng, 5);
        let fv = first_variation(&FunctionalSpec::linear(1.0).unwrap(), &mu, &mu, &c).unwrap();
        let mean = dot(&fv.psi, mu.weights());
        for i in 0..5 {
            assert!((fv.kernel[i] + fv.psi[i] - mean).abs() < 1e-14);
        }
        assert!(!fv.boundary);
        assert_eq!(first_variation(&FunctionalSpec::talagrand(1.0).unwrap(), &mu, &mu, &c).unwrap_err(), Error::SingularPoint);
    }

    #[test]
    fn first_variation_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in [FunctionalSpec::linear(0.7).unwrap(), FunctionalSpec::talagrand(1.5).unwrap()] {
            for _ in 0..5 {
                let (mu, c) = random_instance(&mut rng, 6);
                let nu = ProbVector::normalized((0..6).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
                let fv = first_variation(&spec, &nu, &mu, &c).unwrap();
                let mut f: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let m = dot(&f, nu.weights());
                f.iter_mut().for_each(|x| *x -= m);
                let pred: f64 = (0..6).map(|i| fv.kernel[i] * f[i] * nu.get(i)).sum();
                for eps in [1e-4, 1e-5] {
                    let w: Vec<f64> = (0..6).map(|i| (1.0 + eps * f[i]) * nu.get(i)).collect();
                    let nue = ProbVector::normalized(w).unwrap();
                    let fd = (evaluate(&spec, &nue, &mu, &c).unwrap() - fv.value) / eps;
                    assert!((fd - pred).abs() < 50.0 * eps, "fd {fd} vs {pred}");
                }
                // zero direction
                let z = evaluate(&spec, &nu, &mu, &c).unwrap() - fv.value;
                assert_eq!(z, 0.0);
            }
        }
    }

    #[test]
    fn two_point_minimizer_matches_scan() {
        let c = two_point_cost();
        let mu = ProbVector::uniform(2);
        let spec = FunctionalSpec::linear(0.2).unwrap();
        let f = |t: f64| {
            let h: f64 = [t, 1.0 - t].iter().filter(|&&x| x > 0.0).map(|&x| x * (2.0 * x).ln()).sum();
            0.2 * h - (t - 0.5).abs()
        };
        let (mut best_t, mut best) = (0.0, f64::INFINITY);
        for k in 0..=1_000_000 {
            let t = k as f64 * 1e-6;
            if f(t) < best {
                best = f(t);
                best_t = t;
            }
        }
        // entropy has infinite slope at the vertices, so the minimizer is interior
        let e5 = 5f64.exp();
        assert!((best_t - 1.0 / (1.0 + e5)).abs() < 2e-6);
        let r = minimize_mirror(&spec, &mu, &c, &quick()).unwrap();
        assert!((r.value - best).abs() < 1e-6, "{} vs {best}", r.value);
        let t = r.minimizer.get(0);
        assert!((t - best_t).abs().min((1.0 - t - best_t).abs()) < 2e-6, "{t} vs {best_t}");
        // value never exceeds F(mu) and never undercuts the certificate
        assert!(r.value <= 0.0);
        let cert = lower_bound_certificate(&mu, &c, 5.0, &spec).unwrap();
        assert!(r.value >= cert.lower_bound - 1e-12);
    }

    #[test]
    fn minimum_rises_toward_zero_with_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mu, c) = random_instance(&mut rng, 5);
        let mut last = (f64::NEG_INFINITY, f64::INFINITY);
        for a in [10.0, 100.0, 1000.0] {
            let spec = FunctionalSpec::linear(a).unwrap();
            let r = minimize_fixed_point(&spec, &mu, &c, &quick()).unwrap();
            let tv = r.minimizer.tv(&mu);
            assert!(r.value <= 0.0 && r.value >= last.0 && tv < last.1);
            last = (r.value, tv);
        }
        assert!(last.0 > -1e-3 && last.1 < 1e-3);
    }

    #[test]
    fn methods_agree_and_satisfy_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        for _ in 0..12 {
            let n = rng.random_range(3..=8);
            let (mu, c) = random_instance(&mut rng, n);
            let spec = FunctionalSpec::linear(0.3).unwrap();
            let fp = minimize_fixed_point(&spec, &mu, &c, &quick()).unwrap();
            if fp.value > -1e-8 {
                continue;
            }
            let md = minimize_mirror(&spec, &mu, &c, &quick()).unwrap();
            assert!((fp.value - md.value).abs() < 1e-8);
            assert!(fp.minimizer.tv(&md.minimizer) < 1e-4);
            let (lam, res, cst) = stationarity(&spec, &fp.minimizer, &mu, &c).unwrap().unwrap();
            assert!((lam - 0.3).abs() < 1e-15);
            assert!(res <= 1e-6, "residual {res}");
            assert!((cst - fp.constant_c.unwrap()).abs() < 1e-9);
            checked += 1;
        }
        assert!(checked >= 6);
    }

    #[test]
    fn descent_traces_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (mu, c) = random_instance(&mut rng, 6);
        let spec = FunctionalSpec::talagrand(0.5).unwrap();
        let r = minimize_mirror(&spec, &mu, &c, &quick()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] < w[0] || (w[1] - w[0]).abs() < 1e-15);
        }
        assert!(r.starts.iter().enumerate().all(|(i, s)| s.index == i));
        assert!(r.starts.iter().all(|s| s.value >= r.value));
    }

    #[test]
    fn truncation_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (mu, c) = random_instance(&mut rng, 6);
        let spec = FunctionalSpec::linear(0.4).unwrap();
        let m = c.max();
        assert_eq!(
            minimize_truncation(&spec, &mu, &c, &[m, m / 2.0], &quick()).unwrap_err(),
            Error::ScheduleNotIncreasing
        );
        assert!(matches!(
            minimize_truncation(&spec, &mu, &c, &[m / 2.0], &quick()),
            Err(Error::ScheduleIncomplete { .. })
        ));
        let tr = minimize_truncation(&spec, &mu, &c, &[m / 4.0, m / 2.0, m], &quick()).unwrap();
        assert!(tr.monotone, "{:?}", tr.level_values);
        let direct = minimize_fixed_point(&spec, &mu, &c, &quick()).unwrap();
        assert!((tr.result.value - direct.value).abs() < 1e-6);
        assert!(tr.result.minimizer.tv(&direct.minimizer) < 1e-4);
        let single = minimize_truncation(&spec, &mu, &c, &[m], &quick()).unwrap();
        assert!((single.result.value - direct.value).abs() < 1e-9);
    }

    #[test]
    fn battery_is_deterministic_and_on_support() {
        let mu = ProbVector::new(vec![0.2, 0.0, 0.3, 0.5]).unwrap();
        let c = SquareMatrix::from_fn(4, |i, j| (i as f64 - j as f64).powi(2));
        let a = multistart_battery(&mu, &c, 20, 3);
        let b = multistart_battery(&mu, &c, 20, 3);
        assert_eq!(a, b);
        assert_eq!(a[0], mu);
        for s in &a {
            assert_eq!(s.get(1), 0.0);
        }
    }
}
