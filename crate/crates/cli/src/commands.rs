//! One function per subcommand.

use crate::config::Settings;
use crate::report::{csv_bytes, Outcome};
use serde_json::{json, Value};
use tei_core::io::Built;
use tei_core::lab::{
    constants_report, default_stencil, dual_value, estimate_t2, ma_residual_1d, verify_otto_villani,
    verify_restricted_lsi, verify_w2i,
};
use tei_core::measures::{
    concentration_profile, constants_from_exp_integral, constants_from_lower_bound, exp_integral,
    fit_concentration_constants, relative_entropy, ProfileMode,
};
use tei_core::metric::{find_triangle_violation, induced_distance};
use tei_core::transport::{check_solution, ot_solve};
use tei_core::variational::{
    evaluate, lower_bound_certificate, minimize_fixed_point, minimize_mirror, minimize_truncation, Method,
};
use tei_core::{FunctionalSpec, MinimizationResult, SemiconcaveClass};

/// Tolerance for duality gap and complementary slackness.
const TRANSPORT_TOL: f64 = 1e-8;
/// Exact profile enumeration is used up to this many points when no mode is set.
const AUTO_EXACT_MAX_N: usize = 16;

pub const COMMANDS: [&str; 10] = [
    "validate",
    "transport",
    "minimize",
    "constants",
    "verify-ov",
    "verify-restricted-lsi",
    "verify-w2i",
    "concentration",
    "dual-check",
    "ma-residual",
];

type CmdResult = Result<Outcome, String>;

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn core<T>(r: tei_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub fn run(command: &str, inst: &Built, s: &Settings) -> CmdResult {
    match command {
        "validate" => validate(inst),
        "transport" => transport(inst),
        "minimize" => minimize(inst, s),
        "constants" => constants(inst, s),
        "verify-ov" => verify_ov(inst, s),
        "verify-restricted-lsi" => verify_rlsi(inst, s),
        "verify-w2i" => verify_w2i_cmd(inst, s),
        "concentration" => concentration(inst, s),
        "dual-check" => dual_check(inst, s),
        "ma-residual" => ma_residual(inst, s),
        other => Err(format!("unknown command {other:?}")),
    }
}

fn validate(inst: &Built) -> CmdResult {
    let sp = &inst.space;
    let dt = core(induced_distance(&inst.cost))?;
    let nu_entropy = match &inst.nu {
        Some(nu) => Some(core(relative_entropy(nu, &inst.mu))?),
        None => None,
    };
    let result = json!({
        "n": sp.n(),
        "grid": sp.points().is_some(),
        "diameter": sp.diameter(),
        "min_separation": sp.min_separation(),
        "cost_profile": inst.cost.profile,
        "exponent_po": inst.cost.exponent_po,
        "doubling_ratio": inst.cost.doubling_ratio_k,
        "truncation_level": inst.cost.truncation_level,
        "max_cost": inst.cost.max_cost(),
        "induced_distance_is_metric": find_triangle_violation(&dt, 1e-9).is_none(),
        "mu_support": inst.mu.support().len(),
        "nu_support": inst.nu.as_ref().map(|v| v.support().len()),
        "nu_entropy": nu_entropy,
    });
    let summary = format!(
        "validate: n={} diameter={:.6} p_o={} support={}",
        sp.n(),
        sp.diameter(),
        inst.cost.exponent_po,
        inst.mu.support().len()
    );
    Ok(Outcome { result, summary, passed: true, csv: Vec::new() })
}

fn transport(inst: &Built) -> CmdResult {
    let nu = inst.nu.as_ref().ok_or("transport needs \"nu\" in the instance")?;
    let c = inst.cost.matrix();
    let sol = core(ot_solve(nu, &inst.mu, c))?;
    let chk = check_solution(&sol, nu, &inst.mu, c);
    let passed = chk.duality_gap.abs() <= TRANSPORT_TOL && chk.slackness_error <= TRANSPORT_TOL;
    let csv = vec![
        ("transport_plan.csv".to_string(), csv_bytes(&["i", "j", "mass"], sol.plan_csv_rows())),
        ("transport_potentials.csv".to_string(), csv_bytes(&["index", "psi", "phi"], sol.potential_csv_rows())),
    ];
    let summary = format!(
        "transport: cost={:.10e} gap={:.2e} slackness={:.2e} pivots={}",
        sol.primal_cost, chk.duality_gap, chk.slackness_error, sol.pivots
    );
    let result = json!({
        "primal_cost": sol.primal_cost,
        "duality_gap": sol.duality_gap,
        "check": chk,
        "support_pairs": sol.support_pairs,
        "psi": sol.psi,
        "phi": sol.phi,
        "pivots": sol.pivots,
    });
    Ok(Outcome { result, summary, passed, csv })
}

fn solve(inst: &Built, s: &Settings, spec: &FunctionalSpec) -> Result<(MinimizationResult, Option<Value>), String> {
    let c = inst.cost.matrix();
    let cfg = s.minimize();
    match s.method {
        Method::Mirror => Ok((core(minimize_mirror(spec, &inst.mu, c, &cfg))?, None)),
        Method::FixedPoint => Ok((core(minimize_fixed_point(spec, &inst.mu, c, &cfg))?, None)),
        Method::Truncation => {
            let m = c.max();
            let levels = s.truncation_levels.clone().unwrap_or_else(|| vec![0.25 * m, 0.5 * m, m]);
            let tr = core(minimize_truncation(spec, &inst.mu, c, &levels, &cfg))?;
            let extra = json!({ "levels": tr.levels, "level_values": tr.level_values, "monotone": tr.monotone });
            Ok((tr.result, Some(extra)))
        }
    }
}

fn minimize(inst: &Built, s: &Settings) -> CmdResult {
    let spec = s.spec()?;
    let (r, truncation) = solve(inst, s, &spec)?;
    let at_mu = core(evaluate(&spec, &inst.mu, &inst.mu, inst.cost.matrix()))?;
    let mut passed = r.value <= at_mu;
    let certificate = match s.delta {
        Some(delta) => {
            let cert = core(lower_bound_certificate(&inst.mu, inst.cost.matrix(), delta, &spec))?;
            passed &= r.value >= cert.lower_bound - 1e-12 * cert.lower_bound.abs().max(1.0);
            Some(cert)
        }
        None => None,
    };
    if let Some(t) = &truncation {
        passed &= t["monotone"].as_bool().unwrap_or(false);
    }
    let tv = r.minimizer.tv(&inst.mu);
    let summary = format!(
        "minimize: value={:.10e} tv_to_mu={:.3e} residual={} method={:?}",
        r.value,
        tv,
        r.residual.map_or("n/a".into(), |x| format!("{x:.2e}")),
        r.method
    );
    let csv = vec![(
        "minimize_trace.csv".to_string(),
        csv_bytes(&["iteration", "value"], r.trace.iter().enumerate()),
    )];
    let result = json!({
        "minimization": r,
        "value_at_mu": at_mu,
        "tv_to_mu": tv,
        "certificate": certificate,
        "truncation": truncation,
    });
    Ok(Outcome { result, summary, passed, csv })
}

fn constants(inst: &Built, s: &Settings) -> CmdResult {
    let rep = core(constants_report(
        &inst.space,
        &inst.mu,
        &inst.cost,
        &s.slope,
        &s.t2(),
        &s.a_mu(),
        &s.suite(),
        &s.chain(),
    ))?;
    let ok = rep.chain_ok.t2_le_a_mu && rep.chain_ok.a_mu_le_w2i && rep.chain_ok.w2i_le_lsi;
    let summary = format!(
        "constants: c_t2=[{:.6}, {:.6}] c_lsi={:.6} c_w2i={:.6} a_mu=[{:.6}, {:.6}] chain={}",
        rep.c_t2.bracket.lo,
        rep.c_t2.bracket.hi,
        rep.c_lsi.value,
        rep.c_w2i.value,
        rep.a_mu.bracket.lo,
        rep.a_mu.bracket.hi,
        if ok { "ok" } else { "violated" }
    );
    Ok(Outcome { result: to_value(&rep), summary, passed: ok, csv: Vec::new() })
}

fn verify_ov(inst: &Built, s: &Settings) -> CmdResult {
    let t2 = core(estimate_t2(&inst.mu, &inst.cost, &s.t2()))?;
    let rep = core(verify_otto_villani(&inst.space, &inst.mu, &inst.cost, &s.slope, &t2, &s.suite(), &s.chain()))?;
    let passed = rep.holds && rep.subdifferential.holds && rep.subdifferential.slope_holds != Some(false);
    let summary = format!(
        "verify-ov: c_t2.hi={:.6} bound={:.6} holds={} subdifferential={}",
        rep.c_t2.bracket.hi, rep.bound, rep.holds, rep.subdifferential.holds
    );
    Ok(Outcome { result: to_value(&rep), summary, passed, csv: Vec::new() })
}

fn verify_rlsi(inst: &Built, s: &Settings) -> CmdResult {
    let class = core(SemiconcaveClass::sample(&inst.space, &inst.mu, s.lambda_o, s.class_size, s.seed))?;
    let t2 = core(estimate_t2(&inst.mu, &inst.cost, &s.t2()))?;
    let rep = core(verify_restricted_lsi(&inst.space, &inst.mu, &s.slope, &class, &t2, &s.chain()))?;
    let passed = rep.holds && rep.midpoint_ok;
    let summary = format!(
        "verify-restricted-lsi: d_restricted={:.6} c_t2.hi={:.6} bound={:.6} holds={} midpoint={}",
        rep.d_restricted, rep.c_t2.bracket.hi, rep.bound, rep.holds, rep.midpoint_ok
    );
    Ok(Outcome { result: to_value(&rep), summary, passed, csv: Vec::new() })
}

fn verify_w2i_cmd(inst: &Built, s: &Settings) -> CmdResult {
    let t2 = core(estimate_t2(&inst.mu, &inst.cost, &s.t2()))?;
    let rep = core(verify_w2i(&inst.space, &inst.mu, &inst.cost, &s.slope, &t2, &s.suite(), &s.chain()))?;
    let summary = format!(
        "verify-w2i: c_t2.hi={:.6} c_w2i={:.6} bound={:.6} holds={}",
        rep.c_t2.bracket.hi, rep.c_w2i.value, rep.bound, rep.holds
    );
    Ok(Outcome { result: to_value(&rep), passed: rep.holds, summary, csv: Vec::new() })
}

fn concentration(inst: &Built, s: &Settings) -> CmdResult {
    let p_o = inst.cost.exponent_po;
    let dt = core(induced_distance(&inst.cost))?;
    let mode = s.profile_mode.unwrap_or(if inst.space.n() <= AUTO_EXACT_MAX_N {
        ProfileMode::Exact
    } else {
        ProfileMode::Sublevel
    });
    let profile = core(concentration_profile(&inst.mu, &dt, mode))?;
    let fit = fit_concentration_constants(&profile, p_o);
    let mut passed = true;
    let exp_transfer = match s.delta {
        Some(delta) => {
            let ie = core(exp_integral(&inst.mu, inst.cost.matrix(), delta))?;
            let k = core(constants_from_exp_integral(ie.value, delta, p_o))?;
            let slack = profile.bound_slack(p_o, k.a_prime, k.r_o);
            passed &= slack >= -1e-12;
            Some(json!({ "delta": delta, "i_delta": ie.value, "constants": k, "slack": slack }))
        }
        None => None,
    };
    let lower_bound_transfer = match s.a {
        Some(a) => {
            let spec = core(FunctionalSpec::linear(a))?;
            let r = core(minimize_mirror(&spec, &inst.mu, inst.cost.matrix(), &s.minimize()))?;
            let b = (-r.value).max(0.0);
            let k = constants_from_lower_bound(a, b, p_o);
            let slack = profile.bound_slack(p_o, k.a_prime, k.r_o);
            passed &= slack >= -1e-12;
            Some(json!({ "a": a, "b": b, "constants": k, "slack": slack }))
        }
        None => None,
    };
    let csv = vec![(
        "concentration_profile.csv".to_string(),
        csv_bytes(&["radius", "alpha", "witness"], profile.csv_rows()),
    )];
    let summary = format!(
        "concentration: mode={mode:?} radii={} a_prime={:.6} r_o={:.6}",
        profile.radii.len(),
        fit.a_prime,
        fit.r_o
    );
    let result = json!({
        "mode": mode,
        "profile": profile,
        "fit": fit,
        "exp_integral_transfer": exp_transfer,
        "lower_bound_transfer": lower_bound_transfer,
    });
    Ok(Outcome { result, summary, passed, csv })
}

fn dual_check(inst: &Built, s: &Settings) -> CmdResult {
    let a = s.a.ok_or("dual-check needs \"a\" (config key or --a)")?;
    let spec = core(FunctionalSpec::linear(a))?;
    let c = inst.cost.matrix();
    let primal = core(minimize_mirror(&spec, &inst.mu, c, &s.minimize()))?;
    let dual = core(dual_value(&spec, &inst.mu, c, &s.dual()))?;
    let gap = (dual.value - primal.value).abs();
    let passed = gap <= s.dual_tol;
    let summary = format!("dual-check: primal={:.10e} dual={:.10e} gap={gap:.2e}", primal.value, dual.value);
    let result = json!({
        "primal": primal.value,
        "primal_minimizer": primal.minimizer,
        "dual": dual,
        "gap": gap,
        "tolerance": s.dual_tol,
    });
    Ok(Outcome { result, summary, passed, csv: Vec::new() })
}

fn ma_residual(inst: &Built, s: &Settings) -> CmdResult {
    let n = inst.space.n();
    if inst.space.points().is_none() {
        return Err("ma-residual needs a grid or points space".into());
    }
    let spec = s.spec()?;
    let (r, _) = solve(inst, s, &spec)?;
    let lambda_bar = r.lambda_bar.ok_or("minimizer sits at mu; no stationarity data")?;
    let stencil = s.stencil.unwrap_or_else(|| default_stencil(n));
    let p = core(ma_residual_1d(&inst.space, &inst.mu, &r.minimizer, lambda_bar, stencil))?;
    let passed = p.min_convexity_second_difference >= -1e-8;
    let csv = vec![(
        "ma_residual.csv".to_string(),
        csv_bytes(&["x", "V", "dV", "d2V", "pre_ma_residual", "ma_residual"], p.csv_rows()),
    )];
    let summary = format!(
        "ma-residual: rms_ma={:.4e} rms_pre_ma={:.4e} lambda_bar={lambda_bar:.6} min_convexity={:.3e} tv_to_mu={:.3e}",
        p.rms_ma,
        p.rms_pre_ma,
        p.min_convexity_second_difference,
        r.minimizer.tv(&inst.mu)
    );
    let result = json!({
        "value": r.value,
        "lambda_bar": lambda_bar,
        "residual": r.residual,
        "profile": p,
    });
    Ok(Outcome { result, summary, passed, csv })
}
