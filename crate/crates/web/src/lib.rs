//! Browser bindings for the demo page in `www/`. Every export returns a JSON
//! string; the plain functions are usable natively.

use consensus_ipm::config::SolverConfig;
use consensus_ipm::data::RlsConfig;
use consensus_ipm::experiment::{random_quadratic, rls_problem};
use consensus_ipm::formats::relative_error;
use consensus_ipm::msgpass::{run_dpda, Trace, TransportKind};
use consensus_ipm::oracle::unrelaxed_optimum;
use consensus_ipm::verify::{bound_sweep, tight_config};
use consensus_ipm::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn trace_rows(trace: &Trace) -> Value {
    trace
        .rows
        .iter()
        .map(|r| {
            json!({
                "k": r.k,
                "eta_hat": r.eta_hat,
                "residual": r.residual_after,
                "alpha": r.alpha,
                "x": r.x.as_slice(),
            })
        })
        .collect()
}

/// Planar quadratic consensus: the solution, each agent's local copy and the trace.
pub fn quadratic_consensus_value(agents: usize, epsilon: f64, seed: u32) -> Result<Value> {
    let prob = random_quadratic(agents, 2, epsilon, seed.into())?;
    let (sol, trace) = run_dpda(&prob, &SolverConfig::default(), TransportKind::Sequential)?;
    let x_star = unrelaxed_optimum(&prob)?;
    let optima = prob
        .subproblems()
        .iter()
        .map(|sp| {
            let single = consensus_ipm::model::assemble_relaxed_problem(vec![sp.clone()], epsilon)?;
            Ok(unrelaxed_optimum(&single)?.as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "status": sol.status.as_str(),
        "iterations": sol.iterations,
        "epsilon": epsilon,
        "x": sol.x.as_slice(),
        "x_star": x_star.as_slice(),
        "copies": sol.agents.iter().map(|a| a.x.as_slice().to_vec()).collect::<Vec<_>>(),
        "agent_optima": optima,
        "trace": trace_rows(&trace),
    }))
}

/// Relaxation gap and its bound over a log-spaced range of radii.
pub fn epsilon_sweep_value(agents: usize, seed: u32) -> Result<Value> {
    let prob = random_quadratic(agents, 4, 1e-3, seed.into())?;
    let radii: Vec<f64> = (0..9)
        .map(|k| 10f64.powf(-3.0 + 0.375 * k as f64))
        .collect();
    let reports = bound_sweep(&prob, &radii, &tight_config())?;
    let points: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "epsilon": r.epsilon,
                "gap": r.gap,
                "gap_bound": r.gap_bound,
                "distance_sq": r.distance_sq,
                "distance_bound": r.distance_bound,
                "relaxed_value": r.relaxed_value,
                "iterations": r.iterations,
            })
        })
        .collect();
    Ok(json!({ "points": points }))
}

/// Robust least squares; `cond <= 0` keeps the drawn condition number.
pub fn robust_ls_value(seed: u32, cond: f64, epsilon: f64) -> Result<Value> {
    let cfg = RlsConfig {
        seed: seed.into(),
        ..RlsConfig::default()
    };
    let kappa = (cond > 0.0).then_some(cond);
    let (prob, data) = rls_problem(&cfg, kappa, epsilon)?;
    let (sol, trace) = run_dpda(&prob, &SolverConfig::default(), TransportKind::Sequential)?;
    let x_star = unrelaxed_optimum(&prob)?;
    Ok(json!({
        "status": sol.status.as_str(),
        "iterations": sol.iterations,
        "condition_number": data.condition,
        "relative_error": relative_error(&sol.x, &x_star),
        "trace": trace_rows(&trace),
    }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn quadratic_consensus(
    agents: usize,
    epsilon: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(quadratic_consensus_value(agents, epsilon, seed))
}

#[wasm_bindgen]
pub fn epsilon_sweep(agents: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(epsilon_sweep_value(agents, seed))
}

#[wasm_bindgen]
pub fn robust_ls(seed: u32, cond: f64, epsilon: f64) -> std::result::Result<String, JsError> {
    to_js(robust_ls_value(seed, cond, epsilon))
}
