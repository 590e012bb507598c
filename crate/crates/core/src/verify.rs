//! Self-checks shared by the `verify` subcommand and the test suites: the
//! distributed direction against the dense oracle, the relaxation bounds and
//! monotonicity in the radius.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::experiment::{random_huber, random_iterate, random_logistic, random_quadratic};
use crate::model::{
    box_gradient_bound, distance_bound, suboptimality_bound, BoundInputs, RelaxedProblem,
};
use crate::msgpass::{
    distributed_direction, run_dpda, LoggedRecord, MessageLog, Status, TransportKind,
};
use crate::oracle::{
    agent_gradient, agent_value, centralized_pdipm_solve, dense_kkt_direction, unrelaxed_optimum,
};
use crate::reformulations::QUADRATIC_FAMILY;

pub const DIRECTION_TOLERANCE: f64 = 1e-8;
pub const BOUND_SLACK: f64 = 1e-9;
pub const MONOTONE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionCase {
    pub family: &'static str,
    pub agents: usize,
    pub p: usize,
    pub seed: u64,
    pub relative_difference: f64,
}

/// Instances over every family with `N in {1, 3, 10}` and `p in {2, 10}`.
pub fn direction_instances(seed: u64) -> Result<Vec<(&'static str, RelaxedProblem)>> {
    let mut out = Vec::new();
    for (k, (n, p)) in [(1, 2), (3, 2), (3, 10), (10, 2), (10, 10)]
        .into_iter()
        .enumerate()
    {
        let s = seed.wrapping_add(k as u64 * 101);
        out.push(("quadratic", random_quadratic(n, p, 0.1, s)?));
        out.push(("huber-rls", random_huber(n, p, p + 2, 0.1, s + 1)?));
        out.push(("logreg", random_logistic(n, p, 8, 0.1, s + 2)?));
    }
    Ok(out)
}

/// Compares the message-passing direction with the dense oracle at
/// `per_instance` random iterates of each instance.
pub fn direction_exactness(seed: u64, per_instance: usize) -> Result<Vec<DirectionCase>> {
    let mut cases = Vec::new();
    for (family, prob) in direction_instances(seed)? {
        for j in 0..per_instance {
            let s = seed ^ (0x9e37_79b9 + cases.len() as u64 * 7919 + j as u64);
            let it = random_iterate(&prob, s)?;
            let dist = distributed_direction(&prob, &it, Default::default())?;
            let dense = dense_kkt_direction(&prob, &it)?;
            cases.push(DirectionCase {
                family,
                agents: prob.agent_count(),
                p: prob.p(),
                seed: s,
                relative_difference: dist.relative_difference(&dense),
            });
        }
    }
    Ok(cases)
}

/// Tight tolerances so that solver error stays far below the bound slack.
pub fn tight_config() -> SolverConfig {
    SolverConfig {
        eps_feas: 1e-10,
        eps_d: 1e-10,
        max_iter: 300,
        ..SolverConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub epsilon: f64,
    /// `(1/N) sum_i F_i(x_rel) - (1/N) sum_i F_i(x*)`.
    pub gap: f64,
    pub gap_bound: f64,
    pub distance_sq: f64,
    pub distance_bound: Option<f64>,
    pub lipschitz: Vec<f64>,
    pub modulus: Option<f64>,
    /// `(1/N) sum_i h_i(w_i)` at the relaxed solution.
    pub relaxed_value: f64,
    pub iterations: usize,
}

impl BoundReport {
    pub fn gap_ok(&self) -> bool {
        self.gap <= self.gap_bound + BOUND_SLACK
    }

    pub fn distance_ok(&self) -> bool {
        self.distance_bound
            .is_none_or(|b| self.distance_sq <= b + BOUND_SLACK)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Smallest eigenvalue of the averaged Hessian for all-quadratic problems.
pub fn quadratic_modulus(prob: &RelaxedProblem) -> Option<f64> {
    let p = prob.p();
    let mut acc = DMatrix::zeros(p, p);
    for sp in prob.subproblems() {
        if sp.family() != QUADRATIC_FAMILY {
            return None;
        }
        acc += sp.model().objective_hessian(&DVector::zeros(p));
    }
    Some(min_eigenvalue(&(acc / prob.agent_count() as f64)))
}

/// Solves the relaxed problem by the distributed solver, then evaluates both
/// relaxation bounds with `L_i` taken over the box spanned by `x_rel`, `x*`
/// and every local copy.
pub fn bound_check(
    prob: &RelaxedProblem,
    config: &SolverConfig,
    x_star: &DVector<f64>,
) -> Result<BoundReport> {
    let (sol, _) = run_dpda(prob, config, TransportKind::Sequential)?;
    if sol.status != Status::Converged {
        return Err(Error::OracleFailure(format!(
            "relaxed solve ended with {}",
            sol.status.as_str()
        )));
    }
    let n = prob.agent_count() as f64;
    let mut lo = sol.x.inf(x_star);
    let mut hi = sol.x.sup(x_star);
    for a in &sol.agents {
        lo = lo.inf(&a.x);
        hi = hi.sup(&a.x);
    }
    let sps = prob.subproblems();
    let mut lipschitz = Vec::with_capacity(sps.len());
    for (i, sp) in sps.iter().enumerate() {
        let bound = box_gradient_bound(
            |x| agent_gradient(sp, x).expect("checked family"),
            &lo,
            &hi,
            64,
            i as u64,
        );
        lipschitz.push(bound.max(f64::MIN_POSITIVE));
    }
    let mut rel_sum = 0.0;
    let mut star_sum = 0.0;
    let mut relaxed_sum = 0.0;
    for (sp, a) in sps.iter().zip(&sol.agents) {
        rel_sum += agent_value(sp, &sol.x)?;
        star_sum += agent_value(sp, x_star)?;
        relaxed_sum += sp.model().objective(&a.primal());
    }
    let modulus = quadratic_modulus(prob);
    let mut inputs = BoundInputs::new(lipschitz.clone(), prob.epsilon());
    if let Some(m) = modulus {
        inputs = inputs.with_modulus(m);
    }
    Ok(BoundReport {
        epsilon: prob.epsilon(),
        gap: (rel_sum - star_sum) / n,
        gap_bound: suboptimality_bound(&inputs)?,
        distance_sq: (&sol.x - x_star).norm_squared(),
        distance_bound: modulus.map(|_| distance_bound(&inputs)).transpose()?,
        lipschitz,
        modulus,
        relaxed_value: relaxed_sum / n,
        iterations: sol.iterations,
    })
}

/// Bound reports for each radius, in the given order.
pub fn bound_sweep(
    prob: &RelaxedProblem,
    radii: &[f64],
    config: &SolverConfig,
) -> Result<Vec<BoundReport>> {
    let x_star = unrelaxed_optimum(prob)?;
    radii
        .iter()
        .map(|e| bound_check(&prob.with_epsilon(*e)?, config, &x_star))
        .collect()
}

/// True when the relaxed value does not increase as the radius grows.
pub fn monotone_in_radius(reports: &[BoundReport]) -> bool {
    let mut sorted: Vec<&BoundReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    sorted
        .windows(2)
        .all(|w| w[1].relaxed_value <= w[0].relaxed_value + MONOTONE_TOLERANCE)
}

/// Rounds from one `compute-upward` command up to the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct IterationRounds {
    pub vector: usize,
    pub scalar: usize,
    /// Backtracking trials, counted as feasibility rounds.
    pub trials: usize,
}

/// Upper bound on scalar rounds per iteration for `trials` backtracking trials.
pub fn scalar_round_bound(trials: usize) -> usize {
    2 + 2 * trials + 2
}

pub fn rounds_per_iteration(log: &MessageLog) -> Vec<IterationRounds> {
    let mut out: Vec<IterationRounds> = Vec::new();
    for r in &log.rounds {
        match r.command {
            "compute-upward" => out.push(IterationRounds {
                vector: 1,
                scalar: 0,
                trials: 0,
            }),
            "finish" | "shutdown" | "init" => {}
            name => {
                if let Some(cur) = out.last_mut() {
                    if r.vector {
                        cur.vector += 1;
                    } else {
                        cur.scalar += 1;
                    }
                    if name == "trial-feasibility" {
                        cur.trials += 1;
                    }
                }
            }
        }
    }
    out
}

/// Records whose shape could carry raw agent data: anything other than a
/// scalar, a `p`-vector or a `p x p` matrix, apart from the final state report.
pub fn raw_data_records(log: &MessageLog, p: usize) -> Vec<&LoggedRecord> {
    log.records
        .iter()
        .filter(|r| r.kind != "final-state")
        .filter(|r| {
            !matches!((r.rows, r.cols), (0, 0) | (1, 1))
                && (r.rows, r.cols) != (p, 1)
                && (r.rows, r.cols) != (p, p)
        })
        .collect()
}

/// The checks run by the `verify` subcommand.
pub fn run_suite(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let cases = direction_exactness(seed, 2)?;
    let worst = cases
        .iter()
        .map(|c| c.relative_difference)
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "direction exactness".into(),
        passed: worst <= DIRECTION_TOLERANCE,
        detail: format!(
            "{} iterates, worst relative difference {worst:.3e}",
            cases.len()
        ),
    });

    let prob = random_quadratic(5, 4, 1e-3, seed)?;
    let reports = bound_sweep(&prob, &[1e-1, 1e-2, 1e-3], &tight_config())?;
    for r in &reports {
        checks.push(Check {
            name: format!("suboptimality bound eps={:e}", r.epsilon),
            passed: r.gap_ok(),
            detail: format!("gap {:.3e} <= {:.3e}", r.gap, r.gap_bound),
        });
        checks.push(Check {
            name: format!("distance bound eps={:e}", r.epsilon),
            passed: r.distance_ok(),
            detail: format!(
                "{:.3e} <= {:.3e}",
                r.distance_sq,
                r.distance_bound.unwrap_or(f64::NAN)
            ),
        });
    }
    checks.push(Check {
        name: "monotone in radius".into(),
        passed: monotone_in_radius(&reports),
        detail: reports
            .iter()
            .map(|r| format!("{:e}: {:.12}", r.epsilon, r.relaxed_value))
            .collect::<Vec<_>>()
            .join(", "),
    });

    let prob = random_quadratic(3, 3, 1e-3, seed + 1)?;
    let cfg = SolverConfig::default();
    let (dist, dist_trace) = run_dpda(&prob, &cfg, TransportKind::Sequential)?;
    let (central, _) = centralized_pdipm_solve(&prob, &cfg)?;
    let diff = (&dist.x - &central.x).norm() / central.x.norm().max(1.0);
    checks.push(Check {
        name: "distributed matches centralized".into(),
        passed: dist.status == central.status
            && dist.iterations == central.iterations
            && diff <= 1e-8,
        detail: format!(
            "{} vs {} iterations, relative x difference {diff:.3e}",
            dist.iterations, central.iterations
        ),
    });

    let (queued, queue_trace) = run_dpda(&prob, &cfg, TransportKind::Queue)?;
    checks.push(Check {
        name: "queue and sequential transports agree".into(),
        passed: queue_trace.same_numbers(&dist_trace) && queued.x == dist.x,
        detail: format!("{} trace rows", dist_trace.rows.len()),
    });
    Ok(checks)
}
