//! Problem builders for the shipped experiments and random test instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    partition_data, shuffle_rows, synth_rls_conditioned, Ionosphere, RlsConfig, RlsData,
};
use crate::error::{Error, Result};
use crate::model::{assemble_relaxed_problem, RelaxedProblem};
use crate::pdipm::{initialize, strictly_feasible, AgentState, InitStrategy, Iterate};
use crate::reformulations::{
    huber_epigraph_subproblem, logistic_subproblem, quadratic_subproblem, HuberData, LogisticData,
};

/// Robust least squares over synthetic blocks, one Huber agent per block.
pub fn rls_problem(
    cfg: &RlsConfig,
    kappa: Option<f64>,
    epsilon: f64,
) -> Result<(RelaxedProblem, RlsData)> {
    let data = synth_rls_conditioned(cfg, kappa)?;
    let sps = data
        .blocks
        .iter()
        .map(|(a, y)| {
            HuberData::new(a.clone(), y.clone(), cfg.threshold).map(huber_epigraph_subproblem)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((assemble_relaxed_problem(sps, epsilon)?, data))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogregSetup {
    pub agents: usize,
    pub rho: f64,
    pub epsilon: f64,
    /// Row shuffle applied before sharding; `None` keeps file order.
    pub shuffle: Option<u64>,
}

impl Default for LogregSetup {
    fn default() -> Self {
        Self {
            agents: 10,
            rho: 1.0,
            epsilon: 1e-3,
            shuffle: None,
        }
    }
}

/// Regularized logistic regression with the rows sharded contiguously.
pub fn logreg_problem(data: &Ionosphere, setup: &LogregSetup) -> Result<RelaxedProblem> {
    let (phi, labels) = match setup.shuffle {
        Some(seed) => shuffle_rows(&data.phi, &data.labels, seed),
        None => (data.phi.clone(), data.labels.clone()),
    };
    let sps = partition_data(&phi, &labels, setup.agents)?
        .into_iter()
        .map(|(a, y)| LogisticData::new(a, y, setup.rho, setup.agents).map(logistic_subproblem))
        .collect::<Result<Vec<_>>>()?;
    assemble_relaxed_problem(sps, setup.epsilon)
}

/// Strongly convex quadratics `P_i = B_i B_i^T / p + I / 2`, `q_i ~ N(0, 4 I)`.
pub fn random_quadratic(
    agents: usize,
    p: usize,
    epsilon: f64,
    seed: u64,
) -> Result<RelaxedProblem> {
    if agents == 0 || p == 0 {
        return Err(Error::invalid("agents and p must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sps = (0..agents)
        .map(|_| {
            let b = DMatrix::from_fn(p, p, |_, _| normal(&mut rng));
            let mut h = &b * b.transpose() / p as f64;
            for k in 0..p {
                h[(k, k)] += 0.5;
            }
            let h = (&h + h.transpose()) * 0.5;
            let q = DVector::from_fn(p, |_, _| 2.0 * normal(&mut rng));
            quadratic_subproblem(h, q)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_relaxed_problem(sps, epsilon)
}

/// Small Huber instance with `rows` points per agent and half the residuals
/// pushed into the linear branch by outliers.
pub fn random_huber(
    agents: usize,
    p: usize,
    rows: usize,
    epsilon: f64,
    seed: u64,
) -> Result<RelaxedProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_true = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
    let sps = (0..agents)
        .map(|_| {
            let a = DMatrix::from_fn(rows, p, |_, _| rng.random::<f64>());
            let y = DVector::from_fn(rows, |j, _| {
                let outlier = if j % 2 == 0 {
                    4.0 * normal(&mut rng)
                } else {
                    0.1 * normal(&mut rng)
                };
                (a.row(j) * &x_true)[0] + outlier
            });
            HuberData::new(a, y, 1.0).map(huber_epigraph_subproblem)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_relaxed_problem(sps, epsilon)
}

/// Logistic instance with Gaussian features and labels from a noisy linear rule.
pub fn random_logistic(
    agents: usize,
    p: usize,
    rows: usize,
    epsilon: f64,
    seed: u64,
) -> Result<RelaxedProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DVector::from_fn(p, |_, _| normal(&mut rng));
    let sps = (0..agents)
        .map(|_| {
            let phi = DMatrix::from_fn(rows, p, |_, _| normal(&mut rng));
            let y = DVector::from_fn(rows, |j, _| {
                let s = (phi.row(j) * &w)[0] + 0.5 * normal(&mut rng);
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            });
            LogisticData::new(phi, y, 1.0, agents).map(logistic_subproblem)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_relaxed_problem(sps, epsilon)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// A strictly feasible iterate away from the solver's start: random `x`,
/// local copies inside the ball, perturbed local variables and random
/// positive duals.
pub fn random_iterate(prob: &RelaxedProblem, seed: u64) -> Result<Iterate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = prob.p();
    let eps = prob.epsilon();
    let x = DVector::from_fn(p, |_, _| normal(&mut rng));
    let mut it = initialize(prob, Some(&x), 10.0, InitStrategy::Unit)?;
    for (i, (sp, state)) in prob
        .subproblems()
        .iter()
        .zip(it.agents.iter_mut())
        .enumerate()
    {
        let dir = DVector::from_fn(p, |_, _| normal(&mut rng));
        let radius = eps * rng.random_range(0.1..0.9);
        let x_i = &x + dir.normalize() * radius;
        let t = sp.model().feasible_extension(&x_i).ok_or_else(|| {
            Error::UnsupportedInitialization {
                agent: i,
                family: sp.family().into(),
            }
        })?;
        let mut candidate = AgentState {
            x: x_i,
            t,
            z: DVector::from_fn(sp.m(), |_, _| rng.random_range(0.1..2.0)),
            v: DVector::from_fn(sp.u(), |_, _| normal(&mut rng)),
            lambda: rng.random_range(0.1..2.0),
        };
        // jitter t while it stays strictly feasible
        for _ in 0..20 {
            let mut trial = candidate.clone();
            trial.t += DVector::from_fn(trial.t.len(), |_, _| 0.1 * normal(&mut rng));
            if strictly_feasible(sp, &x, &trial, eps) {
                candidate = trial;
                break;
            }
        }
        *state = candidate;
    }
    it.delta = rng.random_range(1.0..100.0);
    Ok(it)
}
