use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::agent::{root_direction, LeafAgent};
use super::messages::{
    reduce, Command, DownwardMessage, ReduceMessage, Reply, ReplyBody, UpwardMessage,
};
use super::transport::{QueueTransport, SequentialTransport, Transport};
use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::model::RelaxedProblem;
use crate::pdipm::{
    backtrack, check_termination, step_cap, update_perturbation, AgentState, LineSearchOutcome,
    ResidualSummary, StepProbe,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIter,
    LineSearchFailure,
    SingularSystem,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max-iter",
            Status::LineSearchFailure => "line-search-failure",
            Status::SingularSystem => "singular-system",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Solution {
    pub status: Status,
    /// Shared variable held by the root.
    pub x: DVector<f64>,
    pub agents: Vec<AgentState>,
    /// Each agent's copy of the last broadcast `x`.
    pub reported_x: Vec<DVector<f64>>,
    pub iterations: usize,
    pub eta_hat: f64,
    pub r_dual_norm: f64,
    pub r_primal_norm: f64,
}

/// One row per completed iteration; values describe the iterate after the step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub eta_hat: f64,
    pub r_dual_norm: f64,
    pub r_primal_norm: f64,
    pub alpha: f64,
    pub alpha_max: f64,
    /// Perturbation parameter after the update at the end of the iteration.
    pub delta: f64,
    /// Full residual norm before and after the step, at the pre-update delta.
    pub residual_before: f64,
    pub residual_after: f64,
    pub trials: usize,
    pub vector_rounds: usize,
    pub scalar_rounds: usize,
    pub wall_time: f64,
    pub x: DVector<f64>,
    /// Largest constraint value (ball and `G`) over all agents.
    pub max_constraint: f64,
    /// Smallest dual value (`z` and `lambda`) over all agents.
    pub min_dual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Equality of everything except wall-clock times.
    pub fn same_numbers(&self, other: &Trace) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                let mut b = b.clone();
                b.wall_time = a.wall_time;
                *a == b
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    Queue,
    Sequential,
}

impl std::str::FromStr for TransportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "queue" => Ok(TransportKind::Queue),
            "sequential" => Ok(TransportKind::Sequential),
            other => Err(Error::InvalidConfig(format!("unknown transport `{other}`"))),
        }
    }
}

pub fn leaf_agents(prob: &RelaxedProblem, config: &SolverConfig) -> Vec<LeafAgent> {
    prob.subproblems()
        .iter()
        .enumerate()
        .map(|(i, sp)| LeafAgent::new(i, sp.clone(), prob.epsilon(), config.kkt))
        .collect()
}

/// Runs the distributed algorithm with `x0 = 0`.
pub fn run_dpda(
    prob: &RelaxedProblem,
    config: &SolverConfig,
    kind: TransportKind,
) -> Result<(Solution, Trace)> {
    config.validate()?;
    let agents = leaf_agents(prob, config);
    match kind {
        TransportKind::Sequential => {
            run_dpda_with(prob, config, &mut SequentialTransport::new(agents), None)
        }
        TransportKind::Queue => {
            run_dpda_with(prob, config, &mut QueueTransport::spawn(agents), None)
        }
    }
}

fn reductions(replies: Vec<Reply>) -> Result<Vec<ReduceMessage>> {
    let mut lists = Vec::with_capacity(replies.len());
    for r in replies {
        match r.body {
            ReplyBody::Reduce(list) => lists.push(list),
            ReplyBody::Failed(e) => return Err(e),
            _ => {
                return Err(Error::Protocol(format!(
                    "agent {} sent a non-reduction reply",
                    r.agent
                )))
            }
        }
    }
    reduce(&lists)
}

struct Stats {
    residual: ResidualSummary,
    max_constraint: f64,
    min_dual: f64,
}

fn perturbation_round(t: &mut dyn Transport, delta: f64) -> Result<Stats> {
    let r = reductions(t.exchange(Command::Perturbation { delta })?)?;
    Ok(Stats {
        residual: ResidualSummary::from_sums(
            r[0].scalar()?,
            r[1].scalar()?,
            r[2].vector()?,
            r[3].scalar()?,
        ),
        max_constraint: r[4].scalar()?,
        min_dual: r[5].scalar()?,
    })
}

struct RemoteProbe<'a> {
    transport: &'a mut dyn Transport,
    iteration: u64,
    rounds: usize,
}

impl StepProbe for RemoteProbe<'_> {
    fn feasible(&mut self, alpha: f64) -> Result<bool> {
        self.rounds += 1;
        let r = reductions(self.transport.exchange(Command::TrialFeasibility {
            iteration: self.iteration,
            alpha,
        })?)?;
        r[0].flag()
    }

    fn residual_norm(&mut self, alpha: f64) -> Result<f64> {
        self.rounds += 1;
        let r = reductions(self.transport.exchange(Command::TrialResidual {
            iteration: self.iteration,
            alpha,
        })?)?;
        Ok((r[0].scalar()? + r[1].vector()?.norm_squared()).sqrt())
    }
}

fn failure_status(e: &Error) -> Option<Status> {
    match e {
        Error::SingularKkt { .. } | Error::SingularRoot { .. } | Error::SingularSystem => {
            Some(Status::SingularSystem)
        }
        Error::LineSearchFailure { .. } => Some(Status::LineSearchFailure),
        _ => None,
    }
}

struct StepRecord {
    outcome: LineSearchOutcome,
    scalar_rounds: usize,
    eta: f64,
}

/// Runs the distributed algorithm over an existing transport. The root holds
/// only `x`, the scalars it reduces and the upward quadratic models.
pub fn run_dpda_with(
    prob: &RelaxedProblem,
    config: &SolverConfig,
    t: &mut dyn Transport,
    x0: Option<DVector<f64>>,
) -> Result<(Solution, Trace)> {
    config.validate()?;
    let m_total = prob.total_ineq_count();
    let mut x = x0.unwrap_or_else(|| DVector::zeros(prob.p()));
    let clock = Stopwatch::start();

    let mut eta = reductions(t.exchange(Command::Init {
        x0: x.clone(),
        lambda0: config.init.ball_multiplier(prob.epsilon()),
    })?)?[0]
        .scalar()?;
    let mut delta = update_perturbation(eta, m_total, config.mu)?;
    let mut stats = perturbation_round(t, delta)?;
    let mut trace = Trace::default();
    let mut status = Status::MaxIter;
    let mut iterations = 0;

    for k in 1..=config.max_iter {
        let done = check_termination(
            stats.residual.primal,
            stats.residual.dual,
            eta,
            config.eps_feas,
            config.eps_d,
        );
        if done {
            status = Status::Converged;
            break;
        }
        let before = stats.residual.full;
        let step = match iterate_once(t, &mut x, k as u64, config, before) {
            Ok(s) => s,
            Err(e) => match failure_status(&e) {
                Some(s) => {
                    status = s;
                    break;
                }
                None => return Err(e),
            },
        };
        eta = step.eta;
        delta = update_perturbation(eta, m_total, config.mu)?;
        stats = perturbation_round(t, delta)?;
        iterations = k;
        trace.rows.push(TraceRow {
            k,
            eta_hat: eta,
            r_dual_norm: stats.residual.dual,
            r_primal_norm: stats.residual.primal,
            alpha: step.outcome.alpha,
            alpha_max: step.outcome.alpha_max,
            delta,
            residual_before: step.outcome.residual_before,
            residual_after: step.outcome.residual_after,
            trials: step.outcome.trials,
            vector_rounds: 2,
            scalar_rounds: step.scalar_rounds + 1,
            wall_time: clock.elapsed(),
            x: x.clone(),
            max_constraint: stats.max_constraint,
            min_dual: stats.min_dual,
        });
    }
    if status == Status::MaxIter
        && config.max_iter > 0
        && check_termination(
            stats.residual.primal,
            stats.residual.dual,
            eta,
            config.eps_feas,
            config.eps_d,
        )
    {
        status = Status::Converged;
    }

    let mut agents = Vec::with_capacity(t.agent_count());
    let mut reported_x = Vec::with_capacity(t.agent_count());
    for r in t.exchange(Command::Finish)? {
        match r.body {
            ReplyBody::Final { x, state } => {
                reported_x.push(x);
                agents.push(state);
            }
            ReplyBody::Failed(e) => return Err(e),
            _ => {
                return Err(Error::Protocol(format!(
                    "agent {} sent no final state",
                    r.agent
                )))
            }
        }
    }
    let solution = Solution {
        status,
        x,
        agents,
        reported_x,
        iterations,
        eta_hat: eta,
        r_dual_norm: stats.residual.dual,
        r_primal_norm: stats.residual.primal,
    };
    Ok((solution, trace))
}

fn iterate_once(
    t: &mut dyn Transport,
    x: &mut DVector<f64>,
    k: u64,
    config: &SolverConfig,
    before: f64,
) -> Result<StepRecord> {
    let replies = t.exchange(Command::ComputeUpward { iteration: k })?;
    let mut msgs: Vec<UpwardMessage> = Vec::with_capacity(replies.len());
    for r in replies {
        match r.body {
            ReplyBody::Upward(m) => msgs.push(m),
            ReplyBody::Failed(e) => return Err(e),
            _ => {
                return Err(Error::Protocol(format!(
                    "agent {} sent no upward message",
                    r.agent
                )))
            }
        }
    }
    let dx = root_direction(&msgs)?;
    let ratio = reductions(t.exchange(Command::Direction(DownwardMessage {
        iteration: k,
        dx: dx.clone(),
    }))?)?[0]
        .scalar()?;
    let mut probe = RemoteProbe {
        transport: t,
        iteration: k,
        rounds: 1,
    };
    let outcome = backtrack(
        &mut probe,
        step_cap(ratio),
        before,
        config.beta,
        config.alpha_ls,
    );
    let rounds = probe.rounds;
    let outcome = outcome?;
    let x_new = &*x + &dx * outcome.alpha;
    let eta = reductions(t.exchange(Command::Accept {
        iteration: k,
        alpha: outcome.alpha,
        x: x_new.clone(),
    })?)?[0]
        .scalar()?;
    *x = x_new;
    Ok(StepRecord {
        outcome,
        scalar_rounds: rounds + 1,
        eta,
    })
}

#[derive(Clone, Copy, Debug)]
struct Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
            start: std::time::Instant::now(),
        }
    }

    /// Seconds since start; always zero on targets without a clock.
    fn elapsed(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        {
            0.0
        }
    }
}
