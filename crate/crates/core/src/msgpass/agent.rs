use nalgebra::{DMatrix, DVector};

use super::messages::{Command, ReduceMessage, Reply, ReplyBody, UpwardMessage};
use crate::error::{Error, Result};
use crate::linalg::{Factorization, SINGULAR_CONDITION};
use crate::model::LocalSubproblem;
use crate::pdipm::{
    assemble_linear_term, assemble_local_hessian, dual_directions, dual_ratio, eval_residuals,
    evaluate_local, feasibility_margins, initial_agent_state, solve_local_kkt, strictly_feasible,
    surrogate_gap_local, AgentDirection, AgentState, HessianBlocks, KktOptions, LocalEval,
    LocalKktResult, LocalResiduals,
};

pub fn upward_message(
    agent: usize,
    kkt: &LocalKktResult,
    blocks: &HessianBlocks,
    r_l: &DVector<f64>,
    r_g: &DVector<f64>,
) -> Result<UpwardMessage> {
    let (n, p) = blocks.lg.shape();
    if kkt.big_u1.shape() != (n, p) || kkt.u1.len() != n || r_l.len() != n || r_g.len() != p {
        return Err(Error::dim(format!(
            "agent {agent}: upward message inputs have inconsistent shapes"
        )));
    }
    let ll_u1 = &blocks.ll * &kkt.big_u1;
    let cross = kkt.big_u1.transpose() * &blocks.lg;
    let mut q_mat = &blocks.gg + kkt.big_u1.transpose() * &ll_u1 + &cross + cross.transpose();
    let sym = (&q_mat + q_mat.transpose()) * 0.5;
    q_mat = sym;
    let q_vec = r_g
        + kkt.big_u1.transpose() * r_l
        + blocks.lg.transpose() * &kkt.u1
        + ll_u1.transpose() * &kkt.u1;
    Ok(UpwardMessage {
        agent,
        q_mat,
        q_vec,
    })
}

/// `dx = -(sum Q_i)^{-1} sum q_i`, summing in agent order.
pub fn root_direction(messages: &[UpwardMessage]) -> Result<DVector<f64>> {
    let first = messages
        .first()
        .ok_or_else(|| Error::Protocol("root received no upward messages".into()))?;
    let p = first.q_vec.len();
    let mut q_mat = DMatrix::zeros(p, p);
    let mut q_vec = DVector::zeros(p);
    for (i, m) in messages.iter().enumerate() {
        if m.agent != i {
            return Err(Error::Protocol(format!(
                "upward message in slot {i} came from agent {}",
                m.agent
            )));
        }
        if m.q_mat.shape() != (p, p) || m.q_vec.len() != p {
            return Err(Error::dim(format!(
                "agent {i}: upward message has wrong shape"
            )));
        }
        q_mat += &m.q_mat;
        q_vec += &m.q_vec;
    }
    let factor = Factorization::new(&q_mat).ok_or(Error::SingularRoot {
        condition: f64::INFINITY,
    })?;
    if factor.condition() > SINGULAR_CONDITION {
        return Err(Error::SingularRoot {
            condition: factor.condition(),
        });
    }
    Ok(-factor.solve_vec(&q_vec))
}

/// Everything a leaf keeps between its upward and downward passes.
#[derive(Clone, Debug)]
pub struct LeafCache {
    pub iteration: u64,
    pub eval: LocalEval,
    pub residuals: LocalResiduals,
    pub kkt: LocalKktResult,
}

/// Local half of the direction computation up to the upward message.
#[allow(clippy::too_many_arguments)]
pub fn leaf_upward(
    sp: &LocalSubproblem,
    x: &DVector<f64>,
    state: &AgentState,
    delta: f64,
    epsilon: f64,
    options: KktOptions,
    agent: usize,
    iteration: u64,
) -> Result<(UpwardMessage, LeafCache)> {
    let eval = evaluate_local(sp, x, state, epsilon, agent)?;
    let residuals = eval_residuals(&eval, sp, state, delta);
    let blocks = assemble_local_hessian(&eval, state);
    let (r_l, r_g) = assemble_linear_term(&residuals, &eval);
    let kkt = solve_local_kkt(
        &blocks.ll,
        &blocks.lg,
        sp.eq_matrix(),
        &r_l,
        &residuals.primal,
        options,
        agent,
    )?;
    let msg = upward_message(agent, &kkt, &blocks, &r_l, &r_g)?;
    Ok((
        msg,
        LeafCache {
            iteration,
            eval,
            residuals,
            kkt,
        },
    ))
}

/// `[dx_i; dt_i] = u1 + U1 dx`, `dv_i = u2 + U2 dx`.
pub fn downward_apply(
    cache: &LeafCache,
    iteration: u64,
    dx: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if cache.iteration != iteration {
        return Err(Error::Protocol(format!(
            "direction for iteration {iteration} applied to factorization from iteration {}",
            cache.iteration
        )));
    }
    if dx.len() != cache.kkt.big_u1.ncols() {
        return Err(Error::dim("downward dx has wrong length"));
    }
    let dw = &cache.kkt.u1 + &cache.kkt.big_u1 * dx;
    let dv = &cache.kkt.u2 + &cache.kkt.big_u2 * dx;
    Ok((dw, dv))
}

pub fn leaf_direction(
    cache: &LeafCache,
    state: &AgentState,
    iteration: u64,
    dx: &DVector<f64>,
) -> Result<AgentDirection> {
    let (dw, dv) = downward_apply(cache, iteration, dx)?;
    let (dz, dlambda) = dual_directions(&cache.eval, state, &cache.residuals, &dw, dx);
    let p = dx.len();
    Ok(AgentDirection {
        dx: dw.rows(0, p).into_owned(),
        dt: dw.rows(p, dw.len() - p).into_owned(),
        dv,
        dz,
        dlambda,
    })
}

/// A leaf of the star tree. It owns its subproblem data and primal-dual
/// state, and sees the shared `x` only through broadcasts.
#[derive(Debug)]
pub struct LeafAgent {
    id: usize,
    sp: LocalSubproblem,
    epsilon: f64,
    options: KktOptions,
    x: DVector<f64>,
    delta: f64,
    state: Option<AgentState>,
    cache: Option<LeafCache>,
    direction: Option<(u64, DVector<f64>, AgentDirection)>,
}

impl LeafAgent {
    pub fn new(id: usize, sp: LocalSubproblem, epsilon: f64, options: KktOptions) -> Self {
        let p = sp.p();
        Self {
            id,
            sp,
            epsilon,
            options,
            x: DVector::zeros(p),
            delta: 1.0,
            state: None,
            cache: None,
            direction: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    fn state(&self) -> Result<&AgentState> {
        self.state
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("agent {} used before init", self.id)))
    }

    fn direction(&self, iteration: u64) -> Result<&(u64, DVector<f64>, AgentDirection)> {
        match &self.direction {
            Some(d) if d.0 == iteration => Ok(d),
            Some(d) => Err(Error::Protocol(format!(
                "agent {}: trial for iteration {iteration} but direction is from iteration {}",
                self.id, d.0
            ))),
            None => Err(Error::Protocol(format!(
                "agent {}: trial before direction",
                self.id
            ))),
        }
    }

    pub fn handle(&mut self, cmd: &Command, round: u64) -> Reply {
        let body = match self.step(cmd) {
            Ok(b) => b,
            Err(e) => ReplyBody::Failed(e),
        };
        Reply {
            agent: self.id,
            round,
            body,
        }
    }

    fn gap(&self) -> Result<f64> {
        let s = self.state()?;
        let eval = evaluate_local(&self.sp, &self.x, s, self.epsilon, self.id)?;
        Ok(surrogate_gap_local(&eval, s))
    }

    fn step(&mut self, cmd: &Command) -> Result<ReplyBody> {
        use ReduceMessage::*;
        match cmd {
            Command::Init { x0, lambda0 } => {
                self.state = Some(initial_agent_state(&self.sp, x0, self.id, *lambda0)?);
                self.x = x0.clone();
                Ok(ReplyBody::Reduce(vec![SumScalar(self.gap()?)]))
            }
            Command::Perturbation { delta } => {
                self.delta = *delta;
                let s = self.state()?;
                let eval = evaluate_local(&self.sp, &self.x, s, self.epsilon, self.id)?;
                let c = eval_residuals(&eval, &self.sp, s, self.delta).contribution();
                let (worst_primal, worst_dual) =
                    feasibility_margins(&self.sp, &self.x, s, self.epsilon);
                Ok(ReplyBody::Reduce(vec![
                    SumScalar(c.local_sq),
                    SumScalar(c.dual_local_sq),
                    SumVector(c.dual_global),
                    SumScalar(c.primal_sq),
                    MaxScalar(worst_primal),
                    MinScalar(worst_dual),
                ]))
            }
            Command::ComputeUpward { iteration } => {
                let s = self.state()?;
                let (msg, cache) = leaf_upward(
                    &self.sp,
                    &self.x,
                    s,
                    self.delta,
                    self.epsilon,
                    self.options,
                    self.id,
                    *iteration,
                )?;
                self.cache = Some(cache);
                self.direction = None;
                Ok(ReplyBody::Upward(msg))
            }
            Command::Direction(down) => {
                let cache = self.cache.as_ref().ok_or_else(|| {
                    Error::Protocol(format!("agent {}: no cached factorization", self.id))
                })?;
                let s = self.state()?;
                let dir = leaf_direction(cache, s, down.iteration, &down.dx)?;
                let ratio = dual_ratio(s, &dir);
                self.direction = Some((down.iteration, down.dx.clone(), dir));
                Ok(ReplyBody::Reduce(vec![MinScalar(ratio)]))
            }
            Command::TrialFeasibility { iteration, alpha } => {
                let (_, dx, dir) = self.direction(*iteration)?;
                let x = &self.x + dx * *alpha;
                let trial = self.state()?.stepped(dir, *alpha);
                Ok(ReplyBody::Reduce(vec![FlagAnd(strictly_feasible(
                    &self.sp,
                    &x,
                    &trial,
                    self.epsilon,
                ))]))
            }
            Command::TrialResidual { iteration, alpha } => {
                let (_, dx, dir) = self.direction(*iteration)?;
                let x = &self.x + dx * *alpha;
                let trial = self.state()?.stepped(dir, *alpha);
                let eval = evaluate_local(&self.sp, &x, &trial, self.epsilon, self.id)?;
                let c = eval_residuals(&eval, &self.sp, &trial, self.delta).contribution();
                Ok(ReplyBody::Reduce(vec![
                    SumScalar(c.local_sq),
                    SumVector(c.dual_global),
                ]))
            }
            Command::Accept {
                iteration,
                alpha,
                x,
            } => {
                let next = {
                    let (_, _, dir) = self.direction(*iteration)?;
                    self.state()?.stepped(dir, *alpha)
                };
                self.state = Some(next);
                self.x = x.clone();
                self.cache = None;
                self.direction = None;
                Ok(ReplyBody::Reduce(vec![SumScalar(self.gap()?)]))
            }
            Command::Finish => Ok(ReplyBody::Final {
                x: self.x.clone(),
                state: self.state()?.clone(),
            }),
            Command::Shutdown => Err(Error::Protocol(format!(
                "agent {} received shutdown as a request",
                self.id
            ))),
        }
    }
}
