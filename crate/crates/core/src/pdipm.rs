//! Per-agent primal-dual interior-point mathematics.
//!
//! Every function here touches one agent's slice of the iterate and treats the
//! shared `x` as read-only input, so different agents can run them
//! concurrently. The centralized helpers at the bottom (`initialize`,
//! `line_search`, `residual_summary`) simply loop over agents in index order.
//!
//! Ball constraint for agent `i`: `g_i = ||x - x_i||^2 - eps^2 <= 0` with dual
//! `lambda_i`; its gradient with respect to `(x_i, t_i, x)` is
//! `2 [x_i - x; 0; x - x_i]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{stack, Factorization, SINGULAR_CONDITION};
use crate::model::{LocalSubproblem, RelaxedProblem};

/// Fraction-to-boundary factor for the dual step cap.
pub const FRACTION_TO_BOUNDARY: f64 = 0.99;

/// Backtracking gives up once the step falls below this.
pub const MIN_STEP: f64 = 1e-12;

/// Ridge added to the local Hessian block when the fallback is enabled.
pub const KKT_RIDGE: f64 = 1e-10;

/// One agent's primal-dual variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Local copy `x_i` of the shared variable.
    pub x: DVector<f64>,
    pub t: DVector<f64>,
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: f64,
}

impl AgentState {
    pub fn primal(&self) -> DVector<f64> {
        stack(&[&self.x, &self.t])
    }

    pub fn stepped(&self, dir: &AgentDirection, alpha: f64) -> AgentState {
        AgentState {
            x: &self.x + &dir.dx * alpha,
            t: &self.t + &dir.dt * alpha,
            z: &self.z + &dir.dz * alpha,
            v: &self.v + &dir.dv * alpha,
            lambda: self.lambda + alpha * dir.dlambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub x: DVector<f64>,
    pub agents: Vec<AgentState>,
    pub delta: f64,
    pub k: usize,
}

impl Iterate {
    pub fn stepped(&self, dir: &Direction, alpha: f64) -> Iterate {
        Iterate {
            x: &self.x + &dir.dx * alpha,
            agents: self
                .agents
                .iter()
                .zip(&dir.agents)
                .map(|(s, d)| s.stepped(d, alpha))
                .collect(),
            delta: self.delta,
            k: self.k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDirection {
    pub dx: DVector<f64>,
    pub dt: DVector<f64>,
    pub dv: DVector<f64>,
    pub dz: DVector<f64>,
    pub dlambda: f64,
}

impl AgentDirection {
    pub fn primal(&self) -> DVector<f64> {
        stack(&[&self.dx, &self.dt])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub dx: DVector<f64>,
    pub agents: Vec<AgentDirection>,
}

impl Direction {
    /// All components stacked as `[dx; (dx_i, dt_i, dv_i, dz_i, dlambda_i) for each i]`.
    pub fn flatten(&self) -> DVector<f64> {
        let mut parts: Vec<f64> = self.dx.iter().copied().collect();
        for a in &self.agents {
            parts.extend(a.dx.iter());
            parts.extend(a.dt.iter());
            parts.extend(a.dv.iter());
            parts.extend(a.dz.iter());
            parts.push(a.dlambda);
        }
        DVector::from_vec(parts)
    }

    pub fn relative_difference(&self, reference: &Direction) -> f64 {
        crate::linalg::relative_difference(&self.flatten(), &reference.flatten(), 1e-300)
    }
}

/// Derivative data for one agent at the current point.
#[derive(Clone, Debug)]
pub struct LocalEval {
    pub w: DVector<f64>,
    /// `G_i(w)`, strictly negative.
    pub g: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub grad_h: DVector<f64>,
    /// `Hess h + sum_j z_j Hess G_j`.
    pub hess: DMatrix<f64>,
    /// `x_i - x`.
    pub diff: DVector<f64>,
    /// `||x - x_i||^2 - eps^2`, strictly negative.
    pub ball_slack: f64,
}

fn ball_slack(x: &DVector<f64>, local: &DVector<f64>, epsilon: f64) -> f64 {
    (local - x).norm_squared() - epsilon * epsilon
}

/// Checks strict primal feasibility at agent `agent` without derivatives.
pub fn strictly_feasible(
    sp: &LocalSubproblem,
    x: &DVector<f64>,
    state: &AgentState,
    epsilon: f64,
) -> bool {
    let w = state.primal();
    ball_slack(x, &state.x, epsilon) < 0.0
        && sp.model().constraints(&w).iter().all(|g| *g < 0.0)
        && state.z.iter().all(|z| *z > 0.0)
        && state.lambda > 0.0
}

/// Largest primal constraint value (ball and `G`) and smallest dual value.
pub fn feasibility_margins(
    sp: &LocalSubproblem,
    x: &DVector<f64>,
    state: &AgentState,
    epsilon: f64,
) -> (f64, f64) {
    let g = sp.model().constraints(&state.primal());
    let worst_primal = g
        .iter()
        .copied()
        .fold(ball_slack(x, &state.x, epsilon), f64::max);
    let worst_dual = state.z.iter().copied().fold(state.lambda, f64::min);
    (worst_primal, worst_dual)
}

pub fn evaluate_local(
    sp: &LocalSubproblem,
    x: &DVector<f64>,
    state: &AgentState,
    epsilon: f64,
    agent: usize,
) -> Result<LocalEval> {
    let model = sp.model();
    if state.x.len() != sp.p()
        || state.t.len() != sp.d()
        || state.z.len() != sp.m()
        || state.v.len() != sp.u()
    {
        return Err(Error::dim(format!(
            "agent {agent}: state does not match subproblem dimensions"
        )));
    }
    let w = state.primal();
    let g = model.constraints(&w);
    if let Some((j, gj)) = g.iter().enumerate().find(|(_, gj)| !(**gj < 0.0)) {
        return Err(Error::FeasibilityViolation {
            agent,
            detail: format!("G_{j} = {gj:e}"),
        });
    }
    let slack = ball_slack(x, &state.x, epsilon);
    if !(slack < 0.0) {
        return Err(Error::FeasibilityViolation {
            agent,
            detail: format!("ball slack = {slack:e}"),
        });
    }
    if let Some((j, zj)) = state.z.iter().enumerate().find(|(_, zj)| !(**zj > 0.0)) {
        return Err(Error::FeasibilityViolation {
            agent,
            detail: format!("z_{j} = {zj:e}"),
        });
    }
    if !(state.lambda > 0.0) {
        return Err(Error::FeasibilityViolation {
            agent,
            detail: format!("lambda = {:e}", state.lambda),
        });
    }
    let mut hess = model.objective_hessian(&w);
    if sp.m() > 0 {
        hess += model.weighted_constraint_hessian(&w, &state.z);
    }
    Ok(LocalEval {
        jac: model.constraint_jacobian(&w),
        grad_h: model.objective_gradient(&w),
        hess,
        g,
        diff: &state.x - x,
        ball_slack: slack,
        w,
    })
}

/// The three blocks of the agent's primal-dual Hessian over `([x_i; t_i], x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianBlocks {
    pub ll: DMatrix<f64>,
    pub lg: DMatrix<f64>,
    pub gg: DMatrix<f64>,
}

impl HessianBlocks {
    pub fn full(&self) -> DMatrix<f64> {
        let (n, p) = self.lg.shape();
        let mut h = DMatrix::zeros(n + p, n + p);
        h.view_mut((0, 0), (n, n)).copy_from(&self.ll);
        h.view_mut((0, n), (n, p)).copy_from(&self.lg);
        h.view_mut((n, 0), (p, n)).copy_from(&self.lg.transpose());
        h.view_mut((n, n), (p, p)).copy_from(&self.gg);
        h
    }
}

pub fn assemble_local_hessian(eval: &LocalEval, state: &AgentState) -> HessianBlocks {
    let n = eval.w.len();
    let p = eval.diff.len();
    let lambda = state.lambda;
    let mut ll = eval.hess.clone();
    if !eval.g.is_empty() {
        // J^T diag(-z / G) J
        let mut scaled = eval.jac.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= -state.z[j] / eval.g[j];
        }
        ll += eval.jac.transpose() * scaled;
    }
    for k in 0..p {
        ll[(k, k)] += 2.0 * lambda;
    }
    // - (lambda / g) grad_g grad_g^T with grad_g = 2 [diff; 0; -diff]
    let outer = -4.0 * lambda / eval.ball_slack;
    let mut lg = DMatrix::zeros(n, p);
    let mut gg = DMatrix::zeros(p, p);
    for a in 0..p {
        lg[(a, a)] = -2.0 * lambda;
        gg[(a, a)] = 2.0 * lambda;
        for b in 0..p {
            let dd = eval.diff[a] * eval.diff[b];
            ll[(a, b)] += outer * dd;
            lg[(a, b)] -= outer * dd;
            gg[(a, b)] += outer * dd;
        }
    }
    HessianBlocks { ll, lg, gg }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalResiduals {
    /// Stationarity with respect to `[x_i; t_i]`.
    pub dual_local: DVector<f64>,
    /// This agent's contribution to stationarity in `x`: `2 lambda (x - x_i)`.
    pub dual_global: DVector<f64>,
    /// `-diag(z) G - (1/delta) 1`.
    pub cent: DVector<f64>,
    /// Ball centrality `-lambda g - 1/delta`.
    pub ball: f64,
    /// `b - A [x_i; t_i]`.
    pub primal: DVector<f64>,
}

impl LocalResiduals {
    /// Squared norm of everything except the global dual block.
    pub fn local_sq(&self) -> f64 {
        self.dual_local.norm_squared()
            + self.cent.norm_squared()
            + self.ball * self.ball
            + self.primal.norm_squared()
    }

    pub fn contribution(&self) -> ResidualContribution {
        ResidualContribution {
            local_sq: self.local_sq(),
            dual_local_sq: self.dual_local.norm_squared(),
            dual_global: self.dual_global.clone(),
            primal_sq: self.primal.norm_squared(),
        }
    }
}

pub fn eval_residuals(
    eval: &LocalEval,
    sp: &LocalSubproblem,
    state: &AgentState,
    delta: f64,
) -> LocalResiduals {
    let p = eval.diff.len();
    let inv_delta = 1.0 / delta;
    let mut dual_local = eval.grad_h.clone();
    if !eval.g.is_empty() {
        dual_local += eval.jac.transpose() * &state.z;
    }
    if sp.u() > 0 {
        dual_local += sp.eq_matrix().transpose() * &state.v;
    }
    dual_local
        .rows_mut(0, p)
        .axpy(2.0 * state.lambda, &eval.diff, 1.0);
    let cent = DVector::from_fn(eval.g.len(), |j, _| -state.z[j] * eval.g[j] - inv_delta);
    let primal = if sp.u() > 0 {
        sp.eq_rhs() - sp.eq_matrix() * &eval.w
    } else {
        DVector::zeros(0)
    };
    LocalResiduals {
        dual_local,
        dual_global: &eval.diff * (-2.0 * state.lambda),
        cent,
        ball: -state.lambda * eval.ball_slack - inv_delta,
        primal,
    }
}

/// Linear term `(r_l, r_g)` of the local search-direction QP, obtained by
/// eliminating the inequality and ball duals from the Newton system.
pub fn assemble_linear_term(
    res: &LocalResiduals,
    eval: &LocalEval,
) -> (DVector<f64>, DVector<f64>) {
    let p = eval.diff.len();
    let mut r_l = res.dual_local.clone();
    if !eval.g.is_empty() {
        let ratio = res.cent.component_div(&eval.g);
        r_l += eval.jac.transpose() * ratio;
    }
    let c = 2.0 * res.ball / eval.ball_slack;
    r_l.rows_mut(0, p).axpy(c, &eval.diff, 1.0);
    let r_g = &res.dual_global - &eval.diff * c;
    (r_l, r_g)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktOptions {
    /// Add `KKT_RIDGE * I` to the local Hessian block before factoring.
    pub ridge: bool,
}

/// Affine parametrization of the local directions in terms of `dx`:
/// `[dx_i; dt_i] = u1 + U1 dx`, `dv_i = u2 + U2 dx`.
#[derive(Clone, Debug)]
pub struct LocalKktResult {
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
    pub big_u1: DMatrix<f64>,
    pub big_u2: DMatrix<f64>,
    pub factor: Factorization,
}

pub fn solve_local_kkt(
    h_ll: &DMatrix<f64>,
    h_lg: &DMatrix<f64>,
    eq_matrix: &DMatrix<f64>,
    r_l: &DVector<f64>,
    r_primal: &DVector<f64>,
    options: KktOptions,
    agent: usize,
) -> Result<LocalKktResult> {
    let n = h_ll.nrows();
    let p = h_lg.ncols();
    let u = eq_matrix.nrows();
    if u > n {
        return Err(Error::SingularKkt {
            agent,
            condition: f64::INFINITY,
        });
    }
    let mut kkt = DMatrix::zeros(n + u, n + u);
    kkt.view_mut((0, 0), (n, n)).copy_from(h_ll);
    if options.ridge {
        for k in 0..n {
            kkt[(k, k)] += KKT_RIDGE;
        }
    }
    if u > 0 {
        kkt.view_mut((0, n), (n, u))
            .copy_from(&eq_matrix.transpose());
        kkt.view_mut((n, 0), (u, n)).copy_from(eq_matrix);
    }
    let factor = Factorization::new(&kkt).ok_or(Error::SingularKkt {
        agent,
        condition: f64::INFINITY,
    })?;
    if factor.condition() > SINGULAR_CONDITION {
        return Err(Error::SingularKkt {
            agent,
            condition: factor.condition(),
        });
    }
    let mut rhs = DMatrix::zeros(n + u, 1 + p);
    for k in 0..n {
        rhs[(k, 0)] = -r_l[k];
        for c in 0..p {
            rhs[(k, 1 + c)] = -h_lg[(k, c)];
        }
    }
    for k in 0..u {
        rhs[(n + k, 0)] = r_primal[k];
    }
    let sol = factor.solve(&rhs);
    Ok(LocalKktResult {
        u1: sol.view((0, 0), (n, 1)).column(0).into_owned(),
        u2: sol.view((n, 0), (u, 1)).column(0).into_owned(),
        big_u1: sol.view((0, 1), (n, p)).into_owned(),
        big_u2: sol.view((n, 1), (u, p)).into_owned(),
        factor,
    })
}

/// Recovers `(dz_i, dlambda_i)` from the primal directions.
pub fn dual_directions(
    eval: &LocalEval,
    state: &AgentState,
    res: &LocalResiduals,
    dw: &DVector<f64>,
    dx: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let dz = if eval.g.is_empty() {
        DVector::zeros(0)
    } else {
        let jdw = &eval.jac * dw;
        DVector::from_fn(eval.g.len(), |j, _| {
            -(state.z[j] * jdw[j] - res.cent[j]) / eval.g[j]
        })
    };
    let p = eval.diff.len();
    let moved = eval.diff.dot(&(dw.rows(0, p) - dx));
    let dlambda = (res.ball - 2.0 * state.lambda * moved) / eval.ball_slack;
    (dz, dlambda)
}

/// `-lambda_i g_i - z_i^T G_i`.
pub fn surrogate_gap_local(eval: &LocalEval, state: &AgentState) -> f64 {
    -state.lambda * eval.ball_slack - state.z.dot(&eval.g)
}

/// `delta = mu * m_total / eta_hat`.
pub fn update_perturbation(eta_hat: f64, m_total: usize, mu: f64) -> Result<f64> {
    if !(eta_hat > 0.0) || !eta_hat.is_finite() {
        return Err(Error::InvalidState(format!(
            "surrogate duality gap must be positive, got {eta_hat:e}"
        )));
    }
    Ok(mu * m_total as f64 / eta_hat)
}

pub fn check_termination(
    r_primal_norm: f64,
    r_dual_norm: f64,
    eta_hat: f64,
    eps_feas: f64,
    eps_d: f64,
) -> bool {
    r_primal_norm <= eps_feas && r_dual_norm <= eps_feas && eta_hat <= eps_d
}

// ---------------------------------------------------------------------------
// initialization

/// Strictly feasible start for one agent: `x_i = x0`, family-provided `t_i`,
/// unit inequality and ball duals, zero equality duals.
/// Starting value of the ball multipliers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `lambda_i = 1`, like every other dual.
    Unit,
    /// `lambda_i = 1 / eps`. At the relaxed optimum `2 lambda_i ||x_i - x|| = ||grad F_i||`
    /// with `||x_i - x||` close to `eps`, so this is the right order for
    /// unit-size gradients. With unit multipliers and no other inequalities
    /// the start is badly off-center for small `eps` and the iterates stall
    /// against the ball boundary.
    #[default]
    BallScaled,
}

impl InitStrategy {
    pub fn ball_multiplier(self, epsilon: f64) -> f64 {
        match self {
            InitStrategy::Unit => 1.0,
            InitStrategy::BallScaled => 1.0 / epsilon,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InitStrategy::Unit => "unit",
            InitStrategy::BallScaled => "ball-scaled",
        }
    }
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(InitStrategy::Unit),
            "ball-scaled" => Ok(InitStrategy::BallScaled),
            other => Err(Error::InvalidConfig(format!(
                "unknown initialization `{other}`"
            ))),
        }
    }
}

/// `x_i = x0`, `t_i` from the family, `z_i = 1`, `v_i = 0`, `lambda_i = lambda0`.
pub fn initial_agent_state(
    sp: &LocalSubproblem,
    x0: &DVector<f64>,
    agent: usize,
    lambda0: f64,
) -> Result<AgentState> {
    let unsupported = || Error::UnsupportedInitialization {
        agent,
        family: sp.family().to_string(),
    };
    let t = sp.model().feasible_extension(x0).ok_or_else(unsupported)?;
    let w = stack(&[x0, &t]);
    if !sp.model().constraints(&w).iter().all(|g| *g < 0.0) {
        return Err(unsupported());
    }
    Ok(AgentState {
        x: x0.clone(),
        t,
        z: DVector::from_element(sp.m(), 1.0),
        v: DVector::zeros(sp.u()),
        lambda: lambda0,
    })
}

pub fn initialize(
    prob: &RelaxedProblem,
    x0: Option<&DVector<f64>>,
    mu: f64,
    init: InitStrategy,
) -> Result<Iterate> {
    let lambda0 = init.ball_multiplier(prob.epsilon());
    let x = x0.cloned().unwrap_or_else(|| DVector::zeros(prob.p()));
    if x.len() != prob.p() {
        return Err(Error::dim(format!(
            "start point has length {}, expected {}",
            x.len(),
            prob.p()
        )));
    }
    let agents = prob
        .subproblems()
        .iter()
        .enumerate()
        .map(|(i, sp)| initial_agent_state(sp, &x, i, lambda0))
        .collect::<Result<Vec<_>>>()?;
    let mut it = Iterate {
        x,
        agents,
        delta: 1.0,
        k: 0,
    };
    let eta = surrogate_gap(prob, &it)?;
    it.delta = update_perturbation(eta, prob.total_ineq_count(), mu)?;
    Ok(it)
}

pub fn surrogate_gap(prob: &RelaxedProblem, it: &Iterate) -> Result<f64> {
    let mut eta = 0.0;
    for (i, (sp, s)) in prob.subproblems().iter().zip(&it.agents).enumerate() {
        let eval = evaluate_local(sp, &it.x, s, prob.epsilon(), i)?;
        eta += surrogate_gap_local(&eval, s);
    }
    Ok(eta)
}

// ---------------------------------------------------------------------------
// residual norms and line search

/// One agent's share of the stacked residual norms.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualContribution {
    pub local_sq: f64,
    pub dual_local_sq: f64,
    pub dual_global: DVector<f64>,
    pub primal_sq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualSummary {
    /// Norm of the full stacked residual (dual, centrality, ball, primal),
    /// with the global dual blocks summed over agents.
    pub full: f64,
    pub dual: f64,
    pub primal: f64,
}

impl ResidualSummary {
    pub fn from_sums(
        local_sq: f64,
        dual_local_sq: f64,
        dual_global: &DVector<f64>,
        primal_sq: f64,
    ) -> Self {
        let gsq = dual_global.norm_squared();
        Self {
            full: (local_sq + gsq).sqrt(),
            dual: (dual_local_sq + gsq).sqrt(),
            primal: primal_sq.sqrt(),
        }
    }
}

/// Combines contributions in agent order. `dual_global` is summed into one
/// `p`-vector before its norm is taken.
pub fn combine_residuals(parts: &[ResidualContribution]) -> ResidualSummary {
    let p = parts.first().map_or(0, |c| c.dual_global.len());
    let mut local = 0.0;
    let mut dual_local = 0.0;
    let mut primal = 0.0;
    let mut global = DVector::zeros(p);
    for c in parts {
        local += c.local_sq;
        dual_local += c.dual_local_sq;
        primal += c.primal_sq;
        global += &c.dual_global;
    }
    ResidualSummary::from_sums(local, dual_local, &global, primal)
}

pub fn residual_summary(prob: &RelaxedProblem, it: &Iterate) -> Result<ResidualSummary> {
    let mut parts = Vec::with_capacity(it.agents.len());
    for (i, (sp, s)) in prob.subproblems().iter().zip(&it.agents).enumerate() {
        let eval = evaluate_local(sp, &it.x, s, prob.epsilon(), i)?;
        parts.push(eval_residuals(&eval, sp, s, it.delta).contribution());
    }
    Ok(combine_residuals(&parts))
}

/// `min(-z_j / dz_j, -lambda / dlambda)` over decreasing components, or
/// infinity when nothing decreases.
pub fn dual_ratio(state: &AgentState, dir: &AgentDirection) -> f64 {
    let mut ratio = f64::INFINITY;
    for (z, dz) in state.z.iter().zip(dir.dz.iter()) {
        if *dz < 0.0 {
            ratio = ratio.min(-z / dz);
        }
    }
    if dir.dlambda < 0.0 {
        ratio = ratio.min(-state.lambda / dir.dlambda);
    }
    ratio
}

/// Largest admissible step given the smallest dual ratio over all agents.
pub fn step_cap(min_ratio: f64) -> f64 {
    1.0_f64.min(FRACTION_TO_BOUNDARY * min_ratio)
}

/// Trial-point evaluations a backtracking search needs.
pub trait StepProbe {
    /// Strict primal feasibility of every agent at step `alpha`.
    fn feasible(&mut self, alpha: f64) -> Result<bool>;
    /// Stacked residual norm at step `alpha` (same perturbation parameter).
    fn residual_norm(&mut self, alpha: f64) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub alpha_max: f64,
    /// Number of step sizes tried.
    pub trials: usize,
    pub residual_checks: usize,
    pub residual_before: f64,
    pub residual_after: f64,
}

/// Shrinks `alpha` from `alpha_max` by `beta` until the trial point is
/// strictly feasible and `||r|| <= (1 - alpha_ls * alpha) ||r_0||`.
pub fn backtrack<P: StepProbe>(
    probe: &mut P,
    alpha_max: f64,
    residual_before: f64,
    beta: f64,
    alpha_ls: f64,
) -> Result<LineSearchOutcome> {
    let mut alpha = alpha_max;
    let mut trials = 0;
    let mut residual_checks = 0;
    loop {
        if !(alpha >= MIN_STEP) {
            return Err(Error::LineSearchFailure {
                alpha,
                residual: residual_before,
            });
        }
        trials += 1;
        if probe.feasible(alpha)? {
            residual_checks += 1;
            let r = probe.residual_norm(alpha)?;
            if r <= (1.0 - alpha_ls * alpha) * residual_before {
                return Ok(LineSearchOutcome {
                    alpha,
                    alpha_max,
                    trials,
                    residual_checks,
                    residual_before,
                    residual_after: r,
                });
            }
        }
        alpha *= beta;
    }
}

struct CentralProbe<'a> {
    prob: &'a RelaxedProblem,
    it: &'a Iterate,
    dir: &'a Direction,
}

impl StepProbe for CentralProbe<'_> {
    fn feasible(&mut self, alpha: f64) -> Result<bool> {
        let x = &self.it.x + &self.dir.dx * alpha;
        Ok(self
            .prob
            .subproblems()
            .iter()
            .zip(&self.it.agents)
            .zip(&self.dir.agents)
            .all(|((sp, s), d)| {
                strictly_feasible(sp, &x, &s.stepped(d, alpha), self.prob.epsilon())
            }))
    }

    fn residual_norm(&mut self, alpha: f64) -> Result<f64> {
        Ok(residual_summary(self.prob, &self.it.stepped(self.dir, alpha))?.full)
    }
}

/// Dual cap, feasibility backtracking and sufficient residual decrease,
/// evaluated centrally.
pub fn line_search(
    prob: &RelaxedProblem,
    it: &Iterate,
    dir: &Direction,
    beta: f64,
    alpha_ls: f64,
) -> Result<LineSearchOutcome> {
    let ratio = it
        .agents
        .iter()
        .zip(&dir.agents)
        .map(|(s, d)| dual_ratio(s, d))
        .fold(f64::INFINITY, f64::min);
    let before = residual_summary(prob, it)?.full;
    backtrack(
        &mut CentralProbe { prob, it, dir },
        step_cap(ratio),
        before,
        beta,
        alpha_ls,
    )
}
