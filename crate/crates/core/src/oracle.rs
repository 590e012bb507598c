//! Centralized reference computations.
//!
//! The Newton system here is built straight from the perturbed KKT residual
//! over all primal and dual variables, and reduced by generic block
//! elimination. It shares model evaluations with the solver but none of its
//! closed-form elimination formulas.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::linalg::{stack, Factorization, SINGULAR_CONDITION};
use crate::model::{LocalSubproblem, RelaxedProblem};
use crate::msgpass::{Solution, Status, Trace, TraceRow};
use crate::pdipm::{
    check_termination, initialize, line_search, residual_summary, surrogate_gap,
    update_perturbation, AgentDirection, AgentState, Direction, Iterate,
};
use crate::reformulations::{
    HuberData, HuberEpigraph, LogisticModel, QuadraticModel, HUBER_FAMILY, LOGISTIC_FAMILY,
    QUADRATIC_FAMILY,
};

/// Per-agent slice of the unreduced Newton system. Local unknowns are ordered
/// `[w, v, z, lambda]`, followed by the `p` shared unknowns `x`.
#[derive(Clone, Debug)]
struct AgentKkt {
    n: usize,
    u: usize,
    m: usize,
    /// Jacobian of the local residual rows with respect to `[local; x]`.
    local_rows: DMatrix<f64>,
    /// This agent's contribution to the `x` residual rows, same columns.
    global_rows: DMatrix<f64>,
    local_res: DVector<f64>,
    global_res: DVector<f64>,
}

impl AgentKkt {
    fn local_len(&self) -> usize {
        self.n + self.u + self.m + 1
    }

    fn primal_len(&self) -> usize {
        self.n + self.u
    }
}

fn check_agent_feasible(g: &DVector<f64>, slack: f64, s: &AgentState, agent: usize) -> Result<()> {
    let bad = |detail: String| Err(Error::FeasibilityViolation { agent, detail });
    if let Some(v) = g.iter().find(|v| !(**v < 0.0)) {
        return bad(format!("G component {v:e}"));
    }
    if !(slack < 0.0) {
        return bad(format!("ball slack {slack:e}"));
    }
    if s.z.iter().any(|z| !(*z > 0.0)) || !(s.lambda > 0.0) {
        return bad("non-positive dual".into());
    }
    Ok(())
}

/// Residual of the perturbed KKT conditions for one agent:
/// stationarity in `w`, `A w - b`, `-z .* G - 1/delta`, `-lambda g - 1/delta`,
/// and the agent's term `lambda * d g / d x` of the shared stationarity.
fn agent_residual(
    sp: &LocalSubproblem,
    x: &DVector<f64>,
    s: &AgentState,
    delta: f64,
    epsilon: f64,
) -> (DVector<f64>, DVector<f64>) {
    let model = sp.model();
    let p = sp.p();
    let w = s.primal();
    let g = model.constraints(&w);
    let jac = model.constraint_jacobian(&w);
    let mut grad_w_ball = DVector::zeros(w.len());
    grad_w_ball.rows_mut(0, p).copy_from(&((&s.x - x) * 2.0));
    let ball = (&s.x - x).norm_squared() - epsilon * epsilon;

    let mut r_w = model.objective_gradient(&w) + &grad_w_ball * s.lambda;
    if sp.m() > 0 {
        r_w += jac.transpose() * &s.z;
    }
    if sp.u() > 0 {
        r_w += sp.eq_matrix().transpose() * &s.v;
    }
    let r_v = if sp.u() > 0 {
        sp.eq_matrix() * &w - sp.eq_rhs()
    } else {
        DVector::zeros(0)
    };
    let r_z = DVector::from_fn(g.len(), |j, _| -s.z[j] * g[j] - 1.0 / delta);
    let r_l = DVector::from_vec(vec![-s.lambda * ball - 1.0 / delta]);
    let r_x = (x - &s.x) * (2.0 * s.lambda);
    (stack(&[&r_w, &r_v, &r_z, &r_l]), r_x)
}

fn agent_kkt(
    sp: &LocalSubproblem,
    x: &DVector<f64>,
    s: &AgentState,
    delta: f64,
    epsilon: f64,
    agent: usize,
) -> Result<AgentKkt> {
    let model = sp.model();
    let (p, n, u, m) = (sp.p(), sp.n(), sp.u(), sp.m());
    let w = s.primal();
    let g = model.constraints(&w);
    let jac = model.constraint_jacobian(&w);
    let ball = (&s.x - x).norm_squared() - epsilon * epsilon;
    check_agent_feasible(&g, ball, s, agent)?;

    let len = n + u + m + 1;
    let (cw, cv, cz, cl, cx) = (0, n, n + u, n + u + m, len);
    let mut k = DMatrix::zeros(len, len + p);
    let mut kx = DMatrix::zeros(p, len + p);

    // d g / d w restricted to the x_i block, and d g / d x
    let dgw = (&s.x - x) * 2.0;
    let dgx = (x - &s.x) * 2.0;

    // stationarity rows in w
    let mut hww = model.objective_hessian(&w);
    if m > 0 {
        hww += model.weighted_constraint_hessian(&w, &s.z);
    }
    for a in 0..p {
        hww[(a, a)] += 2.0 * s.lambda;
    }
    k.view_mut((0, cw), (n, n)).copy_from(&hww);
    if u > 0 {
        k.view_mut((0, cv), (n, u))
            .copy_from(&sp.eq_matrix().transpose());
    }
    if m > 0 {
        k.view_mut((0, cz), (n, m)).copy_from(&jac.transpose());
    }
    for a in 0..p {
        k[(a, cl)] = dgw[a];
        k[(a, cx + a)] = -2.0 * s.lambda;
    }
    // equality rows
    if u > 0 {
        k.view_mut((n, cw), (u, n)).copy_from(sp.eq_matrix());
    }
    // centrality rows: -z_j G_j - 1/delta
    for j in 0..m {
        for c in 0..n {
            k[(n + u + j, cw + c)] = -s.z[j] * jac[(j, c)];
        }
        k[(n + u + j, cz + j)] = -g[j];
    }
    // ball centrality row: -lambda g - 1/delta
    for a in 0..p {
        k[(cl, cw + a)] = -s.lambda * dgw[a];
        k[(cl, cx + a)] = -s.lambda * dgx[a];
    }
    k[(cl, cl)] = -ball;
    // shared rows: 2 lambda (x - x_i)
    for a in 0..p {
        kx[(a, cw + a)] = -2.0 * s.lambda;
        kx[(a, cx + a)] = 2.0 * s.lambda;
        kx[(a, cl)] = dgx[a];
    }
    let (local_res, global_res) = agent_residual(sp, x, s, delta, epsilon);
    Ok(AgentKkt {
        n,
        u,
        m,
        local_rows: k,
        global_rows: kx,
        local_res,
        global_res,
    })
}

/// Full unreduced Newton system `K d = -r` over every variable.
#[derive(Clone, Debug)]
pub struct UnreducedSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Row range of each agent's `[w, v, z, lambda]` block.
    pub agent_ranges: Vec<Range<usize>>,
    pub x_range: Range<usize>,
}

pub fn kkt_residual(prob: &RelaxedProblem, it: &Iterate) -> DVector<f64> {
    let p = prob.p();
    let mut parts = Vec::new();
    let mut rx = DVector::zeros(p);
    for (sp, s) in prob.subproblems().iter().zip(&it.agents) {
        let (l, g) = agent_residual(sp, &it.x, s, it.delta, prob.epsilon());
        parts.push(l);
        rx += g;
    }
    parts.push(rx);
    let refs: Vec<&DVector<f64>> = parts.iter().collect();
    stack(&refs)
}

pub fn unreduced_system(prob: &RelaxedProblem, it: &Iterate) -> Result<UnreducedSystem> {
    let p = prob.p();
    let blocks = all_agent_kkt(prob, it)?;
    let total: usize = blocks.iter().map(|b| b.local_len()).sum::<usize>() + p;
    let xo = total - p;
    let mut matrix = DMatrix::zeros(total, total);
    let mut rhs = DVector::zeros(total);
    let mut ranges = Vec::new();
    let mut at = 0;
    for b in &blocks {
        let l = b.local_len();
        matrix
            .view_mut((at, at), (l, l))
            .copy_from(&b.local_rows.columns(0, l));
        matrix
            .view_mut((at, xo), (l, p))
            .copy_from(&b.local_rows.columns(l, p));
        let xa = matrix.view((xo, at), (p, l)) + b.global_rows.columns(0, l);
        matrix.view_mut((xo, at), (p, l)).copy_from(&xa);
        let xx = matrix.view((xo, xo), (p, p)) + b.global_rows.columns(l, p);
        matrix.view_mut((xo, xo), (p, p)).copy_from(&xx);
        rhs.rows_mut(at, l).copy_from(&(-&b.local_res));
        let rx = rhs.rows(xo, p) - &b.global_res;
        rhs.rows_mut(xo, p).copy_from(&rx);
        ranges.push(at..at + l);
        at += l;
    }
    Ok(UnreducedSystem {
        matrix,
        rhs,
        agent_ranges: ranges,
        x_range: xo..total,
    })
}

fn all_agent_kkt(prob: &RelaxedProblem, it: &Iterate) -> Result<Vec<AgentKkt>> {
    if it.agents.len() != prob.agent_count() || it.x.len() != prob.p() {
        return Err(Error::dim("iterate does not match problem"));
    }
    prob.subproblems()
        .iter()
        .zip(&it.agents)
        .enumerate()
        .map(|(i, (sp, s))| agent_kkt(sp, &it.x, s, it.delta, prob.epsilon(), i))
        .collect()
}

/// Newton system over `(w_i, v_i)` for all agents and `x`, after eliminating
/// the inequality and ball duals. Arrow-shaped: agent blocks couple only
/// through the trailing `x` block.
#[derive(Clone, Debug)]
pub struct DenseSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `(w_i, v_i)` row ranges per agent.
    pub blocks: Vec<(Range<usize>, Range<usize>)>,
    pub x_range: Range<usize>,
}

/// Per agent: `K_CC^{-1}`, `K_CB`, `K_CX`, `r_C`.
type Recovery = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>);

/// Eliminated system plus what is needed to recover the duals.
struct Eliminated {
    system: DenseSystem,
    recover: Vec<Recovery>,
}

fn eliminate(prob: &RelaxedProblem, blocks: &[AgentKkt]) -> Result<Eliminated> {
    let p = prob.p();
    let size: usize = blocks.iter().map(|b| b.primal_len()).sum::<usize>() + p;
    let xo = size - p;
    let mut matrix = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    let mut ranges = Vec::new();
    let mut recover = Vec::new();
    let mut at = 0;
    for b in blocks {
        let nb = b.primal_len();
        let nc = b.m + 1;
        let l = b.local_len();
        let k = &b.local_rows;
        let k_bb = k.view((0, 0), (nb, nb));
        let k_bc = k.view((0, nb), (nb, nc));
        let k_bx = k.view((0, l), (nb, p));
        let k_cb = k.view((nb, 0), (nc, nb)).into_owned();
        let k_cc = k.view((nb, nb), (nc, nc)).into_owned();
        let k_cx = k.view((nb, l), (nc, p)).into_owned();
        let gx = &b.global_rows;
        let k_xb = gx.view((0, 0), (p, nb));
        let k_xc = gx.view((0, nb), (p, nc));
        let k_xx = gx.view((0, l), (p, p));
        let r_b = b.local_res.rows(0, nb);
        let r_c = b.local_res.rows(nb, nc).into_owned();

        let k_cc_inv = k_cc.try_inverse().ok_or(Error::SingularSystem)?;
        let bc_inv = k_bc * &k_cc_inv;
        let xc_inv = k_xc * &k_cc_inv;

        let s_bb = k_bb - &bc_inv * &k_cb;
        let s_bx = k_bx - &bc_inv * &k_cx;
        let s_xb = k_xb - &xc_inv * &k_cb;
        let s_xx = k_xx - &xc_inv * &k_cx;
        let f_b = -r_b + &bc_inv * &r_c;
        let f_x = -&b.global_res + &xc_inv * &r_c;

        matrix.view_mut((at, at), (nb, nb)).copy_from(&s_bb);
        matrix.view_mut((at, xo), (nb, p)).copy_from(&s_bx);
        matrix.view_mut((xo, at), (p, nb)).copy_from(&s_xb);
        let xx = matrix.view((xo, xo), (p, p)) + s_xx;
        matrix.view_mut((xo, xo), (p, p)).copy_from(&xx);
        rhs.rows_mut(at, nb).copy_from(&f_b);
        let fx = rhs.rows(xo, p) + f_x;
        rhs.rows_mut(xo, p).copy_from(&fx);

        ranges.push((at..at + b.n, at + b.n..at + nb));
        recover.push((k_cc_inv, k_cb, k_cx, r_c));
        at += nb;
    }
    Ok(Eliminated {
        system: DenseSystem {
            matrix,
            rhs,
            blocks: ranges,
            x_range: xo..size,
        },
        recover,
    })
}

/// The reduced arrow system at `it`.
pub fn dense_system(prob: &RelaxedProblem, it: &Iterate) -> Result<DenseSystem> {
    Ok(eliminate(prob, &all_agent_kkt(prob, it)?)?.system)
}

/// Newton direction from one dense factorization of the reduced system.
pub fn dense_kkt_direction(prob: &RelaxedProblem, it: &Iterate) -> Result<Direction> {
    let blocks = all_agent_kkt(prob, it)?;
    let elim = eliminate(prob, &blocks)?;
    let sys = &elim.system;
    let f = Factorization::new(&sys.matrix).ok_or(Error::SingularSystem)?;
    if f.condition() > SINGULAR_CONDITION {
        return Err(Error::SingularSystem);
    }
    let sol = f.solve_vec(&sys.rhs);
    let p = prob.p();
    let dx = sol.rows(sys.x_range.start, p).into_owned();
    let mut agents = Vec::with_capacity(blocks.len());
    for ((b, (wr, vr)), (cc_inv, k_cb, k_cx, r_c)) in
        blocks.iter().zip(&sys.blocks).zip(&elim.recover)
    {
        let dw = sol.rows(wr.start, wr.len()).into_owned();
        let dv = sol.rows(vr.start, vr.len()).into_owned();
        let db = stack(&[&dw, &dv]);
        let dc = cc_inv * (-(r_c + k_cb * &db + k_cx * &dx));
        agents.push(AgentDirection {
            dx: dw.rows(0, p).into_owned(),
            dt: dw.rows(p, b.n - p).into_owned(),
            dv,
            dz: dc.rows(0, b.m).into_owned(),
            dlambda: dc[b.m],
        });
    }
    Ok(Direction { dx, agents })
}

/// Solves the unreduced system directly; only practical for small instances.
pub fn unreduced_direction(prob: &RelaxedProblem, it: &Iterate) -> Result<Direction> {
    let sys = unreduced_system(prob, it)?;
    let f = Factorization::new(&sys.matrix).ok_or(Error::SingularSystem)?;
    let sol = f.solve_vec(&sys.rhs);
    let p = prob.p();
    let agents = prob
        .subproblems()
        .iter()
        .zip(&sys.agent_ranges)
        .map(|(sp, r)| {
            let s = sol.rows(r.start, r.len());
            let (n, u, m) = (sp.n(), sp.u(), sp.m());
            AgentDirection {
                dx: s.rows(0, p).into_owned(),
                dt: s.rows(p, n - p).into_owned(),
                dv: s.rows(n, u).into_owned(),
                dz: s.rows(n + u, m).into_owned(),
                dlambda: s[n + u + m],
            }
        })
        .collect();
    Ok(Direction {
        dx: sol.rows(sys.x_range.start, p).into_owned(),
        agents,
    })
}

/// Sequential interior-point solve using the dense direction.
pub fn centralized_pdipm_solve(
    prob: &RelaxedProblem,
    config: &SolverConfig,
) -> Result<(Solution, Trace)> {
    config.validate()?;
    let m_total = prob.total_ineq_count();
    let mut it = initialize(prob, None, config.mu, config.init)?;
    let mut eta = surrogate_gap(prob, &it)?;
    let mut res = residual_summary(prob, &it)?;
    let mut trace = Trace::default();
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    for k in 1..=config.max_iter {
        if check_termination(res.primal, res.dual, eta, config.eps_feas, config.eps_d) {
            status = Status::Converged;
            break;
        }
        let step = dense_kkt_direction(prob, &it)
            .and_then(|d| Ok((line_search(prob, &it, &d, config.beta, config.alpha_ls)?, d)));
        let (ls, dir) = match step {
            Ok(v) => v,
            Err(Error::SingularSystem) => {
                status = Status::SingularSystem;
                break;
            }
            Err(Error::LineSearchFailure { .. }) => {
                status = Status::LineSearchFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        it = it.stepped(&dir, ls.alpha);
        it.k = k;
        eta = surrogate_gap(prob, &it)?;
        it.delta = update_perturbation(eta, m_total, config.mu)?;
        res = residual_summary(prob, &it)?;
        iterations = k;
        let (max_constraint, min_dual) = margins(prob, &it);
        trace.rows.push(TraceRow {
            k,
            eta_hat: eta,
            r_dual_norm: res.dual,
            r_primal_norm: res.primal,
            alpha: ls.alpha,
            alpha_max: ls.alpha_max,
            delta: it.delta,
            residual_before: ls.residual_before,
            residual_after: ls.residual_after,
            trials: ls.trials,
            vector_rounds: 0,
            scalar_rounds: 0,
            wall_time: 0.0,
            x: it.x.clone(),
            max_constraint,
            min_dual,
        });
    }
    if status == Status::MaxIter
        && config.max_iter > 0
        && check_termination(res.primal, res.dual, eta, config.eps_feas, config.eps_d)
    {
        status = Status::Converged;
    }
    let reported_x = vec![it.x.clone(); it.agents.len()];
    Ok((
        Solution {
            status,
            x: it.x,
            agents: it.agents,
            reported_x,
            iterations,
            eta_hat: eta,
            r_dual_norm: res.dual,
            r_primal_norm: res.primal,
        },
        trace,
    ))
}

fn margins(prob: &RelaxedProblem, it: &Iterate) -> (f64, f64) {
    prob.subproblems().iter().zip(&it.agents).fold(
        (f64::NEG_INFINITY, f64::INFINITY),
        |(c, d), (sp, s)| {
            let (mc, md) = crate::pdipm::feasibility_margins(sp, &it.x, s, prob.epsilon());
            (c.max(mc), d.min(md))
        },
    )
}

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 500;

/// Minimizer of the unrelaxed sum `sum_i F_i(x)`.
///
/// Quadratic: closed form. Logistic: damped Newton. Huber: all agents' rows
/// stacked, then semismooth Newton on the Huber loss itself.
pub fn unrelaxed_optimum(prob: &RelaxedProblem) -> Result<DVector<f64>> {
    let sps = prob.subproblems();
    let family = sps[0].family();
    if sps.iter().any(|sp| sp.family() != family) {
        return Err(Error::OracleFailure("mixed problem families".into()));
    }
    if sps.iter().any(|sp| sp.u() > 0) {
        return Err(Error::OracleFailure(
            "local equality constraints are not supported by the oracle".into(),
        ));
    }
    let p = prob.p();
    match family {
        QUADRATIC_FAMILY => {
            let mut h = DMatrix::zeros(p, p);
            let mut q = DVector::zeros(p);
            for sp in sps {
                let m = downcast::<QuadraticModel>(sp)?;
                h += &m.hessian;
                q += &m.linear;
            }
            let f = Factorization::new(&h)
                .ok_or_else(|| Error::OracleFailure("sum of P_i is singular".into()))?;
            Ok(-f.solve_vec(&q))
        }
        LOGISTIC_FAMILY => {
            let models = sps
                .iter()
                .map(downcast::<LogisticModel>)
                .collect::<Result<Vec<_>>>()?;
            let value = |x: &DVector<f64>| models.iter().map(|m| m.data().loss(x)).sum::<f64>();
            let grad = |x: &DVector<f64>| {
                models
                    .iter()
                    .fold(DVector::zeros(p), |acc, m| acc + m.data().loss_gradient(x))
            };
            let hess = |x: &DVector<f64>| {
                models.iter().fold(DMatrix::zeros(p, p), |acc, m| {
                    acc + m.data().loss_hessian(x)
                })
            };
            damped_newton(value, grad, hess, DVector::zeros(p))
        }
        HUBER_FAMILY => {
            let datas = sps
                .iter()
                .map(|sp| downcast::<HuberEpigraph>(sp).map(|m| m.data()))
                .collect::<Result<Vec<_>>>()?;
            let rows: usize = datas.iter().map(|d| d.rows()).sum();
            let threshold = datas[0].threshold;
            let mut a = DMatrix::zeros(rows, p);
            let mut y = DVector::zeros(rows);
            let mut at = 0;
            for d in &datas {
                if d.threshold != threshold {
                    return Err(Error::OracleFailure(
                        "agents use different Huber thresholds".into(),
                    ));
                }
                a.view_mut((at, 0), (d.rows(), p)).copy_from(&d.a);
                y.rows_mut(at, d.rows()).copy_from(&d.y);
                at += d.rows();
            }
            let data = HuberData::new(a, y, threshold)?;
            // generalized Hessian 2 A^T D A, D marking the quadratic branch
            let hess = |x: &DVector<f64>| {
                let r = &data.a * x - &data.y;
                let mut h = DMatrix::identity(p, p) * 1e-12;
                for (j, rj) in r.iter().enumerate() {
                    if rj.abs() < threshold {
                        let row = data.a.row(j).transpose();
                        h += &row * row.transpose() * 2.0;
                    }
                }
                h
            };
            // least-squares start puts most rows on the quadratic branch
            let gram = data.a.transpose() * &data.a;
            let x0 = Factorization::new(&gram)
                .map(|f| f.solve_vec(&(data.a.transpose() * &data.y)))
                .unwrap_or_else(|| DVector::zeros(p));
            damped_newton(|x| data.loss(x), |x| data.loss_gradient(x), hess, x0)
        }
        other => Err(Error::OracleFailure(format!(
            "no reference solver for family `{other}`"
        ))),
    }
}

/// Original (unreformulated) cost `F_i(x)` of one agent.
pub fn agent_value(sp: &LocalSubproblem, x: &DVector<f64>) -> Result<f64> {
    match sp.family() {
        QUADRATIC_FAMILY => Ok(downcast::<QuadraticModel>(sp)?.value(x)),
        LOGISTIC_FAMILY => Ok(downcast::<LogisticModel>(sp)?.data().loss(x)),
        HUBER_FAMILY => Ok(downcast::<HuberEpigraph>(sp)?.data().loss(x)),
        other => Err(Error::OracleFailure(format!(
            "no original cost for family `{other}`"
        ))),
    }
}

pub fn agent_gradient(sp: &LocalSubproblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    match sp.family() {
        QUADRATIC_FAMILY => Ok(downcast::<QuadraticModel>(sp)?.gradient(x)),
        LOGISTIC_FAMILY => Ok(downcast::<LogisticModel>(sp)?.data().loss_gradient(x)),
        HUBER_FAMILY => Ok(downcast::<HuberEpigraph>(sp)?.data().loss_gradient(x)),
        other => Err(Error::OracleFailure(format!(
            "no original cost for family `{other}`"
        ))),
    }
}

/// `sum_i F_i(x)`.
pub fn unrelaxed_value(prob: &RelaxedProblem, x: &DVector<f64>) -> Result<f64> {
    prob.subproblems().iter().map(|sp| agent_value(sp, x)).sum()
}

pub fn unrelaxed_gradient(prob: &RelaxedProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    prob.subproblems()
        .iter()
        .try_fold(DVector::zeros(prob.p()), |acc, sp| {
            Ok(acc + agent_gradient(sp, x)?)
        })
}

fn downcast<T: 'static>(sp: &LocalSubproblem) -> Result<&T> {
    sp.model().as_any().downcast_ref::<T>().ok_or_else(|| {
        Error::OracleFailure(format!(
            "family `{}` has an unexpected model type",
            sp.family()
        ))
    })
}

/// Newton's method with Armijo backtracking on a smooth strictly convex function.
pub fn damped_newton(
    value: impl Fn(&DVector<f64>) -> f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    hess: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    mut x: DVector<f64>,
) -> Result<DVector<f64>> {
    for _ in 0..NEWTON_MAX_ITER {
        let g = grad(&x);
        if g.norm() <= NEWTON_TOLERANCE {
            return Ok(x);
        }
        let h = hess(&x);
        let step = h
            .cholesky()
            .map(|c| -c.solve(&g))
            .ok_or_else(|| Error::OracleFailure("Hessian is not positive definite".into()))?;
        let f0 = value(&x);
        let slope = g.dot(&step);
        let mut t = 1.0;
        while value(&(&x + &step * t)) > f0 + 0.25 * t * slope && t > 1e-12 {
            t *= 0.5;
        }
        let next = &x + &step * t;
        if next == x {
            // no representable progress; accept if the gradient is already tiny
            return if g.norm() <= 1e3 * NEWTON_TOLERANCE {
                Ok(x)
            } else {
                Err(Error::OracleFailure(format!(
                    "Newton stalled with gradient norm {:e}",
                    g.norm()
                )))
            };
        }
        x = next;
    }
    Err(Error::OracleFailure(format!(
        "Newton did not converge in {NEWTON_MAX_ITER} iterations"
    )))
}
