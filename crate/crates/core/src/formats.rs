//! On-disk formats: problem-spec JSON (read), trace CSV and summary JSON (write).
//!
//! Problem spec:
//!
//! ```json
//! {
//!   "p": 2,
//!   "epsilon": 0.001,
//!   "agents": [
//!     { "family": "huber-rls", "A": [[1.0, 0.5]], "b": [2.0], "params": { "M": 1.0 } },
//!     { "family": "logreg", "A": [[0.2, -1.0]], "b": [1.0], "params": { "rho": 1.0 } },
//!     { "family": "quadratic", "A": [[1.0, 0.0], [0.0, 2.0]], "b": [1.0, 1.0] }
//!   ]
//! }
//! ```
//!
//! `A` and `b` are the agent's data: regression rows and targets for
//! `huber-rls`, features and 0/1 labels for `logreg`. For `quadratic` they
//! define `F_i(x) = 0.5 ||A x - b||^2` unless `params` gives `P` and `q`
//! directly. An optional `"equality": { "A": ..., "b": ... }` adds local
//! equality constraints on `[x_i; t_i]`. Logistic `params.agents` defaults to
//! the number of agents in the file.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assemble_relaxed_problem, LocalSubproblem, RelaxedProblem};
use crate::msgpass::{Solution, SolverConfig, Trace};
use crate::reformulations::{
    huber_epigraph_subproblem, logistic_subproblem, quadratic_subproblem, HuberData, LogisticData,
    HUBER_FAMILY, LOGISTIC_FAMILY, QUADRATIC_FAMILY,
};

pub const TRACE_HEADER: &str = "iter,eta_hat,r_dual_norm,r_primal_norm,alpha,delta,rel_err";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub p: usize,
    pub epsilon: f64,
    pub agents: Vec<AgentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub family: String,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equality: Option<EqualitySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualitySpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::dim(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn param_f64(
    params: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    agent: usize,
) -> Result<Option<f64>> {
    match params.get(key) {
        None => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| {
            Error::invalid(format!("agent {agent}: parameter `{key}` must be a number"))
        }),
    }
}

fn param_matrix(
    params: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    agent: usize,
) -> Result<Option<DMatrix<f64>>> {
    match params.get(key) {
        None => Ok(None),
        Some(v) => {
            let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).map_err(|_| {
                Error::invalid(format!("agent {agent}: parameter `{key}` must be a matrix"))
            })?;
            Ok(Some(matrix_from_rows(&rows, key)?))
        }
    }
}

fn param_vector(
    params: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    agent: usize,
) -> Result<Option<DVector<f64>>> {
    match params.get(key) {
        None => Ok(None),
        Some(v) => {
            let vals: Vec<f64> = serde_json::from_value(v.clone()).map_err(|_| {
                Error::invalid(format!("agent {agent}: parameter `{key}` must be a vector"))
            })?;
            Ok(Some(DVector::from_vec(vals)))
        }
    }
}

impl AgentSpec {
    fn build(&self, agent: usize, agents: usize, p: usize) -> Result<LocalSubproblem> {
        let a = matrix_from_rows(&self.a, "A")?;
        let b = DVector::from_vec(self.b.clone());
        if a.nrows() > 0 && a.ncols() != p {
            return Err(Error::dim(format!(
                "agent {agent}: A has {} columns, expected p = {p}",
                a.ncols()
            )));
        }
        let sp = match self.family.as_str() {
            HUBER_FAMILY => {
                let m = param_f64(&self.params, "M", agent)?.unwrap_or(1.0);
                huber_epigraph_subproblem(HuberData::new(a, b, m)?)
            }
            LOGISTIC_FAMILY => {
                let rho = param_f64(&self.params, "rho", agent)?.unwrap_or(1.0);
                let n = param_f64(&self.params, "agents", agent)?.map_or(agents, |v| v as usize);
                logistic_subproblem(LogisticData::new(a, b, rho, n)?)
            }
            QUADRATIC_FAMILY => {
                let given_p = param_matrix(&self.params, "P", agent)?;
                let given_q = param_vector(&self.params, "q", agent)?;
                match (given_p, given_q) {
                    (Some(pm), Some(q)) => quadratic_subproblem(pm, q)?,
                    (None, None) => {
                        if a.nrows() != b.len() {
                            return Err(Error::dim(format!(
                                "agent {agent}: A and b lengths differ"
                            )));
                        }
                        quadratic_subproblem(a.transpose() * &a, -(a.transpose() * b))?
                    }
                    _ => {
                        return Err(Error::invalid(format!(
                            "agent {agent}: give both `P` and `q` or neither"
                        )))
                    }
                }
            }
            other => {
                return Err(Error::invalid(format!(
                    "agent {agent}: unknown family `{other}`"
                )))
            }
        };
        if sp.p() != p {
            return Err(Error::dim(format!(
                "agent {agent}: subproblem has p = {}, expected {p}",
                sp.p()
            )));
        }
        match &self.equality {
            None => Ok(sp),
            Some(eq) => sp.with_equalities(
                matrix_from_rows(&eq.a, "equality A")?,
                DVector::from_vec(eq.b.clone()),
            ),
        }
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<RelaxedProblem> {
        if self.agents.is_empty() {
            return Err(Error::invalid("problem spec has no agents"));
        }
        let n = self.agents.len();
        let sps = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.build(i, n, self.p))
            .collect::<Result<Vec<_>>>()?;
        assemble_relaxed_problem(sps, self.epsilon)
    }
}

pub fn read_problem_spec(text: &str) -> Result<ProblemSpec> {
    Ok(serde_json::from_str(text)?)
}

/// `||x - x*|| / ||x*||`.
pub fn relative_error(x: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (x - reference).norm() / reference.norm().max(f64::MIN_POSITIVE)
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:e}")
}

pub fn write_trace_csv(
    out: impl Write,
    trace: &Trace,
    reference: Option<&DVector<f64>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(TRACE_HEADER.split(','))
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in &trace.rows {
        let rel = reference
            .map(|r| fmt_f64(relative_error(&row.x, r)))
            .unwrap_or_default();
        w.write_record([
            row.k.to_string(),
            fmt_f64(row.eta_hat),
            fmt_f64(row.r_dual_norm),
            fmt_f64(row.r_primal_norm),
            fmt_f64(row.alpha),
            fmt_f64(row.delta),
            rel,
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_string(trace: &Trace, reference: Option<&DVector<f64>>) -> Result<String> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace, reference)?;
    String::from_utf8(buf).map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub status: String,
    pub iterations: usize,
    pub final_eta_hat: f64,
    pub final_r_dual_norm: f64,
    pub final_r_primal_norm: f64,
    pub x: Vec<f64>,
    pub agents_agree: bool,
    pub final_rel_err: Option<f64>,
    pub seed: Option<u64>,
    pub config: SolverConfig,
    pub epsilon: f64,
    pub transport: String,
    /// Experiment-specific facts (data source, condition number, `x_true`...).
    pub extra: serde_json::Map<String, serde_json::Value>,
    /// Informational only; excluded from determinism comparisons.
    pub wall_time_seconds: f64,
}

impl Summary {
    pub fn new(
        experiment: &str,
        sol: &Solution,
        trace: &Trace,
        config: &SolverConfig,
        epsilon: f64,
        transport: &str,
    ) -> Self {
        Self {
            experiment: experiment.into(),
            status: sol.status.as_str().into(),
            iterations: sol.iterations,
            final_eta_hat: sol.eta_hat,
            final_r_dual_norm: sol.r_dual_norm,
            final_r_primal_norm: sol.r_primal_norm,
            x: sol.x.iter().copied().collect(),
            agents_agree: sol.reported_x.iter().all(|x| x == &sol.x),
            final_rel_err: None,
            seed: config.seed,
            config: config.clone(),
            epsilon,
            transport: transport.into(),
            extra: serde_json::Map::new(),
            wall_time_seconds: trace.rows.last().map_or(0.0, |r| r.wall_time),
        }
    }
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)?)
}
