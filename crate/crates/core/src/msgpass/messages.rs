use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdipm::AgentState;

/// Quadratic model of one agent's subproblem in `dx`, sent to the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpwardMessage {
    pub agent: usize,
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownwardMessage {
    pub iteration: u64,
    pub dx: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReduceMessage {
    SumScalar(f64),
    SumVector(DVector<f64>),
    MinScalar(f64),
    MaxScalar(f64),
    FlagAnd(bool),
}

impl ReduceMessage {
    fn tag(&self) -> &'static str {
        match self {
            ReduceMessage::SumScalar(_) => "sum-scalar",
            ReduceMessage::SumVector(_) => "sum-vector",
            ReduceMessage::MinScalar(_) => "min-scalar",
            ReduceMessage::MaxScalar(_) => "max-scalar",
            ReduceMessage::FlagAnd(_) => "flag-and",
        }
    }

    pub fn scalar(&self) -> Result<f64> {
        match self {
            ReduceMessage::SumScalar(v)
            | ReduceMessage::MinScalar(v)
            | ReduceMessage::MaxScalar(v) => Ok(*v),
            other => Err(Error::Protocol(format!(
                "expected a scalar reduction, got {}",
                other.tag()
            ))),
        }
    }

    pub fn vector(&self) -> Result<&DVector<f64>> {
        match self {
            ReduceMessage::SumVector(v) => Ok(v),
            other => Err(Error::Protocol(format!(
                "expected a vector reduction, got {}",
                other.tag()
            ))),
        }
    }

    pub fn flag(&self) -> Result<bool> {
        match self {
            ReduceMessage::FlagAnd(v) => Ok(*v),
            other => Err(Error::Protocol(format!(
                "expected a flag reduction, got {}",
                other.tag()
            ))),
        }
    }
}

/// Combines per-agent contribution lists slot by slot. Contributions are
/// folded in the order given (agent index), starting from the identity of
/// each operation, so the result does not depend on arrival order.
pub fn reduce(contributions: &[Vec<ReduceMessage>]) -> Result<Vec<ReduceMessage>> {
    let first = contributions
        .first()
        .ok_or_else(|| Error::Protocol("reduction over zero agents".into()))?;
    let mut out: Vec<ReduceMessage> = first
        .iter()
        .map(|m| match m {
            ReduceMessage::SumScalar(_) => ReduceMessage::SumScalar(0.0),
            ReduceMessage::SumVector(v) => ReduceMessage::SumVector(DVector::zeros(v.len())),
            ReduceMessage::MinScalar(_) => ReduceMessage::MinScalar(f64::INFINITY),
            ReduceMessage::MaxScalar(_) => ReduceMessage::MaxScalar(f64::NEG_INFINITY),
            ReduceMessage::FlagAnd(_) => ReduceMessage::FlagAnd(true),
        })
        .collect();
    for (agent, list) in contributions.iter().enumerate() {
        if list.len() != out.len() {
            return Err(Error::Protocol(format!(
                "agent {agent} sent {} contributions, expected {}",
                list.len(),
                out.len()
            )));
        }
        for (acc, m) in out.iter_mut().zip(list) {
            match (acc, m) {
                (ReduceMessage::SumScalar(a), ReduceMessage::SumScalar(b)) => *a += b,
                (ReduceMessage::SumVector(a), ReduceMessage::SumVector(b))
                    if a.len() == b.len() =>
                {
                    *a += b
                }
                (ReduceMessage::MinScalar(a), ReduceMessage::MinScalar(b)) => *a = a.min(*b),
                (ReduceMessage::MaxScalar(a), ReduceMessage::MaxScalar(b)) => *a = a.max(*b),
                (ReduceMessage::FlagAnd(a), ReduceMessage::FlagAnd(b)) => *a = *a && *b,
                (acc, m) => {
                    return Err(Error::Protocol(format!(
                        "agent {agent} sent {} where {} was expected",
                        m.tag(),
                        acc.tag()
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// Root-to-leaf commands. Every command is broadcast unchanged to all leaves.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Init {
        x0: DVector<f64>,
        lambda0: f64,
    },
    Perturbation {
        delta: f64,
    },
    ComputeUpward {
        iteration: u64,
    },
    Direction(DownwardMessage),
    TrialFeasibility {
        iteration: u64,
        alpha: f64,
    },
    TrialResidual {
        iteration: u64,
        alpha: f64,
    },
    Accept {
        iteration: u64,
        alpha: f64,
        x: DVector<f64>,
    },
    Finish,
    Shutdown,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Init { .. } => "init",
            Command::Perturbation { .. } => "perturbation",
            Command::ComputeUpward { .. } => "compute-upward",
            Command::Direction(_) => "direction",
            Command::TrialFeasibility { .. } => "trial-feasibility",
            Command::TrialResidual { .. } => "trial-residual",
            Command::Accept { .. } => "accept",
            Command::Finish => "finish",
            Command::Shutdown => "shutdown",
        }
    }

    /// Rounds that carry a `p`-dimensional direction or quadratic model.
    pub fn is_vector_round(&self) -> bool {
        matches!(self, Command::ComputeUpward { .. } | Command::Direction(_))
    }

    pub fn wire_records(&self, round: u64) -> Vec<WireRecord> {
        let kind = self.name();
        match self {
            Command::Init { x0, lambda0 } => {
                vec![
                    WireRecord::vector(None, round, kind, x0),
                    WireRecord::scalar(None, round, "init-lambda", *lambda0),
                ]
            }
            Command::Perturbation { delta } => vec![WireRecord::scalar(None, round, kind, *delta)],
            Command::ComputeUpward { .. } | Command::Finish | Command::Shutdown => {
                vec![WireRecord::empty(None, round, kind)]
            }
            Command::Direction(m) => vec![WireRecord::vector(None, round, kind, &m.dx)],
            Command::TrialFeasibility { alpha, .. } | Command::TrialResidual { alpha, .. } => {
                vec![WireRecord::scalar(None, round, kind, *alpha)]
            }
            Command::Accept { alpha, x, .. } => {
                vec![
                    WireRecord::scalar(None, round, kind, *alpha),
                    WireRecord::vector(None, round, kind, x),
                ]
            }
        }
    }
}

#[derive(Debug)]
pub enum ReplyBody {
    Upward(UpwardMessage),
    Reduce(Vec<ReduceMessage>),
    /// Final local state and the agent's copy of the broadcast `x`.
    Final {
        x: DVector<f64>,
        state: AgentState,
    },
    Failed(Error),
}

#[derive(Debug)]
pub struct Reply {
    pub agent: usize,
    pub round: u64,
    pub body: ReplyBody,
}

impl Reply {
    pub fn wire_records(&self) -> Vec<WireRecord> {
        let a = Some(self.agent);
        let r = self.round;
        match &self.body {
            ReplyBody::Upward(m) => vec![
                WireRecord::matrix(a, r, "upward-q-mat", &m.q_mat),
                WireRecord::vector(a, r, "upward-q-vec", &m.q_vec),
            ],
            ReplyBody::Reduce(list) => list
                .iter()
                .map(|m| match m {
                    ReduceMessage::SumVector(v) => WireRecord::vector(a, r, m.tag(), v),
                    ReduceMessage::FlagAnd(f) => {
                        WireRecord::scalar(a, r, m.tag(), if *f { 1.0 } else { 0.0 })
                    }
                    _ => WireRecord::scalar(a, r, m.tag(), m.scalar().unwrap_or(f64::NAN)),
                })
                .collect(),
            ReplyBody::Final { x, state } => vec![
                WireRecord::vector(a, r, "final-x", x),
                WireRecord::vector(a, r, "final-state", &state_vector(state)),
            ],
            ReplyBody::Failed(_) => vec![WireRecord::empty(a, r, "failed")],
        }
    }
}

fn state_vector(s: &AgentState) -> DVector<f64> {
    let mut v: Vec<f64> = Vec::new();
    v.extend(s.x.iter());
    v.extend(s.t.iter());
    v.extend(s.z.iter());
    v.extend(s.v.iter());
    v.push(s.lambda);
    DVector::from_vec(v)
}

/// Language-neutral serialized form of one message component: a dense
/// row-major float64 block tagged with sender, round and kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRecord {
    /// `None` for the root.
    pub agent: Option<usize>,
    pub round: u64,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub payload: Vec<f64>,
}

impl WireRecord {
    fn empty(agent: Option<usize>, round: u64, kind: &str) -> Self {
        Self {
            agent,
            round,
            kind: kind.into(),
            rows: 0,
            cols: 0,
            payload: vec![],
        }
    }

    fn scalar(agent: Option<usize>, round: u64, kind: &str, v: f64) -> Self {
        Self {
            agent,
            round,
            kind: kind.into(),
            rows: 1,
            cols: 1,
            payload: vec![v],
        }
    }

    fn vector(agent: Option<usize>, round: u64, kind: &str, v: &DVector<f64>) -> Self {
        Self {
            agent,
            round,
            kind: kind.into(),
            rows: v.len(),
            cols: 1,
            payload: v.iter().copied().collect(),
        }
    }

    fn matrix(agent: Option<usize>, round: u64, kind: &str, m: &DMatrix<f64>) -> Self {
        let payload = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self {
            agent,
            round,
            kind: kind.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            payload,
        }
    }

    /// Hash of the payload bit patterns.
    pub fn payload_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.rows, self.cols).hash(&mut h);
        for v in &self.payload {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.payload.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mins(values: &[f64]) -> Vec<Vec<ReduceMessage>> {
        values
            .iter()
            .map(|v| vec![ReduceMessage::MinScalar(*v)])
            .collect()
    }

    #[test]
    fn min_reduction() {
        assert_eq!(
            reduce(&mins(&[0.3, 1.0, 0.7])).unwrap()[0],
            ReduceMessage::MinScalar(0.3)
        );
    }

    #[test]
    fn flag_and_reduction() {
        let all = vec![vec![ReduceMessage::FlagAnd(true)]; 3];
        assert_eq!(reduce(&all).unwrap()[0], ReduceMessage::FlagAnd(true));
        let mut one_false = all.clone();
        one_false[1][0] = ReduceMessage::FlagAnd(false);
        assert_eq!(
            reduce(&one_false).unwrap()[0],
            ReduceMessage::FlagAnd(false)
        );
    }

    #[test]
    fn sums_fold_in_agent_order() {
        let vals = [1e16, 1.0, -1e16];
        let list: Vec<_> = vals
            .iter()
            .map(|v| vec![ReduceMessage::SumScalar(*v)])
            .collect();
        let expected = ((0.0 + 1e16) + 1.0) + -1e16;
        assert_eq!(
            reduce(&list).unwrap()[0],
            ReduceMessage::SumScalar(expected)
        );
    }

    #[test]
    fn mismatched_kinds_are_protocol_errors() {
        let list = vec![
            vec![ReduceMessage::SumScalar(1.0)],
            vec![ReduceMessage::FlagAnd(true)],
        ];
        assert!(matches!(reduce(&list), Err(Error::Protocol(_))));
    }

    #[test]
    fn matrix_records_are_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = WireRecord::matrix(Some(0), 1, "m", &m);
        assert_eq!(r.payload, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.to_bytes().len(), 32);
    }
}
