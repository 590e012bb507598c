//! Star-tree message passing: leaves own their subproblems, the root owns `x`.
//!
//! Per iteration the root runs two vector rounds (upward quadratic models,
//! downward `dx`) followed by scalar reductions for the step-size cap, the
//! backtracking trials, the gap and the residual norms.

mod agent;
mod dpda;
mod messages;
mod transport;

pub use agent::{
    downward_apply, leaf_direction, leaf_upward, root_direction, upward_message, LeafAgent,
    LeafCache,
};
pub use dpda::{
    leaf_agents, run_dpda, run_dpda_with, Solution, Status, Trace, TraceRow, TransportKind,
};
pub use messages::{
    reduce, Command, DownwardMessage, ReduceMessage, Reply, ReplyBody, UpwardMessage, WireRecord,
};
pub use transport::{
    LinkDirection, LoggedRecord, MessageLog, QueueTransport, RoundRecord, SequentialTransport,
    Transport, DEFAULT_TIMEOUT,
};

pub use crate::config::{solver_config, ConfigOverrides, SolverConfig};

use crate::error::Result;
use crate::model::RelaxedProblem;
use crate::pdipm::{Direction, Iterate, KktOptions};

/// Search direction at `it` computed with the same local and root steps the
/// leaves and root execute, without a transport.
pub fn distributed_direction(
    prob: &RelaxedProblem,
    it: &Iterate,
    options: KktOptions,
) -> Result<Direction> {
    let mut msgs = Vec::with_capacity(it.agents.len());
    let mut caches = Vec::with_capacity(it.agents.len());
    for (i, (sp, s)) in prob.subproblems().iter().zip(&it.agents).enumerate() {
        let (m, c) = leaf_upward(
            sp,
            &it.x,
            s,
            it.delta,
            prob.epsilon(),
            options,
            i,
            it.k as u64,
        )?;
        msgs.push(m);
        caches.push(c);
    }
    let dx = root_direction(&msgs)?;
    let agents = caches
        .iter()
        .zip(&it.agents)
        .map(|(c, s)| leaf_direction(c, s, it.k as u64, &dx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Direction { dx, agents })
}
