use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::agent::LeafAgent;
use super::messages::{Command, Reply};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LinkDirection {
    Down,
    Up,
}

/// Header of one wire record that crossed a root-leaf link.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoggedRecord {
    pub direction: LinkDirection,
    pub link: usize,
    pub round: u64,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub hash: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub command: &'static str,
    pub vector: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MessageLog {
    pub records: Vec<LoggedRecord>,
    pub rounds: Vec<RoundRecord>,
}

impl MessageLog {
    fn log_down(&mut self, cmd: &Command, round: u64, agents: usize) {
        self.rounds.push(RoundRecord {
            round,
            command: cmd.name(),
            vector: cmd.is_vector_round(),
        });
        let wire = cmd.wire_records(round);
        for link in 0..agents {
            for w in &wire {
                self.records.push(LoggedRecord {
                    direction: LinkDirection::Down,
                    link,
                    round,
                    kind: w.kind.clone(),
                    rows: w.rows,
                    cols: w.cols,
                    hash: w.payload_hash(),
                });
            }
        }
    }

    fn log_up(&mut self, reply: &Reply) {
        for w in reply.wire_records() {
            let hash = w.payload_hash();
            self.records.push(LoggedRecord {
                direction: LinkDirection::Up,
                link: reply.agent,
                round: reply.round,
                kind: w.kind,
                rows: w.rows,
                cols: w.cols,
                hash,
            });
        }
    }
}

/// Channel set between the root and the leaves of a star.
pub trait Transport {
    fn agent_count(&self) -> usize;

    /// Broadcasts `cmd` to every leaf and gathers one reply from each,
    /// ordered by agent index.
    fn exchange(&mut self, cmd: Command) -> Result<Vec<Reply>>;

    fn log(&self) -> &MessageLog;
}

fn check_replies(mut replies: Vec<Reply>, round: u64, agents: usize) -> Result<Vec<Reply>> {
    replies.sort_by_key(|r| r.agent);
    for (i, r) in replies.iter().enumerate() {
        if r.agent != i {
            return Err(Error::Protocol(format!(
                "round {round}: duplicate or missing reply near agent {i}"
            )));
        }
        if r.round != round {
            return Err(Error::Protocol(format!(
                "agent {i} answered round {} during round {round}",
                r.round
            )));
        }
    }
    if replies.len() != agents {
        return Err(Error::Protocol(format!(
            "round {round}: {} replies for {agents} agents",
            replies.len()
        )));
    }
    Ok(replies)
}

/// Runs every leaf on the calling thread, in agent order.
#[derive(Debug)]
pub struct SequentialTransport {
    agents: Vec<LeafAgent>,
    round: u64,
    log: MessageLog,
}

impl SequentialTransport {
    pub fn new(agents: Vec<LeafAgent>) -> Self {
        Self {
            agents,
            round: 0,
            log: MessageLog::default(),
        }
    }
}

impl Transport for SequentialTransport {
    fn agent_count(&self) -> usize {
        self.agents.len()
    }

    fn exchange(&mut self, cmd: Command) -> Result<Vec<Reply>> {
        self.round += 1;
        let round = self.round;
        self.log.log_down(&cmd, round, self.agents.len());
        let replies: Vec<Reply> = self
            .agents
            .iter_mut()
            .map(|a| a.handle(&cmd, round))
            .collect();
        for r in &replies {
            self.log.log_up(r);
        }
        check_replies(replies, round, self.agents.len())
    }

    fn log(&self) -> &MessageLog {
        &self.log
    }
}

/// One thread per leaf, connected to the root by FIFO queues.
#[derive(Debug)]
pub struct QueueTransport {
    links: Vec<Sender<(u64, Command)>>,
    replies: Receiver<Reply>,
    workers: Vec<JoinHandle<()>>,
    timeout: Duration,
    round: u64,
    log: MessageLog,
}

impl QueueTransport {
    pub fn spawn(agents: Vec<LeafAgent>) -> Self {
        Self::with_timeout(agents, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(agents: Vec<LeafAgent>, timeout: Duration) -> Self {
        let (reply_tx, replies) = mpsc::channel();
        let mut links = Vec::with_capacity(agents.len());
        let mut workers = Vec::with_capacity(agents.len());
        for mut agent in agents {
            let (tx, rx) = mpsc::channel::<(u64, Command)>();
            let out = reply_tx.clone();
            links.push(tx);
            workers.push(std::thread::spawn(move || {
                while let Ok((round, cmd)) = rx.recv() {
                    if matches!(cmd, Command::Shutdown) {
                        break;
                    }
                    if out.send(agent.handle(&cmd, round)).is_err() {
                        break;
                    }
                }
            }));
        }
        Self {
            links,
            replies,
            workers,
            timeout,
            round: 0,
            log: MessageLog::default(),
        }
    }
}

impl Transport for QueueTransport {
    fn agent_count(&self) -> usize {
        self.links.len()
    }

    fn exchange(&mut self, cmd: Command) -> Result<Vec<Reply>> {
        self.round += 1;
        let round = self.round;
        let n = self.links.len();
        self.log.log_down(&cmd, round, n);
        for (i, link) in self.links.iter().enumerate() {
            link.send((round, cmd.clone()))
                .map_err(|_| Error::Protocol(format!("agent {i} is not listening")))?;
        }
        let deadline = Instant::now() + self.timeout;
        let mut got: Vec<Reply> = Vec::with_capacity(n);
        while got.len() < n {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.replies.recv_timeout(left) {
                Ok(r) => got.push(r),
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    let missing: Vec<usize> = (0..n)
                        .filter(|i| !got.iter().any(|r| r.agent == *i))
                        .collect();
                    return Err(Error::Protocol(format!(
                        "round {round}: no reply from agent(s) {missing:?} within {:?}",
                        self.timeout
                    )));
                }
            }
        }
        let sorted = check_replies(got, round, n)?;
        // log in agent order so logs match the sequential transport
        for r in &sorted {
            self.log.log_up(r);
        }
        Ok(sorted)
    }

    fn log(&self) -> &MessageLog {
        &self.log
    }
}

impl Drop for QueueTransport {
    fn drop(&mut self) {
        for link in &self.links {
            let _ = link.send((u64::MAX, Command::Shutdown));
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgpass::messages::ReplyBody;
    use crate::pdipm::KktOptions;
    use crate::reformulations::quadratic_subproblem;
    use nalgebra::{DMatrix, DVector};

    fn agents(n: usize) -> Vec<LeafAgent> {
        (0..n)
            .map(|i| {
                let sp = quadratic_subproblem(
                    DMatrix::identity(2, 2),
                    DVector::from_element(2, i as f64),
                )
                .unwrap();
                LeafAgent::new(i, sp, 0.1, KktOptions::default())
            })
            .collect()
    }

    #[test]
    fn replies_are_ordered_and_logs_agree() {
        let mut seq = SequentialTransport::new(agents(4));
        let mut queue = QueueTransport::spawn(agents(4));
        for t in [&mut seq as &mut dyn Transport, &mut queue] {
            let r = t
                .exchange(Command::Init {
                    x0: DVector::zeros(2),
                    lambda0: 1.0,
                })
                .unwrap();
            assert_eq!(
                r.iter().map(|r| r.agent).collect::<Vec<_>>(),
                vec![0, 1, 2, 3]
            );
            assert!(r.iter().all(|r| matches!(r.body, ReplyBody::Reduce(_))));
        }
        assert_eq!(seq.log(), queue.log());
    }

    #[test]
    fn broadcast_payload_is_identical_on_every_link() {
        let mut seq = SequentialTransport::new(agents(3));
        seq.exchange(Command::Init {
            x0: DVector::from_vec(vec![0.5, 0.25]),
            lambda0: 1.0,
        })
        .unwrap();
        let hashes: Vec<u64> = seq
            .log()
            .records
            .iter()
            .filter(|r| r.direction == LinkDirection::Down && r.kind == "init")
            .map(|r| r.hash)
            .collect();
        assert_eq!(hashes.len(), 3);
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn silent_agent_times_out_with_its_index() {
        let mut t = QueueTransport::with_timeout(agents(1), Duration::from_millis(50));
        // a second link whose receiver is alive but never answers
        let (tx, rx) = mpsc::channel();
        t.links.push(tx);
        let err = t
            .exchange(Command::Init {
                x0: DVector::zeros(2),
                lambda0: 1.0,
            })
            .unwrap_err();
        drop(rx);
        match err {
            Error::Protocol(msg) => assert!(msg.contains("[1]"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
