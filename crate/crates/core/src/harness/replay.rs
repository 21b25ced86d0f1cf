//! Re-derives a task's vote, final answer and metrics from its trace.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::task::{check_answer, TaskSpec};
use crate::tree::{outcome_status, Node, NodeId, NodeStatus, ROOT};
use crate::voting::{majority_vote, normalize_answer, tied_representatives, VoteMethod};

use super::trace::{read_trace, Mode, TaskResult, TraceError, TraceEvent, TraceRecord};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("malformed trace at line {line} ({event}): {message}")]
    Malformed {
        line: usize,
        event: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub task_id: String,
    pub mode: Mode,
    /// Reconstructed nodes in creation order, root first.
    pub nodes: Vec<Node>,
    pub result: TaskResult,
    pub divergences: Vec<String>,
}

impl ReplayReport {
    pub fn verified(&self) -> bool {
        self.divergences.is_empty()
    }
}

fn event_name(event: &TraceEvent) -> &'static str {
    match event {
        TraceEvent::TaskStart { .. } => "task_start",
        TraceEvent::NodeCreated { .. } => "node_created",
        TraceEvent::Generation { .. } => "generation",
        TraceEvent::Execution { .. } => "execution",
        TraceEvent::LayerDone { .. } => "layer_done",
        TraceEvent::Vote { .. } => "vote",
        TraceEvent::TaskEnd { .. } => "task_end",
    }
}

struct Header {
    task: TaskSpec,
    mode: Mode,
    max_depth: usize,
    branching: usize,
}

pub fn replay(path: &Path) -> Result<ReplayReport, ReplayError> {
    replay_records(&read_trace(path)?)
}

pub fn replay_records(records: &[TraceRecord]) -> Result<ReplayReport, ReplayError> {
    let malformed = |index: usize, message: String| ReplayError::Malformed {
        line: index + 1,
        event: records.get(index).map(|r| event_name(&r.event)).unwrap_or("end of file"),
        message,
    };

    let header = match records.first().map(|r| &r.event) {
        Some(TraceEvent::TaskStart {
            task,
            mode,
            max_depth,
            branching,
            ..
        }) => Header {
            task: task.clone(),
            mode: *mode,
            max_depth: *max_depth,
            branching: *branching,
        },
        _ => return Err(malformed(0, "trace must begin with task_start".into())),
    };

    let mut nodes = vec![Node::root()];
    let mut index_of: BTreeMap<NodeId, usize> = BTreeMap::from([(ROOT, 0)]);
    let mut generations = 0usize;
    let mut in_code = 0usize;
    let mut vote = None;
    let mut end = None;

    for (i, record) in records.iter().enumerate().skip(1) {
        if end.is_some() {
            return Err(malformed(i, "event after task_end".into()));
        }
        match &record.event {
            TraceEvent::TaskStart { .. } => return Err(malformed(i, "second task_start".into())),
            TraceEvent::NodeCreated {
                node_id,
                parent,
                depth,
                profile,
            } => {
                if index_of.contains_key(node_id) {
                    return Err(malformed(i, format!("node {node_id} created twice")));
                }
                if !index_of.contains_key(parent) {
                    return Err(malformed(i, format!("parent {parent} of node {node_id} was never created")));
                }
                index_of.insert(*node_id, nodes.len());
                nodes.push(Node {
                    node_id: *node_id,
                    parent_id: Some(*parent),
                    depth: *depth,
                    profile: Some(profile.clone()),
                    thought: String::new(),
                    action_code: String::new(),
                    outcome: None,
                    status: NodeStatus::Pending,
                });
            }
            TraceEvent::Generation { node_id, .. } => {
                if !index_of.contains_key(node_id) {
                    return Err(malformed(i, format!("generation for node {node_id} before its node_created")));
                }
                generations += 1;
            }
            TraceEvent::Execution {
                node_id,
                thought,
                action_code,
                outcome,
                status,
            } => {
                let Some(&at) = index_of.get(node_id) else {
                    return Err(malformed(i, format!("execution for node {node_id} before its node_created")));
                };
                let node = &mut nodes[at];
                if node.outcome.is_some() {
                    return Err(malformed(i, format!("node {node_id} executed twice")));
                }
                node.thought = thought.clone();
                node.action_code = action_code.clone();
                node.outcome = Some(outcome.clone());
                node.status = *status;
                in_code += outcome.llm_calls as usize;
            }
            TraceEvent::LayerDone { .. } => {}
            TraceEvent::Vote {
                vote: v,
                judge_called,
                accepted,
                discarded,
            } => {
                if vote.is_some() {
                    return Err(malformed(i, "second vote".into()));
                }
                vote = Some((v.clone(), *judge_called, accepted.clone(), discarded.clone()));
            }
            TraceEvent::TaskEnd { result } => end = Some(result.clone()),
        }
    }
    let Some(result) = end else {
        return Err(malformed(records.len(), "trace has no task_end".into()));
    };

    let mut divergences = Vec::new();
    let mut diverge = |message: String| divergences.push(message);

    if result.task_id != header.task.task_id {
        diverge(format!("task_end is for {:?}, task_start for {:?}", result.task_id, header.task.task_id));
    }

    // Node-level structure.
    for node in nodes.iter().skip(1) {
        let parent = &nodes[index_of[&node.parent_id.unwrap_or(ROOT)]];
        if node.depth != parent.depth + 1 {
            diverge(format!("node {} has depth {} under a depth-{} parent", node.node_id, node.depth, parent.depth));
        }
        if let Some(outcome) = &node.outcome {
            if node.status != outcome_status(outcome) {
                diverge(format!("node {} recorded as {:?} but its outcome says otherwise", node.node_id, node.status));
            }
        }
        if parent.status == NodeStatus::Success {
            diverge(format!("node {} is a child of successful node {}", node.node_id, parent.node_id));
        }
        if header.mode == Mode::Tree && node.depth > header.max_depth {
            diverge(format!("node {} exceeds max depth {}", node.node_id, header.max_depth));
        }
    }
    if header.mode == Mode::Tree {
        let mut fanout: BTreeMap<NodeId, usize> = BTreeMap::new();
        for node in nodes.iter().skip(1) {
            *fanout.entry(node.parent_id.unwrap_or(ROOT)).or_default() += 1;
        }
        for (father, n) in fanout {
            if n != header.branching {
                diverge(format!("node {father} has {n} children, branching is {}", header.branching));
            }
        }
    }

    let executed: Vec<&Node> = nodes.iter().filter(|n| n.outcome.is_some()).collect();
    let turns = match header.mode {
        Mode::Tree => executed.iter().map(|n| n.depth).max().unwrap_or(0),
        Mode::Baseline => executed.len(),
    };
    if result.error.is_none() && turns != result.turns {
        diverge(format!("recorded turns {} but trace shows {turns}", result.turns));
    }
    if result.nodes_created != nodes.len() - 1 {
        diverge(format!("recorded nodes_created {} but trace has {}", result.nodes_created, nodes.len() - 1));
    }

    let mut judge_calls = 0;
    match (&vote, &result.error) {
        (_, Some(_)) => {
            if result.final_answer.is_some() || result.correct {
                diverge("aborted task reports an answer".into());
            }
        }
        (None, None) => diverge("completed task has no vote".into()),
        (Some((recorded, judge_called, accepted, discarded)), None) => {
            judge_calls = usize::from(*judge_called);
            let mut pool: Vec<(NodeId, String)> = nodes
                .iter()
                .filter(|n| n.status == NodeStatus::Success)
                .filter_map(|n| Some((n.node_id, n.outcome.as_ref()?.answer.clone()?)))
                .collect();
            pool.sort_by_key(|(id, _)| *id);
            let fresh = majority_vote(&pool);
            if fresh.counts != recorded.counts || fresh.tie != recorded.tie {
                diverge("vote counts do not match the successful nodes".into());
            }
            if recorded.method == VoteMethod::Judge {
                let options = tied_representatives(&pool, &fresh);
                if !judge_called || !recorded.winner.as_ref().is_some_and(|w| options.contains(w)) {
                    diverge(format!("judge winner {:?} is not among the tied answers", recorded.winner));
                }
            } else if fresh.winner != recorded.winner || fresh.method != recorded.method {
                diverge(format!(
                    "vote winner {:?} ({:?}) but recomputation gives {:?} ({:?})",
                    recorded.winner, recorded.method, fresh.winner, fresh.method
                ));
            }
            let winner_key = recorded.winner.as_deref().map(normalize_answer);
            let (want_acc, want_disc): (Vec<_>, Vec<_>) =
                pool.iter().partition(|(_, a)| Some(normalize_answer(a)) == winner_key);
            let ids = |v: Vec<&(NodeId, String)>| v.into_iter().map(|(id, _)| *id).collect::<Vec<_>>();
            if &ids(want_acc) != accepted || &ids(want_disc) != discarded {
                diverge("accepted/discarded labels do not match the vote".into());
            }
            if result.final_answer != recorded.winner {
                diverge(format!(
                    "final answer {:?} differs from vote winner {:?}",
                    result.final_answer, recorded.winner
                ));
            }
            let correct = result
                .final_answer
                .as_deref()
                .is_some_and(|a| check_answer(&header.task, a));
            if correct != result.correct {
                diverge(format!("recorded correct={} but the answer check gives {correct}", result.correct));
            }
        }
    }

    let llm = generations + in_code + judge_calls;
    if llm != result.llm_generations {
        diverge(format!("recorded llm_generations {} but trace accounts for {llm}", result.llm_generations));
    }

    Ok(ReplayReport {
        task_id: header.task.task_id,
        mode: header.mode,
        nodes,
        result,
        divergences,
    })
}
