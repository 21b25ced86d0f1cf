//! Collapsing the candidate pool into a single answer.
//!
//! Answers are compared by their normalized form; the winner reported is the
//! raw text of the earliest node in the winning class. Ties go to an optional
//! judge and otherwise fall back to the lowest node id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decimal::Decimal;
use crate::tree::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMethod {
    Unanimous,
    Majority,
    Judge,
    FallbackEarliest,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub count: usize,
    pub earliest_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub winner: Option<String>,
    /// Keyed by normalized answer.
    pub counts: BTreeMap<String, ClassCount>,
    pub tie: bool,
    pub method: VoteMethod,
}

impl VoteResult {
    fn empty() -> Self {
        Self {
            winner: None,
            counts: BTreeMap::new(),
            tie: false,
            method: VoteMethod::Empty,
        }
    }
}

/// Trim, casefold, collapse whitespace, drop trailing periods, and render
/// plain decimals canonically.
pub fn normalize_answer(text: &str) -> String {
    let folded = text.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    // All trailing periods go, not just one: "a.." must normalize the same
    // as "a." or the function stops being idempotent.
    let stripped = collapsed.trim_end_matches(|c: char| c == '.' || c.is_whitespace());
    match Decimal::parse(stripped) {
        Some(d) => d.canonical(),
        None => stripped.to_string(),
    }
}

/// Plain majority over normalized answers.
///
/// On a tie the provisional winner is the earliest node among the tied
/// classes (`FallbackEarliest`); [`finalize_answer`] may replace it with a
/// judge decision.
pub fn majority_vote(candidates: &[(NodeId, String)]) -> VoteResult {
    if candidates.is_empty() {
        return VoteResult::empty();
    }
    let mut counts: BTreeMap<String, ClassCount> = BTreeMap::new();
    let mut representative: BTreeMap<String, (NodeId, &str)> = BTreeMap::new();
    for (node_id, raw) in candidates {
        let key = normalize_answer(raw);
        let entry = counts.entry(key.clone()).or_insert(ClassCount {
            count: 0,
            earliest_node: *node_id,
        });
        entry.count += 1;
        entry.earliest_node = entry.earliest_node.min(*node_id);
        let rep = representative.entry(key).or_insert((*node_id, raw.as_str()));
        if *node_id < rep.0 {
            *rep = (*node_id, raw.as_str());
        }
    }

    let top = counts.values().map(|c| c.count).max().unwrap_or(0);
    let leaders: Vec<&String> = counts
        .iter()
        .filter(|(_, c)| c.count == top)
        .map(|(k, _)| k)
        .collect();

    let (winner_key, tie, method) = if counts.len() == 1 {
        (leaders[0].clone(), false, VoteMethod::Unanimous)
    } else if leaders.len() == 1 {
        (leaders[0].clone(), false, VoteMethod::Majority)
    } else {
        let earliest = leaders
            .iter()
            .min_by_key(|k| counts[k.as_str()].earliest_node)
            .expect("non-empty leaders");
        ((*earliest).clone(), true, VoteMethod::FallbackEarliest)
    };

    VoteResult {
        winner: Some(representative[&winner_key].1.to_string()),
        counts,
        tie,
        method,
    }
}

/// Raw representatives of the tied leading classes, ordered by earliest node.
pub fn tied_representatives(candidates: &[(NodeId, String)], vote: &VoteResult) -> Vec<String> {
    if !vote.tie {
        return Vec::new();
    }
    let top = vote.counts.values().map(|c| c.count).max().unwrap_or(0);
    let mut tied: Vec<(NodeId, &str)> = vote
        .counts
        .iter()
        .filter(|(_, c)| c.count == top)
        .filter_map(|(key, class)| {
            candidates
                .iter()
                .find(|(id, raw)| *id == class.earliest_node && normalize_answer(raw) == *key)
                .map(|(id, raw)| (*id, raw.as_str()))
        })
        .collect();
    tied.sort_by_key(|(id, _)| *id);
    tied.into_iter().map(|(_, raw)| raw.to_string()).collect()
}

/// Picks one of several candidate answers. Implemented over the gateway's
/// ballot call; tests substitute closures.
pub trait Judge {
    fn pick(&self, candidates: &[String]) -> Result<String, String>;
}

impl<F> Judge for F
where
    F: Fn(&[String]) -> Result<String, String>,
{
    fn pick(&self, candidates: &[String]) -> Result<String, String> {
        self(candidates)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finalized {
    pub final_answer: Option<String>,
    pub vote: VoteResult,
    pub judge_called: bool,
}

/// Total over every pool: majority, then judge on ties (if given), then the
/// earliest tied node. Judge errors degrade to the fallback.
pub fn finalize_answer(pool: &[(NodeId, String)], judge: Option<&dyn Judge>) -> Finalized {
    let mut vote = majority_vote(pool);
    let mut judge_called = false;
    if vote.tie {
        if let Some(judge) = judge {
            let options = tied_representatives(pool, &vote);
            judge_called = true;
            match judge.pick(&options) {
                Ok(choice) if options.contains(&choice) => {
                    vote.winner = Some(choice);
                    vote.method = VoteMethod::Judge;
                }
                Ok(choice) => {
                    tracing::warn!(%choice, "judge returned a non-candidate; using earliest node");
                }
                Err(err) => {
                    tracing::warn!(%err, "judge failed; using earliest node");
                }
            }
        }
    }
    Finalized {
        final_answer: vote.winner.clone(),
        vote,
        judge_called,
    }
}
