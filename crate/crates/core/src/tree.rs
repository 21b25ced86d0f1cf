//! The decision tree: node lifecycle, frontier, expansion and the candidate pool.
//!
//! Node 0 is a virtual root with no code or outcome. Every other node pairs one
//! generation with one execution. Only failed leaves above `max_depth` are
//! expanded; successful nodes go to the candidate pool and stay leaves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::SamplingProfile;
use crate::sandbox::{ExecStatus, ExecutionOutcome};
use crate::task::TaskSpec;

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    pub depth: usize,
    pub profile: Option<SamplingProfile>,
    pub thought: String,
    pub action_code: String,
    pub outcome: Option<ExecutionOutcome>,
    pub status: NodeStatus,
}

impl Node {
    pub fn root() -> Self {
        Self {
            node_id: ROOT,
            parent_id: None,
            depth: 0,
            profile: None,
            thought: String::new(),
            action_code: String::new(),
            outcome: None,
            status: NodeStatus::Pending,
        }
    }

    pub fn is_root(&self) -> bool {
        self.node_id == ROOT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToCConfig {
    pub max_depth: usize,
    pub branching: usize,
    pub token_budget: usize,
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub prompt_variants: Vec<String>,
    pub judge_enabled: bool,
    /// Iteration cap for the sequential baseline.
    pub max_turns: usize,
    /// Concurrent generate+execute jobs per layer. Defaults to `branching`.
    pub workers: Option<usize>,
    pub max_output_tokens: usize,
}

impl Default for ToCConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            branching: 3,
            token_budget: 3000,
            models: vec!["mock:alpha".into(), "mock:beta".into()],
            temperatures: vec![0.2, 0.8],
            prompt_variants: vec!["engineer".into(), "planner".into(), "critic".into()],
            judge_enabled: false,
            max_turns: 10,
            workers: None,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid configuration: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

impl ToCConfig {
    pub fn product_size(&self) -> usize {
        self.models.len() * self.temperatures.len() * self.prompt_variants.len()
    }

    pub fn worker_cap(&self) -> usize {
        self.workers.unwrap_or(self.branching).max(1)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.max_depth < 1 {
            problems.push(format!("max_depth must be >= 1, got {}", self.max_depth));
        }
        if self.branching < 1 {
            problems.push(format!("branching must be >= 1, got {}", self.branching));
        }
        if self.token_budget < crate::codegen::MIN_BUDGET {
            problems.push(format!(
                "token_budget must be >= {}, got {}",
                crate::codegen::MIN_BUDGET,
                self.token_budget
            ));
        }
        if self.models.is_empty() {
            problems.push("models must not be empty".into());
        }
        if self.temperatures.is_empty() {
            problems.push("temperatures must not be empty".into());
        }
        for t in &self.temperatures {
            if !(0.0..=2.0).contains(t) {
                problems.push(format!("temperature {t} outside [0, 2]"));
            }
        }
        if self.prompt_variants.is_empty() {
            problems.push("prompt_variants must not be empty".into());
        }
        if self.product_size() > 0 && self.product_size() < self.branching {
            problems.push(format!(
                "branching {} exceeds the {} distinct sampling profiles \
                 (models x temperatures x prompt_variants)",
                self.branching,
                self.product_size()
            ));
        }
        if self.max_turns < 1 {
            problems.push(format!("max_turns must be >= 1, got {}", self.max_turns));
        }
        if self.max_output_tokens < 1 {
            problems.push("max_output_tokens must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(problems))
        }
    }

    /// Upper bound on non-root nodes when every node fails.
    pub fn max_nodes(&self) -> usize {
        (1..=self.max_depth).map(|d| self.branching.pow(d as u32)).sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),
    #[error("node {0} is not on the frontier")]
    NotExpandable(NodeId),
    #[error("expected {expected} profiles, got {got}")]
    ProfileCount { expected: usize, got: usize },
    #[error("duplicate sampling profile among children")]
    DuplicateProfile,
    #[error("node {0} already has an outcome")]
    AlreadyRecorded(NodeId),
    #[error("node {0} is the virtual root")]
    RootOutcome(NodeId),
    #[error("{0} node(s) still pending")]
    PendingNodes(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub task_id: String,
    pub nodes: Vec<Node>,
    pub config: ToCConfig,
    pub layers_expanded: usize,
}

/// Success iff execution finished cleanly and an answer was submitted.
pub fn outcome_status(outcome: &ExecutionOutcome) -> NodeStatus {
    if outcome.status == ExecStatus::Ok && outcome.answer.is_some() {
        NodeStatus::Success
    } else {
        NodeStatus::Failed
    }
}

pub fn init_tree(task: &TaskSpec, config: &ToCConfig) -> Result<Tree, TreeError> {
    config.validate()?;
    Ok(Tree {
        task_id: task.task_id.clone(),
        nodes: vec![Node::root()],
        config: config.clone(),
        layers_expanded: 0,
    })
}

impl Tree {
    pub fn node(&self, id: NodeId) -> Result<&Node, TreeError> {
        self.nodes.get(id).ok_or(TreeError::NoSuchNode(id))
    }

    fn has_children(&self, id: NodeId) -> bool {
        self.nodes.iter().any(|n| n.parent_id == Some(id))
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.parent_id == Some(id))
    }

    /// Nodes eligible for expansion, ascending by id.
    pub fn frontier(&self) -> Vec<NodeId> {
        if self.nodes.len() == 1 {
            return vec![ROOT];
        }
        self.nodes
            .iter()
            .filter(|n| {
                !n.is_root()
                    && n.status == NodeStatus::Failed
                    && n.depth < self.config.max_depth
                    && !self.has_children(n.node_id)
            })
            .map(|n| n.node_id)
            .collect()
    }

    pub fn expand_node(
        &mut self,
        node_id: NodeId,
        profiles: &[SamplingProfile],
    ) -> Result<Vec<NodeId>, TreeError> {
        let parent_depth = self.node(node_id)?.depth;
        if !self.frontier().contains(&node_id) {
            return Err(TreeError::NotExpandable(node_id));
        }
        if profiles.len() != self.config.branching {
            return Err(TreeError::ProfileCount {
                expected: self.config.branching,
                got: profiles.len(),
            });
        }
        for (i, a) in profiles.iter().enumerate() {
            if profiles[i + 1..].iter().any(|b| a == b) {
                return Err(TreeError::DuplicateProfile);
            }
        }
        let mut ids = Vec::with_capacity(profiles.len());
        for profile in profiles {
            let id = self.nodes.len();
            self.nodes.push(Node {
                node_id: id,
                parent_id: Some(node_id),
                depth: parent_depth + 1,
                profile: Some(profile.clone()),
                thought: String::new(),
                action_code: String::new(),
                outcome: None,
                status: NodeStatus::Pending,
            });
            ids.push(id);
        }
        Ok(ids)
    }

    pub fn record_outcome(
        &mut self,
        node_id: NodeId,
        thought: String,
        action_code: String,
        outcome: ExecutionOutcome,
    ) -> Result<NodeStatus, TreeError> {
        if node_id == ROOT {
            return Err(TreeError::RootOutcome(node_id));
        }
        let node = self
            .nodes
            .get_mut(node_id)
            .ok_or(TreeError::NoSuchNode(node_id))?;
        if node.status != NodeStatus::Pending {
            return Err(TreeError::AlreadyRecorded(node_id));
        }
        node.status = outcome_status(&outcome);
        node.thought = thought;
        node.action_code = action_code;
        node.outcome = Some(outcome);
        self.layers_expanded = self.layers_expanded.max(node.depth);
        Ok(node.status)
    }

    pub fn pending_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !n.is_root() && n.status == NodeStatus::Pending)
            .count()
    }

    pub fn is_terminal(&self) -> Result<bool, TreeError> {
        match self.pending_count() {
            0 => Ok(self.nodes.len() > 1 && self.frontier().is_empty()),
            n => Err(TreeError::PendingNodes(n)),
        }
    }

    /// `(node_id, answer)` of every successful node, ascending by id.
    pub fn candidate_pool(&self) -> Vec<(NodeId, String)> {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Success)
            .filter_map(|n| {
                let answer = n.outcome.as_ref()?.answer.clone()?;
                Some((n.node_id, answer))
            })
            .collect()
    }

    /// Non-root node count.
    pub fn nodes_created(&self) -> usize {
        self.nodes.len() - 1
    }
}
