//! Tasks, tool packs, and answer checking.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::decimal::{self, Decimal};
use crate::voting::normalize_answer;

const DESK_SUITE: &str = include_str!("../assets/desk_suite.json");
const TOOL_PACKS: &str = include_str!("../assets/tool_packs.json");

/// Path of the bundled desk suite, relative to the workspace root.
pub const DESK_SUITE_PATH: &str = "crates/core/assets/desk_suite.json";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("cannot read task file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("task file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported task file version {0} (expected 1)")]
    Version(u32),
    #[error("duplicate task_id {task_id:?}: entries #{first} and #{second}")]
    DuplicateId {
        task_id: String,
        first: usize,
        second: usize,
    },
    #[error("task {task_id:?}: {message}")]
    Invalid { task_id: String, message: String },
    #[error("unknown tool pack {0:?}")]
    UnknownPack(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact,
    #[default]
    Normalized,
    Numeric { tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub query: String,
    pub tool_pack: String,
    pub expected_answer: String,
    #[serde(default)]
    pub matcher: Matcher,
    /// Scalar fixture parameters for the tool pack.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub task_args: BTreeMap<String, Value>,
}

impl TaskSpec {
    fn validate(&self) -> Result<(), TaskError> {
        let invalid = |message: String| TaskError::Invalid {
            task_id: self.task_id.clone(),
            message,
        };
        if self.task_id.is_empty() {
            return Err(invalid("empty task_id".into()));
        }
        if let Matcher::Numeric { tolerance } = self.matcher {
            if !(tolerance >= 0.0 && tolerance.is_finite()) {
                return Err(invalid(format!("numeric tolerance must be >= 0, got {tolerance}")));
            }
        }
        for (key, value) in &self.task_args {
            if value.is_array() || value.is_object() {
                return Err(invalid(format!("task_args.{key} is not a scalar")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub version: u32,
    pub tasks: Vec<TaskSpec>,
}

/// Parses a task document, enforcing version, scalar args and unique ids.
pub fn parse_task_suite(text: &str) -> Result<Vec<TaskSpec>, TaskError> {
    let suite: TaskSuite = serde_json::from_str(text).map_err(|e| TaskError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if suite.version != 1 {
        return Err(TaskError::Version(suite.version));
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (index, task) in suite.tasks.iter().enumerate() {
        task.validate()?;
        if let Some(first) = seen.insert(task.task_id.as_str(), index) {
            return Err(TaskError::DuplicateId {
                task_id: task.task_id.clone(),
                first,
                second: index,
            });
        }
    }
    Ok(suite.tasks)
}

pub fn load_task_suite(path: &Path) -> Result<Vec<TaskSpec>, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_task_suite(&text)
}

pub fn serialize_task_suite(tasks: &[TaskSpec]) -> String {
    let suite = TaskSuite {
        version: 1,
        tasks: tasks.to_vec(),
    };
    serde_json::to_string_pretty(&suite).expect("task suite serializes")
}

pub fn desk_suite() -> Vec<TaskSpec> {
    parse_task_suite(DESK_SUITE).expect("bundled desk suite is valid")
}

pub fn check_answer(task: &TaskSpec, answer: &str) -> bool {
    match &task.matcher {
        Matcher::Exact => answer == task.expected_answer,
        Matcher::Normalized => normalize_answer(answer) == normalize_answer(&task.expected_answer),
        Matcher::Numeric { tolerance } => {
            let parse = |s: &str| Decimal::parse(s.trim());
            match (parse(answer), parse(&task.expected_answer), decimal::from_f64(*tolerance)) {
                (Some(a), Some(b), Some(tol)) => decimal::within_tolerance(&a, &b, &tol),
                _ => false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam(pub String, pub String, pub String);

impl ToolParam {
    pub fn name(&self) -> &str {
        &self.0
    }
    pub fn type_tag(&self) -> &str {
        &self.1
    }
    pub fn description(&self) -> &str {
        &self.2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSignature {
    pub name: String,
    pub params: Vec<ToolParam>,
    pub description: String,
    pub returns: String,
}

impl ToolSignature {
    fn render(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name(), p.type_tag()))
            .collect::<Vec<_>>()
            .join(", ");
        let mut line = format!("{}({}) -> {}: {}", self.name, params, self.returns, self.description);
        let notes: Vec<String> = self
            .params
            .iter()
            .filter(|p| !p.description().is_empty())
            .map(|p| format!("{} = {}", p.name(), p.description()))
            .collect();
        if !notes.is_empty() {
            line.push_str(&format!(" [{}]", notes.join("; ")));
        }
        line
    }
}

fn builtin_tools() -> [ToolSignature; 2] {
    [
        ToolSignature {
            name: "llm_function".into(),
            params: vec![ToolParam(
                "prompt".into(),
                "str".into(),
                "a self-contained prompt you write from the current context".into(),
            )],
            description: "Ask a language model and return its reply as text. Generate the prompt \
                          from the current context and call llm_function to obtain or summarize \
                          results you cannot compute directly."
                .into(),
            returns: "str".into(),
        },
        ToolSignature {
            name: "submit_answer".into(),
            params: vec![ToolParam(
                "answer".into(),
                "str".into(),
                "only the precise final answer, no explanation".into(),
            )],
            description: "Submit the final answer. The program must end by calling it exactly once."
                .into(),
            returns: "None".into(),
        },
    ]
}

#[derive(Debug, Clone, Deserialize)]
struct PackFile {
    version: u32,
    packs: Vec<PackEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct PackEntry {
    pack_id: String,
    tools: Vec<ToolSignature>,
}

/// Host-side view of the tool packs the runner provides.
#[derive(Debug, Clone)]
pub struct ToolRegistry {
    packs: BTreeMap<String, Vec<ToolSignature>>,
}

impl ToolRegistry {
    pub fn bundled() -> Self {
        Self::parse(TOOL_PACKS).expect("bundled tool packs are valid")
    }

    pub fn parse(text: &str) -> Result<Self, TaskError> {
        let file: PackFile = serde_json::from_str(text).map_err(|e| TaskError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(TaskError::Version(file.version));
        }
        let packs = file
            .packs
            .into_iter()
            .map(|p| (p.pack_id, p.tools))
            .collect();
        Ok(Self { packs })
    }

    pub fn contains(&self, pack_id: &str) -> bool {
        self.packs.contains_key(pack_id)
    }

    /// Pack tools followed by `llm_function` and `submit_answer`.
    pub fn signatures(&self, pack_id: &str) -> Result<Vec<ToolSignature>, TaskError> {
        let tools = self
            .packs
            .get(pack_id)
            .ok_or_else(|| TaskError::UnknownPack(pack_id.to_string()))?;
        let mut all = tools.clone();
        all.extend(builtin_tools());
        Ok(all)
    }

    /// One line per tool, then the task's fixture arguments if it has any.
    pub fn tool_signature_block(&self, task: &TaskSpec) -> Result<String, TaskError> {
        let mut lines: Vec<String> = self
            .signatures(&task.tool_pack)?
            .iter()
            .map(ToolSignature::render)
            .collect();
        if !task.task_args.is_empty() {
            let args = task
                .task_args
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ");
            lines.push(format!("# tool pack fixture: {args}"));
        }
        Ok(lines.join("\n"))
    }
}
