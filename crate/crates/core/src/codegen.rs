//! Prompt assembly, completion parsing and sampling-profile rotation.
//!
//! A child prompt is built from the task, the tool signatures, and its
//! father's code and execution result. The result section is trimmed first
//! when the prompt would exceed the token budget, then the father code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::summarize_for_child;
use crate::task::{TaskError, TaskSpec, ToolRegistry};
use crate::text;
use crate::tree::{Node, ToCConfig};

/// Smallest token budget a prompt can be built with.
pub const MIN_BUDGET: usize = 512;

/// Bytes reserved for the father result before the father code is trimmed.
const MIN_RESULT_BYTES: usize = 512;

const VARIANTS: &str = include_str!("../assets/prompt_variants.txt");
const VARIANT_HEADER: &str = "# prompt-variants v1";

const RESPONSE_FORMAT: &str = "\
Respond in exactly this format:
Thought: <your reasoning about how to solve the task>
```python
<one complete program>
```
Write exactly one fenced code block. The program must solve the whole task and \
end by calling submit_answer(answer) with only the precise answer, no explanation.";

const RETRY_NOTE: &str = "\
The father attempt above did not produce an answer. Analyze the specific issue \
shown in its result and write a new complete program that avoids it.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingProfile {
    /// `provider:model-name`
    pub model: String,
    pub temperature: f64,
    pub prompt_variant: String,
}

impl SamplingProfile {
    pub fn new(model: impl Into<String>, temperature: f64, prompt_variant: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature,
            prompt_variant: prompt_variant.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub approx_tokens: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown prompt variant {0:?}")]
    UnknownVariant(String),
    #[error("token budget {budget} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall { budget: usize },
    #[error("task text and tool list alone need {needed} tokens, budget is {budget}")]
    FixedPartTooLarge { needed: usize, budget: usize },
    #[error(transparent)]
    Task(#[from] TaskErrorMessage),
}

/// String form of a [`TaskError`], so that [`PromptError`] stays comparable.
#[derive(Debug, Error, PartialEq)]
#[error("{0}")]
pub struct TaskErrorMessage(pub String);

impl From<TaskError> for PromptError {
    fn from(e: TaskError) -> Self {
        PromptError::Task(TaskErrorMessage(e.to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VariantError {
    #[error("prompt variant file must start with {VARIANT_HEADER:?}")]
    MissingHeader,
    #[error("line {0}: text outside of a [variant] section")]
    Orphan(usize),
    #[error("duplicate variant [{0}]")]
    Duplicate(String),
    #[error("variant [{0}] is empty")]
    Empty(String),
}

/// Role instructions keyed by variant name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantLibrary {
    variants: BTreeMap<String, String>,
}

impl VariantLibrary {
    pub fn bundled() -> Self {
        Self::parse(VARIANTS).expect("bundled prompt variants are valid")
    }

    pub fn parse(text: &str) -> Result<Self, VariantError> {
        let mut lines = text.lines().enumerate();
        match lines.find(|(_, l)| !l.trim().is_empty()) {
            Some((_, l)) if l.trim() == VARIANT_HEADER => {}
            _ => return Err(VariantError::MissingHeader),
        }
        let mut variants = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let finish = |current: Option<(String, Vec<&str>)>,
                          variants: &mut BTreeMap<String, String>|
         -> Result<(), VariantError> {
            if let Some((name, body)) = current {
                let body = body.join("\n").trim().to_string();
                if body.is_empty() {
                    return Err(VariantError::Empty(name));
                }
                if variants.insert(name.clone(), body).is_some() {
                    return Err(VariantError::Duplicate(name));
                }
            }
            Ok(())
        };
        for (index, line) in lines {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                finish(current.take(), &mut variants)?;
                current = Some((trimmed[1..trimmed.len() - 1].to_string(), Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else if !(trimmed.is_empty() || trimmed.starts_with('#')) {
                return Err(VariantError::Orphan(index + 1));
            }
        }
        finish(current, &mut variants)?;
        Ok(Self { variants })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.variants.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.variants.keys().map(String::as_str)
    }
}

/// `ceil(bytes / 4)`.
pub fn approx_token_count(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// Builds node prompts from a tool registry and a variant library.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    pub registry: ToolRegistry,
    pub variants: VariantLibrary,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self {
            registry: ToolRegistry::bundled(),
            variants: VariantLibrary::bundled(),
        }
    }
}

impl PromptBuilder {
    /// Assembles the prompt for a child of `father`. Deterministic in its inputs.
    pub fn build_prompt(
        &self,
        task: &TaskSpec,
        father: &Node,
        profile: &SamplingProfile,
        budget: usize,
    ) -> Result<PromptBundle, PromptError> {
        if budget < MIN_BUDGET {
            return Err(PromptError::BudgetTooSmall { budget });
        }
        let role = self
            .variants
            .get(&profile.prompt_variant)
            .ok_or_else(|| PromptError::UnknownVariant(profile.prompt_variant.clone()))?;
        let functions = self.registry.tool_signature_block(task)?;

        let system_text = format!("{role}\n\n{RESPONSE_FORMAT}");
        let mut user_text = format!("TASK\n{}\n\nFUNCTIONS\n{}", task.query, functions);

        let max_bytes = budget * 4;
        if father.is_root() {
            let needed = system_text.len() + user_text.len();
            if needed > max_bytes {
                return Err(PromptError::FixedPartTooLarge {
                    needed: needed.div_ceil(4),
                    budget,
                });
            }
        } else {
            let code_open = "\n\nFATHER CODE\n```python\n";
            let code_close = "\n```\n\nFATHER RESULT\n";
            let note = format!("\n\n{RETRY_NOTE}");
            let fixed = system_text.len() + user_text.len() + code_open.len() + code_close.len() + note.len();
            if fixed > max_bytes {
                return Err(PromptError::FixedPartTooLarge {
                    needed: fixed.div_ceil(4),
                    budget,
                });
            }
            let room = max_bytes - fixed;
            let (code, result) = fit_father(father, room);
            user_text.push_str(code_open);
            user_text.push_str(&code);
            user_text.push_str(code_close);
            user_text.push_str(&result);
            user_text.push_str(&note);
        }

        // Counted over the two texts together, as they share one context window.
        let approx_tokens = (system_text.len() + user_text.len()).div_ceil(4);
        Ok(PromptBundle {
            system_text,
            user_text,
            approx_tokens,
        })
    }
}

/// Father code and result rendered within `room` bytes: result tail-trimmed
/// first, then the code.
fn fit_father(father: &Node, room: usize) -> (String, String) {
    let summarize = |tokens: usize| match &father.outcome {
        Some(outcome) => summarize_for_child(outcome, tokens),
        None => "status: pending".to_string(),
    };
    let code = father.action_code.as_str();
    let full_result = summarize(usize::MAX / 8);
    if code.len() + full_result.len() <= room {
        return (code.to_string(), full_result);
    }
    let result_room = room.saturating_sub(code.len());
    if result_room >= MIN_RESULT_BYTES {
        return (code.to_string(), summarize(result_room / 4));
    }
    let result = summarize(MIN_RESULT_BYTES.min(room) / 4);
    let code = text::keep_tail(code, room - result.len());
    (code, result)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no_code: completion contains no fenced code block")]
pub struct NoCode;

fn is_fence(line: &str) -> bool {
    line.starts_with("```")
}

/// Splits a completion into the thought before the first fenced block and
/// that block's contents. Anything after the block is ignored; an unclosed
/// block runs to the end of the text.
pub fn parse_completion(text: &str) -> Result<(String, String), NoCode> {
    let lines: Vec<&str> = text.split('\n').collect();
    let open = lines.iter().position(|l| is_fence(l)).ok_or(NoCode)?;
    let close = lines[open + 1..].iter().position(|l| is_fence(l)).map(|i| open + 1 + i);
    let thought = lines[..open].join("\n").trim().to_string();
    let code = lines[open + 1..close.unwrap_or(lines.len())]
        .iter()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n");
    let code = match close {
        Some(_) => code,
        None => code.trim_end_matches('\n').to_string(),
    };
    Ok((thought, code))
}

/// Canonical single-fence completion; inverse of [`parse_completion`].
pub fn render_completion(thought: &str, code: &str) -> String {
    format!("{thought}\n```python\n{code}\n```\n")
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{requested} profiles requested but only {available} distinct ones exist")]
pub struct ProfileError {
    pub requested: usize,
    pub available: usize,
}

/// `k` consecutive entries of models x temperatures x variants (in config
/// order), starting at `(layer + father_ordinal) mod size` and wrapping.
pub fn sample_profiles(
    config: &ToCConfig,
    k: usize,
    layer: usize,
    father_ordinal: usize,
) -> Result<Vec<SamplingProfile>, ProfileError> {
    let size = config.product_size();
    if k > size || size == 0 {
        return Err(ProfileError {
            requested: k,
            available: size,
        });
    }
    let per_model = config.temperatures.len() * config.prompt_variants.len();
    let entry = |index: usize| {
        let model = &config.models[index / per_model];
        let rest = index % per_model;
        let temperature = config.temperatures[rest / config.prompt_variants.len()];
        let variant = &config.prompt_variants[rest % config.prompt_variants.len()];
        SamplingProfile::new(model.clone(), temperature, variant.clone())
    };
    let offset = (layer + father_ordinal) % size;
    Ok((0..k).map(|i| entry((offset + i) % size)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::ExecutionOutcome;
    use crate::tree::{NodeStatus, ROOT};

    fn task() -> TaskSpec {
        crate::task::desk_suite()
            .into_iter()
            .find(|t| t.tool_pack == "cipher")
            .unwrap()
    }

    fn failed_father(code: &str, outcome: ExecutionOutcome) -> Node {
        Node {
            node_id: 1,
            parent_id: Some(ROOT),
            depth: 1,
            profile: Some(SamplingProfile::new("mock:a", 0.2, "engineer")),
            thought: "t".into(),
            action_code: code.into(),
            outcome: Some(outcome),
            status: NodeStatus::Failed,
        }
    }

    fn profile() -> SamplingProfile {
        SamplingProfile::new("mock:a", 0.2, "critic")
    }

    #[test]
    fn token_counts() {
        assert_eq!(approx_token_count(""), 0);
        assert_eq!(approx_token_count(&"a".repeat(4000)), 1000);
        assert_eq!(approx_token_count(&"a".repeat(4001)), 1001);
    }

    #[test]
    fn root_prompt_has_no_father_sections() {
        let b = PromptBuilder::default()
            .build_prompt(&task(), &Node::root(), &profile(), 3000)
            .unwrap();
        assert!(!b.user_text.contains("FATHER CODE"));
        assert!(!b.user_text.contains("FATHER RESULT"));
        assert!(b.user_text.contains(&task().query));
        assert!(b.user_text.contains("caesar_shift("));
        assert!(b.user_text.contains("llm_function("));
        assert!(b.system_text.starts_with("You are a critical reviewer"));
        assert!(b.system_text.contains("submit_answer"));
    }

    #[test]
    fn section_order() {
        let father = failed_father("print(1)", ExecutionOutcome::error("NameError: x", ""));
        let b = PromptBuilder::default().build_prompt(&task(), &father, &profile(), 3000).unwrap();
        let pos = |s: &str| b.user_text.find(s).unwrap();
        assert!(pos("TASK") < pos("FUNCTIONS"));
        assert!(pos("FUNCTIONS") < pos("FATHER CODE"));
        assert!(pos("FATHER CODE") < pos("FATHER RESULT"));
        assert!(b.user_text.contains("print(1)"));
        assert!(b.user_text.contains("NameError: x"));
    }

    #[test]
    fn oversized_trace_is_tail_trimmed_within_budget() {
        // ~10,000 tokens of trace.
        let trace: String = (0..4000)
            .map(|i| format!("  File \"a.py\", line {i}\n"))
            .collect::<String>()
            + "KeyError: 'the last line'";
        assert!(approx_token_count(&trace) > 10_000);
        let father = failed_father("x = lookup()\nsubmit_answer(x)", ExecutionOutcome::error(&trace, ""));
        let b = PromptBuilder::default().build_prompt(&task(), &father, &profile(), 3000).unwrap();
        assert!(b.approx_tokens <= 3000);
        assert!(approx_token_count(&(b.system_text.clone() + &b.user_text)) <= 3000);
        assert!(b.user_text.contains("KeyError: 'the last line'"));
        assert!(b.user_text.contains("x = lookup()\nsubmit_answer(x)"));
        assert!(b.user_text.contains("bytes elided"));
    }

    #[test]
    fn oversized_code_is_trimmed_after_result() {
        let code = "y = 1\n".repeat(5000) + "submit_answer(y)";
        let father = failed_father(&code, ExecutionOutcome::error("ValueError: bad", ""));
        let b = PromptBuilder::default().build_prompt(&task(), &father, &profile(), 1000).unwrap();
        assert!(b.approx_tokens <= 1000);
        assert!(b.user_text.contains("ValueError: bad"));
        assert!(b.user_text.contains("submit_answer(y)"));
        assert!(b.user_text.contains(&task().query));
    }

    #[test]
    fn prompts_are_deterministic() {
        let father = failed_father("1/0", ExecutionOutcome::error("ZeroDivisionError", "out"));
        let builder = PromptBuilder::default();
        let a = builder.build_prompt(&task(), &father, &profile(), 3000).unwrap();
        let b = builder.build_prompt(&task(), &father, &profile(), 3000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_errors() {
        let builder = PromptBuilder::default();
        let bad = SamplingProfile::new("mock:a", 0.2, "poet");
        assert_eq!(
            builder.build_prompt(&task(), &Node::root(), &bad, 3000),
            Err(PromptError::UnknownVariant("poet".into()))
        );
        assert_eq!(
            builder.build_prompt(&task(), &Node::root(), &profile(), 100),
            Err(PromptError::BudgetTooSmall { budget: 100 })
        );
        let mut huge = task();
        huge.query = "q".repeat(10_000);
        assert!(matches!(
            builder.build_prompt(&huge, &Node::root(), &profile(), 512),
            Err(PromptError::FixedPartTooLarge { .. })
        ));
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_completion("Thought: add.\n```\nsubmit_answer('4')\n```").unwrap(),
            ("Thought: add.".to_string(), "submit_answer('4')".to_string())
        );
        let two = "plan\n```python\nfirst()\n```\nmore words\n```python\nsecond()\n```\n";
        assert_eq!(parse_completion(two).unwrap(), ("plan".into(), "first()".into()));
        assert_eq!(parse_completion("just prose, no code"), Err(NoCode));
        assert_eq!(parse_completion("```\nx\n").unwrap(), (String::new(), "x".into()));
    }

    #[test]
    fn variant_library() {
        let lib = VariantLibrary::bundled();
        assert_eq!(lib.names().collect::<Vec<_>>(), ["critic", "engineer", "planner"]);
        assert_eq!(VariantLibrary::parse("[a]\nx"), Err(VariantError::MissingHeader));
        assert_eq!(
            VariantLibrary::parse("# prompt-variants v1\n[a]\nx\n[a]\ny"),
            Err(VariantError::Duplicate("a".into()))
        );
        assert_eq!(
            VariantLibrary::parse("# prompt-variants v1\nstray\n[a]\nx"),
            Err(VariantError::Orphan(2))
        );
        assert_eq!(
            VariantLibrary::parse("# prompt-variants v1\n[a]\n\n[b]\nx"),
            Err(VariantError::Empty("a".into()))
        );
    }

    fn config(models: &[&str], temps: &[f64], variants: &[&str]) -> ToCConfig {
        ToCConfig {
            models: models.iter().map(|s| s.to_string()).collect(),
            temperatures: temps.to_vec(),
            prompt_variants: variants.iter().map(|s| s.to_string()).collect(),
            ..ToCConfig::default()
        }
    }

    #[test]
    fn singleton_product() {
        let cfg = config(&["m:a"], &[0.5], &["engineer"]);
        for layer in 0..4 {
            assert_eq!(
                sample_profiles(&cfg, 1, layer, 2).unwrap(),
                vec![SamplingProfile::new("m:a", 0.5, "engineer")]
            );
        }
    }

    #[test]
    fn product_enumeration_and_rotation() {
        let cfg = config(&["m:a", "m:b"], &[0.1, 0.9], &["engineer"]);
        let p = |m: &str, t: f64| SamplingProfile::new(m, t, "engineer");
        // Product order: (a,.1) (a,.9) (b,.1) (b,.9).
        assert_eq!(
            sample_profiles(&cfg, 3, 0, 0).unwrap(),
            vec![p("m:a", 0.1), p("m:a", 0.9), p("m:b", 0.1)]
        );
        assert_eq!(
            sample_profiles(&cfg, 3, 1, 0).unwrap(),
            vec![p("m:a", 0.9), p("m:b", 0.1), p("m:b", 0.9)]
        );
        assert_eq!(
            sample_profiles(&cfg, 3, 1, 2).unwrap(),
            vec![p("m:b", 0.9), p("m:a", 0.1), p("m:a", 0.9)]
        );
        assert_eq!(
            sample_profiles(&cfg, 5, 0, 0),
            Err(ProfileError { requested: 5, available: 4 })
        );
    }
}
