//! Scripted scenarios shared by the integration tests.
//!
//! A `Policy` decides each node's behavior from its path (the product
//! indices of the profiles from the root down) and its profile. Every
//! completion it writes ends its code with a `# path:` line (the tail is what
//! survives prompt trimming), so a child's request reveals where in the tree
//! it sits.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use toc_core::codegen::{PromptBuilder, SamplingProfile};
use toc_core::gateway::scripted::RecordingBackend;
use toc_core::gateway::{CompletionBackend, CompletionRequest, Gateway, GatewayError};
use toc_core::harness::{Engine, Mode, TaskResult, Trace};
use toc_core::mock::MockScript;
use toc_core::sandbox::fake::{FakeBehavior, FakeRunnerFactory, FakeScript, Submit};
use toc_core::sandbox::ExecLimits;
use toc_core::task::{Matcher, TaskSpec};
use toc_core::tree::ToCConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Answer(String),
    Raise(String),
    /// Runs fine but never submits.
    Silent,
    NoCode,
    /// Submits whatever the nested call returns.
    AskLlm(String),
    Crash,
    /// Padding bytes appended to the code, stdout or trace.
    Bulky { code: usize, stdout: usize, trace: usize },
}

pub struct NodeView<'a> {
    pub task_query: &'a str,
    pub path: Vec<usize>,
    pub profile: &'a SamplingProfile,
    pub profile_index: usize,
}

impl NodeView<'_> {
    pub fn depth(&self) -> usize {
        self.path.len()
    }
}

/// Path element standing in for a father that left no code behind.
pub const ORPHAN: usize = 999;

type Decide = dyn Fn(&NodeView) -> Action + Send + Sync;
type Reply = dyn Fn(&str) -> String + Send + Sync;

#[derive(Clone)]
pub struct Policy {
    config: ToCConfig,
    decide: Arc<Decide>,
    llm: Arc<Reply>,
    judge: Arc<Reply>,
    behaviors: Arc<Mutex<BTreeMap<String, FakeBehavior>>>,
    /// Largest prompt seen, in approximate tokens, counted independently of
    /// the prompt builder.
    pub max_prompt_tokens: Arc<Mutex<usize>>,
}

pub fn profile_index(config: &ToCConfig, profile: &SamplingProfile) -> usize {
    let mut index = 0;
    for m in &config.models {
        for t in &config.temperatures {
            for v in &config.prompt_variants {
                if *m == profile.model && *t == profile.temperature && *v == profile.prompt_variant {
                    return index;
                }
                index += 1;
            }
        }
    }
    panic!("profile {profile:?} is not in the config product")
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

fn render_path(path: &[usize]) -> String {
    path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("/")
}

fn parse_path(line: &str) -> Vec<usize> {
    line.split('/').filter(|s| !s.is_empty()).map(|s| s.parse().expect("path element")).collect()
}

impl Policy {
    pub fn new(config: &ToCConfig, decide: impl Fn(&NodeView) -> Action + Send + Sync + 'static) -> Self {
        Self {
            config: config.clone(),
            decide: Arc::new(decide),
            llm: Arc::new(|prompt| format!("reply to {prompt}")),
            judge: Arc::new(|_| "1".to_string()),
            behaviors: Arc::default(),
            max_prompt_tokens: Arc::default(),
        }
    }

    pub fn with_llm(mut self, reply: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        self.llm = Arc::new(reply);
        self
    }

    pub fn with_judge(mut self, reply: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        self.judge = Arc::new(reply);
        self
    }

    fn generate(&self, request: &CompletionRequest) -> String {
        let user = &request.user_text;
        let task_query = between(user, "TASK\n", "\n\nFUNCTIONS").expect("task section");
        let mut path = match between(user, "FATHER CODE\n```python\n", "\n```\n\nFATHER RESULT") {
            Some(code) => match code.rfind("# path: ") {
                Some(at) => parse_path(code[at + "# path: ".len()..].trim_end()),
                // The father wrote no code, so nothing identifies it.
                None => vec![ORPHAN],
            },
            None => Vec::new(),
        };
        let profile_index = profile_index(&self.config, &request.profile);
        path.push(profile_index);
        let view = NodeView {
            task_query,
            path: path.clone(),
            profile: &request.profile,
            profile_index,
        };
        let action = (self.decide)(&view);
        let (body, behavior) = match action {
            Action::NoCode => return format!("I am not sure how to proceed with {}.", render_path(&path)),
            Action::Answer(a) => (format!("submit_answer({a:?})"), FakeBehavior::answer(&a)),
            Action::Raise(e) => (
                format!("raise RuntimeError({e:?})"),
                FakeBehavior::raise(&format!(
                    "Traceback (most recent call last):\n  File \"<action>\", line 2, in <module>\nRuntimeError: {e}"
                )),
            ),
            Action::Silent => (
                "print('working')".to_string(),
                FakeBehavior {
                    stdout: "working\n".into(),
                    ..FakeBehavior::default()
                },
            ),
            Action::AskLlm(prompt) => (
                format!("submit_answer(llm_function({prompt:?}))"),
                FakeBehavior {
                    llm_prompts: vec![prompt],
                    submit: Some(Submit::LastLlmReply),
                    ..FakeBehavior::default()
                },
            ),
            Action::Crash => (
                "import os\nos._exit(1)".to_string(),
                FakeBehavior {
                    crash: true,
                    ..FakeBehavior::default()
                },
            ),
            Action::Bulky { code, stdout, trace } => {
                let filler: String = (0..code / 40 + 1)
                    .map(|i| format!("x_{i:05} = {i} * 2  # intermediate value\n"))
                    .collect();
                (
                    format!("{filler}raise ValueError('bulky')"),
                    FakeBehavior {
                        stdout: "step output line\n".repeat(stdout / 17 + 1),
                        raise: Some(format!(
                            "Traceback (most recent call last):\n{}ValueError: bulky",
                            "  File \"<action>\", line 9, in helper\n".repeat(trace / 38 + 1)
                        )),
                        ..FakeBehavior::default()
                    },
                )
            }
        };
        let code = format!("{body}\n# path: {}", render_path(&path));
        self.behaviors.lock().unwrap().insert(code.clone(), behavior);
        format!("Node {} tries a direct program.\n```python\n{code}\n```", render_path(&path))
    }

    pub fn backend(&self) -> Arc<dyn CompletionBackend> {
        let policy = self.clone();
        Arc::new(move |request: &CompletionRequest| -> Result<String, GatewayError> {
            if request.system_text.is_empty() {
                return Ok((policy.llm)(&request.user_text));
            }
            if request.system_text.contains("judge") {
                return Ok((policy.judge)(&request.user_text));
            }
            let tokens = (request.system_text.len() + request.user_text.len()).div_ceil(4);
            let mut max = policy.max_prompt_tokens.lock().unwrap();
            *max = (*max).max(tokens);
            drop(max);
            Ok(policy.generate(request))
        })
    }

    pub fn runners(&self) -> FakeRunnerFactory {
        let behaviors = Arc::clone(&self.behaviors);
        FakeRunnerFactory::from_source(Arc::new(move |code: &str| behaviors.lock().unwrap().get(code).cloned()))
    }

    /// Runner script for every code string generated so far.
    pub fn fake_script(&self) -> FakeScript {
        let mut script = FakeScript::default();
        for (code, behavior) in self.behaviors.lock().unwrap().iter() {
            script.insert(code, behavior.clone());
        }
        script
    }
}

pub fn task(id: &str, expected: &str) -> TaskSpec {
    TaskSpec {
        task_id: id.into(),
        query: format!("Scripted question {id}."),
        tool_pack: "basic".into(),
        expected_answer: expected.into(),
        matcher: Matcher::Normalized,
        task_args: BTreeMap::new(),
    }
}

/// One task under `policy`, returning its result and trace.
pub fn run_one(policy: &Policy, config: &ToCConfig, task: &TaskSpec, mode: Mode) -> (TaskResult, Trace) {
    let gateway = Gateway::scripted(policy.backend(), &config.models);
    let runners = policy.runners();
    let prompts = PromptBuilder::default();
    let engine = Engine {
        gateway: &gateway,
        runners: &runners,
        prompts: &prompts,
        limits: ExecLimits::default(),
    };
    let mut trace = Trace::in_memory();
    let result = engine.run(mode, task, config, &mut trace);
    (result, trace)
}

pub fn scenario(config: &ToCConfig, name: &str) -> Policy {
    match name {
        "S1" => Policy::new(config, |_| Action::Answer("A".into())),
        "S2" => Policy::new(config, |v| match v.depth() {
            1 => Action::Raise("layer one always fails".into()),
            _ if v.profile.prompt_variant == "critic" => Action::Answer("B".into()),
            _ => Action::Answer("A".into()),
        }),
        "S3" => Policy::new(config, |v| Action::Raise(format!("fails at depth {}", v.depth()))),
        other => panic!("unknown scenario {other}"),
    }
}

/// Behavior table for the bundled desk suite, by task, depth and variant.
pub fn desk_policy(config: &ToCConfig) -> Policy {
    Policy::new(config, |v| {
        let q = v.task_query;
        let d = v.depth();
        let variant = v.profile.prompt_variant.as_str();
        let answer = |a: &str| Action::Answer(a.to_string());
        let raise = |e: &str| Action::Raise(e.to_string());
        if q.contains("17 * 23") {
            answer("402")
        } else if q.contains("Divide 144") {
            match variant {
                "engineer" if d == 1 => raise("TypeError: unsupported operand type(s) for +: 'int' and 'str'"),
                "planner" | "engineer" => answer("140"),
                _ => answer("140.0"),
            }
        } else if q.contains("0.1 and 0.2") {
            match d {
                1 => raise("ZeroDivisionError: division by zero"),
                _ if variant == "critic" => answer("3.0000001"),
                _ => answer("3"),
            }
        } else if q.contains("Khoor") {
            match variant {
                "critic" if d == 1 => Action::NoCode,
                "planner" | "critic" => answer("Hello World."),
                _ => answer("hello world"),
            }
        } else if q.contains("emspx") {
            match d {
                1 => raise("NameError: name 'reverse' is not defined"),
                2 => Action::Silent,
                _ => answer("hello world"),
            }
        } else if q.contains("capital") {
            answer("Canberra")
        } else if q.contains("Iceland") {
            match variant {
                "critic" => answer("380"),
                _ => answer("372"),
            }
        } else if q.contains("5 miles") {
            match d {
                1 => raise("KeyError: 'mi'"),
                _ => answer("8.047"),
            }
        } else if q.contains("100 degrees") {
            answer("100")
        } else if q.contains("Red Planet") {
            Action::AskLlm("Which planet is known as the Red Planet? Answer with one word.".into())
        } else {
            panic!("desk policy has no entry for query {q:?}")
        }
    })
    .with_llm(|prompt| if prompt.contains("Red Planet") { "Mars".into() } else { "unknown".into() })
}

/// Records a mock script covering both modes of `tasks` under `policy`.
pub fn record_mock(policy: &Policy, config: &ToCConfig, tasks: &[TaskSpec]) -> MockScript {
    let recorder = Arc::new(RecordingBackend::new(policy.backend()));
    let gateway = Gateway::scripted(recorder.clone(), &config.models);
    let runners = policy.runners();
    let prompts = PromptBuilder::default();
    let engine = Engine {
        gateway: &gateway,
        runners: &runners,
        prompts: &prompts,
        limits: ExecLimits::default(),
    };
    for mode in [Mode::Tree, Mode::Baseline] {
        for task in tasks {
            let result = engine.run(mode, task, config, &mut Trace::in_memory());
            assert!(result.error.is_none(), "{:?}", result.error);
        }
    }
    MockScript::new(recorder.entries(), policy.fake_script())
}
