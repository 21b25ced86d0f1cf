//! The per-task loops: layer-synchronous tree search and the linear baseline.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::codegen::{parse_completion, sample_profiles, PromptBuilder, SamplingProfile};
use crate::gateway::{CompletionRequest, Gateway};
use crate::sandbox::{execute, ExecLimits, ExecutionOutcome, RunnerFactory, NO_CODE};
use crate::task::{check_answer, TaskSpec};
use crate::tree::{init_tree, outcome_status, Node, NodeId, NodeStatus, ToCConfig};
use crate::voting::{finalize_answer, majority_vote, Judge, VoteResult};

use super::trace::{Mode, TaskResult, Trace, TraceEvent};

/// Everything one task needs besides its config.
pub struct Engine<'a> {
    pub gateway: &'a Gateway,
    pub runners: &'a dyn RunnerFactory,
    pub prompts: &'a PromptBuilder,
    pub limits: ExecLimits,
}

struct Job {
    node_id: NodeId,
    father: Node,
    profile: SamplingProfile,
}

struct NodeRun {
    prompt_fingerprint: String,
    approx_tokens: usize,
    completion: String,
    thought: String,
    action_code: String,
    outcome: ExecutionOutcome,
}

impl NodeRun {
    fn trace(&self, node_id: NodeId, trace: &mut Trace) {
        trace.push(TraceEvent::Generation {
            node_id,
            prompt_fingerprint: self.prompt_fingerprint.clone(),
            approx_tokens: self.approx_tokens,
            completion: self.completion.clone(),
        });
        trace.push(TraceEvent::Execution {
            node_id,
            thought: self.thought.clone(),
            action_code: self.action_code.clone(),
            outcome: self.outcome.clone(),
            status: outcome_status(&self.outcome),
        });
    }
}

/// Generation and judge counts, plus nested calls made by action code.
#[derive(Default)]
struct Tally {
    generations: usize,
    in_code: usize,
}

impl Tally {
    fn add(&mut self, run: &NodeRun) {
        self.generations += 1;
        self.in_code += run.outcome.llm_calls as usize;
    }
}

impl Engine<'_> {
    fn run_node(&self, task: &TaskSpec, config: &ToCConfig, job: &Job) -> Result<NodeRun, String> {
        let bundle = self
            .prompts
            .build_prompt(task, &job.father, &job.profile, config.token_budget)
            .map_err(|e| format!("prompt for node {}: {e}", job.node_id))?;
        let request = CompletionRequest {
            profile: job.profile.clone(),
            system_text: bundle.system_text,
            user_text: bundle.user_text,
            max_output_tokens: config.max_output_tokens,
        };
        let completion = self
            .gateway
            .complete(&request)
            .map_err(|e| format!("generation for node {}: {e}", job.node_id))?;
        let mut run = NodeRun {
            prompt_fingerprint: request.fingerprint(),
            approx_tokens: bundle.approx_tokens,
            completion,
            thought: String::new(),
            action_code: String::new(),
            outcome: ExecutionOutcome::error(NO_CODE, ""),
        };
        match parse_completion(&run.completion) {
            Ok((thought, code)) => {
                run.thought = thought;
                run.action_code = code;
            }
            Err(no_code) => {
                run.thought = run.completion.trim().to_string();
                run.outcome = ExecutionOutcome::error(&no_code.to_string(), "");
                return Ok(run);
            }
        }

        let mut runner = self
            .runners
            .spawn()
            .map_err(|e| format!("runner for node {}: {e}", job.node_id))?;
        let bridge = |prompt: &str| {
            self.gateway
                .llm_function_call(prompt, &job.profile, config.max_output_tokens)
                .map_err(|e| e.to_string())
        };
        run.outcome = execute(
            runner.as_mut(),
            &run.action_code,
            &task.tool_pack,
            &task.task_args,
            &self.limits,
            &bridge,
        );
        runner.shutdown();
        Ok(run)
    }

    /// Runs a layer's jobs on up to `workers` threads; results come back in
    /// job order regardless of completion order.
    fn run_layer(&self, task: &TaskSpec, config: &ToCConfig, jobs: &[Job]) -> Vec<Result<NodeRun, String>> {
        let workers = config.worker_cap().clamp(1, jobs.len().max(1));
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    if tx.send((i, self.run_node(task, config, job))).is_err() {
                        break;
                    }
                });
            }
        });
        drop(tx);
        let mut results: Vec<_> = rx.into_iter().collect();
        results.sort_by_key(|(i, _)| *i);
        results.into_iter().map(|(_, r)| r).collect()
    }

    fn judge_profile(config: &ToCConfig) -> Option<SamplingProfile> {
        sample_profiles(config, 1, 0, 0).ok()?.into_iter().next()
    }

    fn start(task: &TaskSpec, config: &ToCConfig, mode: Mode, trace: &mut Trace) {
        trace.push(TraceEvent::TaskStart {
            task: task.clone(),
            mode,
            max_depth: config.max_depth,
            branching: config.branching,
            judge_enabled: config.judge_enabled,
        });
    }

    fn abort(task: &TaskSpec, turns: usize, nodes_created: usize, tally: &Tally, error: String, trace: &mut Trace) -> TaskResult {
        tracing::warn!(task = %task.task_id, %error, "task aborted");
        let result = TaskResult {
            task_id: task.task_id.clone(),
            final_answer: None,
            correct: false,
            turns,
            nodes_created,
            llm_generations: tally.generations + tally.in_code,
            error: Some(error),
        };
        trace.push(TraceEvent::TaskEnd { result: result.clone() });
        result
    }

    fn vote_event(pool: &[(NodeId, String)], vote: &VoteResult, judge_called: bool) -> TraceEvent {
        let winner = vote.winner.as_deref().map(crate::voting::normalize_answer);
        let (accepted, discarded) = pool
            .iter()
            .partition::<Vec<_>, _>(|(_, a)| Some(crate::voting::normalize_answer(a)) == winner);
        TraceEvent::Vote {
            vote: vote.clone(),
            judge_called,
            accepted: accepted.into_iter().map(|(id, _)| *id).collect(),
            discarded: discarded.into_iter().map(|(id, _)| *id).collect(),
        }
    }

    /// Tree search on one task. Infrastructure failures end the task with a
    /// diagnostic result instead of an error.
    pub fn run_task(&self, task: &TaskSpec, config: &ToCConfig, trace: &mut Trace) -> TaskResult {
        Self::start(task, config, Mode::Tree, trace);
        let mut tally = Tally::default();
        let mut tree = match init_tree(task, config) {
            Ok(tree) => tree,
            Err(e) => return Self::abort(task, 0, 0, &tally, e.to_string(), trace),
        };

        loop {
            let frontier = tree.frontier();
            if frontier.is_empty() {
                break;
            }
            let mut jobs = Vec::new();
            for (ordinal, &father_id) in frontier.iter().enumerate() {
                let father = tree.nodes[father_id].clone();
                let profiles = match sample_profiles(config, config.branching, father.depth, ordinal) {
                    Ok(p) => p,
                    Err(e) => {
                        return Self::abort(task, tree.layers_expanded, tree.nodes_created(), &tally, e.to_string(), trace)
                    }
                };
                let ids = match tree.expand_node(father_id, &profiles) {
                    Ok(ids) => ids,
                    Err(e) => {
                        return Self::abort(task, tree.layers_expanded, tree.nodes_created(), &tally, e.to_string(), trace)
                    }
                };
                for (node_id, profile) in ids.into_iter().zip(profiles) {
                    trace.push(TraceEvent::NodeCreated {
                        node_id,
                        parent: father_id,
                        depth: father.depth + 1,
                        profile: profile.clone(),
                    });
                    jobs.push(Job {
                        node_id,
                        father: father.clone(),
                        profile,
                    });
                }
            }
            let depth = jobs[0].father.depth + 1;

            let results = self.run_layer(task, config, &jobs);
            let mut failure = None;
            for (job, result) in jobs.iter().zip(results) {
                match result {
                    Ok(run) => {
                        tally.add(&run);
                        run.trace(job.node_id, trace);
                        tree.record_outcome(job.node_id, run.thought, run.action_code, run.outcome)
                            .expect("fresh child accepts its outcome");
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = failure {
                return Self::abort(task, depth, tree.nodes_created(), &tally, e, trace);
            }
            trace.push(TraceEvent::LayerDone { depth });
        }

        let pool = tree.candidate_pool();
        let judge_profile = Self::judge_profile(config);
        let judge = |options: &[String]| -> Result<String, String> {
            let profile = judge_profile.as_ref().ok_or("no judge profile")?;
            self.gateway.judge_vote(options, profile).map_err(|e| e.to_string())
        };
        let finalized = finalize_answer(&pool, config.judge_enabled.then_some(&judge as &dyn Judge));
        trace.push(Self::vote_event(&pool, &finalized.vote, finalized.judge_called));

        let result = TaskResult {
            task_id: task.task_id.clone(),
            correct: finalized
                .final_answer
                .as_deref()
                .is_some_and(|a| check_answer(task, a)),
            final_answer: finalized.final_answer,
            turns: tree.layers_expanded,
            nodes_created: tree.nodes_created(),
            llm_generations: tally.generations + tally.in_code + usize::from(finalized.judge_called),
            error: None,
        };
        trace.push(TraceEvent::TaskEnd { result: result.clone() });
        result
    }

    /// One attempt per turn, each seeing only the previous attempt, until one
    /// succeeds or `max_turns` is reached.
    pub fn run_baseline(&self, task: &TaskSpec, config: &ToCConfig, trace: &mut Trace) -> TaskResult {
        Self::start(task, config, Mode::Baseline, trace);
        let mut tally = Tally::default();
        if let Err(e) = config.validate() {
            return Self::abort(task, 0, 0, &tally, e.to_string(), trace);
        }

        let mut father = Node::root();
        let mut answer = None;
        let mut turns = 0;
        for turn in 1..=config.max_turns {
            let profile = match sample_profiles(config, 1, turn - 1, 0) {
                Ok(mut p) => p.remove(0),
                Err(e) => return Self::abort(task, turns, turns, &tally, e.to_string(), trace),
            };
            trace.push(TraceEvent::NodeCreated {
                node_id: turn,
                parent: father.node_id,
                depth: turn,
                profile: profile.clone(),
            });
            let job = Job {
                node_id: turn,
                father,
                profile,
            };
            turns = turn;
            let run = match self.run_node(task, config, &job) {
                Ok(run) => run,
                Err(e) => return Self::abort(task, turns, turns, &tally, e, trace),
            };
            tally.add(&run);
            run.trace(turn, trace);
            trace.push(TraceEvent::LayerDone { depth: turn });
            let status = outcome_status(&run.outcome);
            let node = Node {
                node_id: turn,
                parent_id: Some(job.father.node_id),
                depth: turn,
                profile: Some(job.profile),
                thought: run.thought,
                action_code: run.action_code,
                outcome: Some(run.outcome),
                status,
            };
            if status == NodeStatus::Success {
                answer = node.outcome.as_ref().and_then(|o| o.answer.clone());
                father = node;
                break;
            }
            father = node;
        }

        let pool: Vec<(NodeId, String)> = answer.iter().map(|a| (father.node_id, a.clone())).collect();
        let vote = majority_vote(&pool);
        trace.push(Self::vote_event(&pool, &vote, false));
        let result = TaskResult {
            task_id: task.task_id.clone(),
            correct: answer.as_deref().is_some_and(|a| check_answer(task, a)),
            final_answer: answer,
            turns,
            nodes_created: turns,
            llm_generations: tally.generations + tally.in_code,
            error: None,
        };
        trace.push(TraceEvent::TaskEnd { result: result.clone() });
        result
    }

    pub fn run(&self, mode: Mode, task: &TaskSpec, config: &ToCConfig, trace: &mut Trace) -> TaskResult {
        match mode {
            Mode::Tree => self.run_task(task, config, trace),
            Mode::Baseline => self.run_baseline(task, config, trace),
        }
    }
}
