//! Policy-driven task execution: a bounded step loop with an app
//! guardrail, stale-scroll feedback, periodic completion checkpoints and a
//! ground-truth checker gating every DONE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{CountingPolicy, HistoryEntry, PolicyRequest, Role, N_MAX};
use crate::sim::{Action, ActionKind, ApplyOutcome, CheckResult, SimDevice};
use crate::ui::{UINode, UITree};

pub const STALE_SCROLL_FEEDBACK: &str = "The screen is unchanged after repeated scrolls.";

pub fn verification_feedback(message: &str) -> String {
    format!("Verification FAILED: {message}. The task is NOT complete. Look at the current UI and try again.")
}

/// Identifying features of the node an action targeted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSnapshot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sibling_index: Option<usize>,
}

impl FeatureSnapshot {
    pub fn of(node: &UINode) -> Self {
        let s = |v: &Option<String>| v.clone().filter(|x| !x.is_empty());
        Self {
            resource_id: s(&node.resource_id),
            text: s(&node.text),
            content_desc: s(&node.content_desc),
            class_name: Some(node.class_name.clone()).filter(|c| !c.is_empty()),
            parent_class: s(&node.parent_class),
            // the root has no siblings to be positioned among
            sibling_index: node.parent_class.as_ref().map(|_| node.sibling_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_features: Option<FeatureSnapshot>,
    pub tree_before: UITree,
    #[serde(default)]
    pub reasoning: String,
    pub success: bool,
    /// Action was substituted by the app guardrail.
    #[serde(default)]
    pub overridden: bool,
}

impl TrajectoryStep {
    /// Records `action` against the tree it was issued on.
    pub fn record(action: Action, tree: &UITree, reasoning: impl Into<String>, outcome: ApplyOutcome) -> Self {
        let target_features = if action.kind.targets_element() {
            let flat = tree.flatten();
            Some(action.element_index.and_then(|i| flat.get(i)).map(|n| FeatureSnapshot::of(n)).unwrap_or_default())
        } else {
            None
        };
        Self {
            action,
            target_features,
            tree_before: tree.clone(),
            reasoning: reasoning.into(),
            success: outcome != ApplyOutcome::Rejected,
            overridden: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instruction: String,
    pub steps: Vec<TrajectoryStep>,
    pub verified: bool,
    pub target_app: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopBudget {
    pub n_max: usize,
    pub g_max: usize,
    pub k_retry: usize,
    pub checkpoint_start: usize,
    pub checkpoint_every: usize,
}

impl Default for LoopBudget {
    fn default() -> Self {
        Self { n_max: N_MAX, g_max: 3, k_retry: 2, checkpoint_start: 5, checkpoint_every: 3 }
    }
}

impl LoopBudget {
    /// Accepts only the standard budget.
    pub fn new(
        n_max: usize,
        g_max: usize,
        k_retry: usize,
        checkpoint_start: usize,
        checkpoint_every: usize,
    ) -> Result<Self> {
        let b = Self { n_max, g_max, k_retry, checkpoint_start, checkpoint_every };
        if b == Self::default() {
            Ok(b)
        } else {
            Err(Error::Precondition(format!("non-standard loop budget {b:?}; use LoopBudget::overridden")))
        }
    }

    /// Explicit configuration override. `n_max` is still capped at the
    /// request-history bound.
    pub fn overridden(
        n_max: usize,
        g_max: usize,
        k_retry: usize,
        checkpoint_start: usize,
        checkpoint_every: usize,
    ) -> Self {
        Self { n_max: n_max.min(N_MAX), g_max, k_retry, checkpoint_start, checkpoint_every: checkpoint_every.max(1) }
    }

    fn is_checkpoint(&self, step: usize) -> bool {
        step >= self.checkpoint_start && (step - self.checkpoint_start).is_multiple_of(self.checkpoint_every)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorContext {
    pub completed_steps: Vec<TrajectoryStep>,
    pub origin_skill: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EpisodeOutcome {
    Success,
    FailStepLimit,
    FailPolicy,
    FailChecker,
}

/// What the episode is for: the checker to consult and the app the
/// guardrail keeps the policy inside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub target_app: String,
    #[serde(default)]
    pub expected: BTreeMap<String, String>,
}

impl TaskSpec {
    /// Looks up the target app from the checker registry of `device`.
    pub fn for_device(device: &SimDevice, task_id: &str, expected: BTreeMap<String, String>) -> Result<Self> {
        let target_app = device
            .task_app(task_id)
            .ok_or_else(|| Error::Precondition(format!("no checker registered for task '{task_id}'")))?;
        Ok(Self { task_id: task_id.to_string(), target_app: target_app.to_string(), expected })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTraceRecord {
    pub step: usize,
    pub action: Action,
    pub overridden: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<CheckResult>,
    pub counter_snapshot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub outcome: EpisodeOutcome,
    pub trace: Vec<EpisodeTraceRecord>,
    pub policy_calls: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Orchestrator {
    pub budget: LoopBudget,
}

struct Episode {
    steps: Vec<TrajectoryStep>,
    history: Vec<HistoryEntry>,
    trace: Vec<EpisodeTraceRecord>,
}

impl Episode {
    fn push(&mut self, step: TrajectoryStep, checker: Option<CheckResult>, calls: u64) {
        self.trace.push(EpisodeTraceRecord {
            step: self.steps.len() + 1,
            action: step.action.clone(),
            overridden: step.overridden,
            checker,
            counter_snapshot: calls,
        });
        self.history.push(HistoryEntry { action: step.action.clone(), reasoning: step.reasoning.clone() });
        self.steps.push(step);
    }

    fn windowed_history(&self) -> Vec<HistoryEntry> {
        let skip = self.history.len().saturating_sub(N_MAX - 1);
        self.history[skip..].to_vec()
    }
}

impl Orchestrator {
    pub fn new(budget: LoopBudget) -> Self {
        Self { budget }
    }

    /// Runs one episode. With `prior`, the replayed steps are kept at the
    /// front of the trajectory, shown to the policy as history and charged
    /// against the step budget.
    pub fn execute(
        &self,
        device: &mut SimDevice,
        policy: &mut CountingPolicy,
        instruction: &str,
        task: &TaskSpec,
        prior: Option<&PriorContext>,
    ) -> EpisodeResult {
        let calls_at_start = policy.calls();
        let steps = prior.map(|p| p.completed_steps.clone()).unwrap_or_default();
        let history = steps
            .iter()
            .map(|s| HistoryEntry {
                action: s.action.clone(),
                reasoning: format!("already done by replay: {}", s.reasoning),
            })
            .collect();
        let fresh_budget = self.budget.n_max.saturating_sub(steps.len());
        let mut ep = Episode { steps, history, trace: Vec::new() };
        let outcome = self.run_loop(device, policy, &mut ep, instruction, task, fresh_budget);
        EpisodeResult {
            trajectory: Trajectory {
                instruction: instruction.to_string(),
                steps: ep.steps,
                verified: outcome == EpisodeOutcome::Success,
                target_app: task.target_app.clone(),
            },
            outcome,
            trace: ep.trace,
            policy_calls: policy.calls() - calls_at_start,
        }
    }

    fn run_loop(
        &self,
        device: &mut SimDevice,
        policy: &mut CountingPolicy,
        ep: &mut Episode,
        instruction: &str,
        task: &TaskSpec,
        fresh_budget: usize,
    ) -> EpisodeOutcome {
        let mut feedback: Option<String> = None;
        let mut overrides_in_a_row = 0;
        let mut rejected_dones = 0;
        let mut stale_scrolls = 0;
        for _ in 0..fresh_budget {
            let tree = device.capture();
            let mut req = PolicyRequest::new(Role::StepDecide, instruction, tree.clone());
            req.history = ep.windowed_history();
            req.feedback = feedback.take();
            let resp = match policy.decide(&req) {
                Ok(r) => r,
                Err(_) => return EpisodeOutcome::FailPolicy,
            };
            let mut action = resp.action;
            let mut reasoning = resp.reasoning;
            if action.kind == ActionKind::Fail {
                let step = TrajectoryStep::record(action, &tree, reasoning, ApplyOutcome::Unchanged);
                ep.push(step, None, policy.calls());
                return EpisodeOutcome::FailPolicy;
            }
            let mut overridden = false;
            let exempt = matches!(action.kind, ActionKind::Launch | ActionKind::Back | ActionKind::Done);
            if tree.foreground_app != task.target_app && !exempt {
                if overrides_in_a_row == self.budget.g_max {
                    return EpisodeOutcome::FailPolicy;
                }
                overrides_in_a_row += 1;
                overridden = true;
                reasoning = format!("guardrail: foreground app '{}' is not '{}'", tree.foreground_app, task.target_app);
                action = Action::launch(task.target_app.clone());
            } else {
                overrides_in_a_row = 0;
            }

            if action.kind == ActionKind::Done {
                let check = device.run_checker(&task.task_id, &task.expected);
                let verified = check.is_verified();
                let message = check.message.clone();
                let step = TrajectoryStep::record(action, &tree, reasoning, ApplyOutcome::Unchanged);
                ep.push(step, Some(check), policy.calls());
                if verified {
                    return EpisodeOutcome::Success;
                }
                rejected_dones += 1;
                if rejected_dones > self.budget.k_retry {
                    return EpisodeOutcome::FailChecker;
                }
                feedback = Some(verification_feedback(&message));
                continue;
            }

            let outcome = device.apply(&action);
            if action.kind == ActionKind::Scroll && outcome == ApplyOutcome::Unchanged {
                stale_scrolls += 1;
                if stale_scrolls >= 2 {
                    feedback = Some(STALE_SCROLL_FEEDBACK.to_string());
                    stale_scrolls = 0;
                }
            } else {
                stale_scrolls = 0;
            }
            let mut step = TrajectoryStep::record(action, &tree, reasoning, outcome);
            step.overridden = overridden;
            let n = ep.steps.len() + 1;
            if self.budget.is_checkpoint(n) {
                let check = device.run_checker(&task.task_id, &task.expected);
                let verified = check.is_verified();
                ep.push(step, Some(check), policy.calls());
                if verified {
                    return EpisodeOutcome::Success;
                }
            } else {
                ep.push(step, None, policy.calls());
            }
        }
        EpisodeOutcome::FailStepLimit
    }
}
