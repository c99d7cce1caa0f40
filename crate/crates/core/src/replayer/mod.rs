//! Mechanical replay of a compiled skill: per-step state verification,
//! weighted element finding, dialog auto-dismissal, step skipping and a
//! bounded number of single-step policy fallbacks.

mod locate;

use std::collections::{BTreeMap, VecDeque};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::compiler::{substitute, SkillTemplate};
use crate::error::Result;
use crate::orchestrator::{TaskSpec, TrajectoryStep};
use crate::policy::{CountingPolicy, HistoryEntry, PolicyRequest, Role, N_MAX};
use crate::sim::{Action, ActionKind, ApplyOutcome, CheckResult, SimDevice};
use crate::ui::{make_descriptor, UIStateDescriptor, UITree};

pub use locate::{find_element, score_element, score_parts, Score, Threshold};

pub const DEFAULT_DISMISS_KEYWORDS: [&str; 7] = ["allow", "ok", "skip", "got it", "accept", "dismiss", "not now"];

/// How many following steps step skipping looks at.
pub const SKIP_LOOKAHEAD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    None,
    Minor,
    Moderate,
    Major,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub severity: Severity,
    pub detail: String,
}

impl DeviationReport {
    fn new(severity: Severity, detail: impl Into<String>) -> Self {
        Self { severity, detail: detail.into() }
    }
}

/// Classifies how far `tree` is from the state a step expects.
///
/// A foreground mismatch only counts as MAJOR when the expected screen is
/// not the one showing; a step recorded on the launcher therefore verifies
/// against the launcher.
pub fn verify_state(tree: &UITree, expected: &UIStateDescriptor, target_app: &str) -> DeviationReport {
    if tree.foreground_app != target_app && tree.activity != expected.activity {
        return DeviationReport::new(
            Severity::Major,
            format!("foreground app is '{}', expected '{target_app}'", tree.foreground_app),
        );
    }
    let unexpected = tree
        .dialogs()
        .into_iter()
        .find(|d| d.resource_id.as_ref().is_none_or(|id| !expected.key_element_ids.contains(id)));
    if let Some(d) = unexpected {
        return DeviationReport::new(
            Severity::Moderate,
            format!("unexpected dialog '{}'", d.resource_id.as_deref().unwrap_or("?")),
        );
    }
    let present = expected.present_in(tree);
    if tree.activity == expected.activity && present * 2 < expected.key_element_ids.len() {
        return DeviationReport::new(
            Severity::Minor,
            format!("{present} of {} key elements present", expected.key_element_ids.len()),
        );
    }
    DeviationReport::new(Severity::None, "")
}

/// Finds and taps dismiss-like buttons inside dialogs.
#[derive(Debug, Clone)]
pub struct Dismisser {
    pattern: Regex,
}

impl Default for Dismisser {
    fn default() -> Self {
        Self::new(&DEFAULT_DISMISS_KEYWORDS).expect("default keywords are valid")
    }
}

impl Dismisser {
    pub fn new<S: AsRef<str>>(keywords: &[S]) -> Result<Self> {
        let alts: Vec<String> = keywords.iter().map(|k| regex::escape(k.as_ref())).collect();
        Ok(Self { pattern: Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|")))? })
    }

    pub fn matches(&self, text: &str) -> bool {
        self.pattern.is_match(text)
    }

    /// BFS index of the first clickable dialog node whose text matches.
    pub fn find(&self, tree: &UITree) -> Option<usize> {
        tree.dialogs().into_iter().find_map(|d| {
            let mut queue = VecDeque::from([d]);
            while let Some(n) = queue.pop_front() {
                if n.clickable && n.text.as_deref().is_some_and(|t| self.matches(t)) {
                    return Some(n.node_id);
                }
                queue.extend(n.children.iter());
            }
            None
        })
    }

    /// Taps the first dismiss-like button. Never consults a policy.
    pub fn try_dismiss(&self, device: &mut SimDevice, tree: &UITree) -> Option<Action> {
        let idx = self.find(tree)?;
        let action = Action::tap(idx);
        (device.apply(&action) != ApplyOutcome::Rejected).then_some(action)
    }
}

pub fn try_dismiss(device: &mut SimDevice, tree: &UITree) -> bool {
    Dismisser::default().try_dismiss(device, tree).is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayBudget {
    pub b_consec: u32,
    pub b_total: u32,
}

impl Default for ReplayBudget {
    fn default() -> Self {
        Self { b_consec: 2, b_total: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplayStatus {
    Completed,
    FellBack,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTraceRecord {
    pub step: usize,
    pub severity: Severity,
    pub found_score: Option<f64>,
    pub skipped: bool,
    pub fallback: bool,
}

/// Where and how a replay stopped short.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFailure {
    pub step_index: usize,
    pub severity: Severity,
    pub descriptor_at_failure: UIStateDescriptor,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub status: ReplayStatus,
    /// Every action the device received, including auto-dismissals.
    pub executed_steps: Vec<TrajectoryStep>,
    pub skipped_step_indices: Vec<usize>,
    pub fallback_calls: u32,
    pub policy_calls: u64,
    pub dismissals: u32,
    pub trace: Vec<ReplayTraceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ReplayFailure>,
    /// Checker result, present when the skeleton completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<CheckResult>,
}

impl ReplayOutcome {
    pub fn verified(&self) -> bool {
        self.status == ReplayStatus::Completed && self.checker.as_ref().is_some_and(CheckResult::is_verified)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Replayer {
    pub budget: ReplayBudget,
    pub dismisser: Dismisser,
}

struct Run<'a> {
    skill: &'a SkillTemplate,
    bindings: &'a BTreeMap<String, String>,
    out: ReplayOutcome,
    consec: u32,
}

impl Run<'_> {
    fn fail(&mut self, status: ReplayStatus, step: usize, severity: Severity, tree: &UITree, detail: String) {
        self.out.status = status;
        self.out.failure =
            Some(ReplayFailure { step_index: step, severity, descriptor_at_failure: make_descriptor(tree), detail });
    }

    fn trace(&mut self, step: usize, severity: Severity, found_score: Option<f64>, skipped: bool, fallback: bool) {
        self.out.trace.push(ReplayTraceRecord { step, severity, found_score, skipped, fallback });
    }

    fn history(&self) -> Vec<HistoryEntry> {
        let steps = &self.out.executed_steps;
        let skip = steps.len().saturating_sub(N_MAX - 1);
        steps[skip..]
            .iter()
            .map(|s| HistoryEntry { action: s.action.clone(), reasoning: s.reasoning.clone() })
            .collect()
    }

    /// True when a later step is already reachable from here.
    fn can_skip(&self, t: usize, tree: &UITree) -> bool {
        let steps = &self.skill.steps;
        let Some(next) = steps.get(t + 1) else {
            return false;
        };
        if !next.descriptor.satisfied_by(tree) {
            return false;
        }
        steps[t + 1..steps.len().min(t + 1 + SKIP_LOOKAHEAD)].iter().any(|s| {
            s.locator.as_ref().is_some_and(|l| find_element(tree, l, Threshold::Strict, self.bindings).is_some())
        })
    }
}

impl Replayer {
    pub fn new(budget: ReplayBudget, dismisser: Dismisser) -> Self {
        Self { budget, dismisser }
    }

    pub fn replay(
        &self,
        device: &mut SimDevice,
        policy: &mut CountingPolicy,
        skill: &SkillTemplate,
        bindings: &BTreeMap<String, String>,
        task: &TaskSpec,
    ) -> ReplayOutcome {
        let calls_at_start = policy.calls();
        let mut run = Run {
            skill,
            bindings,
            out: ReplayOutcome {
                status: ReplayStatus::Completed,
                executed_steps: Vec::new(),
                skipped_step_indices: Vec::new(),
                fallback_calls: 0,
                policy_calls: 0,
                dismissals: 0,
                trace: Vec::new(),
                failure: None,
                checker: None,
            },
            consec: 0,
        };
        let instruction = substitute(&skill.intent_pattern, bindings);
        let mut t = 0;
        while t < skill.steps.len() {
            let step = &skill.steps[t];
            let params = step.params.as_deref().map(|p| substitute(p, bindings));
            let mut tree = device.capture();

            if step.action_kind == ActionKind::Launch {
                let action = Action::launch(params.unwrap_or_else(|| skill.target_app.clone()));
                let outcome = device.apply(&action);
                run.out.executed_steps.push(TrajectoryStep::record(action, &tree, format!("replay step {t}"), outcome));
                run.trace(t, Severity::None, None, false, false);
                t += 1;
                continue;
            }

            let mut report = verify_state(&tree, &step.descriptor, &skill.target_app);
            if report.severity == Severity::Moderate {
                if let Some(action) = self.dismisser.try_dismiss(device, &tree) {
                    let text = tree.flatten()[action.element_index.unwrap_or(0)].text.clone().unwrap_or_default();
                    run.out.executed_steps.push(TrajectoryStep::record(
                        action,
                        &tree,
                        format!("auto-dismissed '{text}'"),
                        ApplyOutcome::Changed,
                    ));
                    run.out.dismissals += 1;
                    tree = device.capture();
                    report = verify_state(&tree, &step.descriptor, &skill.target_app);
                }
            }
            if report.severity == Severity::Major {
                run.trace(t, Severity::Major, None, false, false);
                run.fail(ReplayStatus::Aborted, t, Severity::Major, &tree, report.detail);
                break;
            }

            // an uncleared dialog is handled like a locator miss
            let blocked = report.severity == Severity::Moderate;
            let threshold = if report.severity == Severity::Minor { Threshold::Relaxed } else { Threshold::Strict };
            let resolved = match (&step.locator, blocked) {
                (_, true) => None,
                (None, false) => Some((None, None)),
                (Some(loc), false) => find_element(&tree, loc, threshold, bindings).map(|(i, s)| (Some(i), Some(s))),
            };

            if let Some((index, score)) = resolved {
                let action = Action { kind: step.action_kind, element_index: index, payload: params };
                let outcome = device.apply(&action);
                run.out.executed_steps.push(TrajectoryStep::record(action, &tree, format!("replay step {t}"), outcome));
                run.trace(t, report.severity, score, false, false);
                run.consec = 0;
                t += 1;
                continue;
            }

            if run.can_skip(t, &tree) {
                run.out.skipped_step_indices.push(t);
                run.trace(t, report.severity, None, true, false);
                t += 1;
                continue;
            }

            if run.consec >= self.budget.b_consec || run.out.fallback_calls >= self.budget.b_total {
                run.trace(t, report.severity, None, false, false);
                let detail =
                    format!("fallback budget exhausted ({} consecutive, {} total)", run.consec, run.out.fallback_calls);
                run.fail(ReplayStatus::FellBack, t, report.severity, &tree, detail);
                break;
            }

            run.out.fallback_calls += 1;
            run.consec += 1;
            let mut req = PolicyRequest::new(Role::StepFallback, instruction.clone(), tree.clone());
            req.history = run.history();
            req.feedback = Some(format!(
                "Replay could not perform step {} ({:?}){}.",
                t + 1,
                step.action_kind,
                params_hint(step.params.as_deref(), bindings)
            ));
            let resolved =
                policy.decide(&req).ok().filter(|r| !matches!(r.action.kind, ActionKind::Done | ActionKind::Fail));
            let Some(resp) = resolved else {
                run.trace(t, report.severity, None, false, true);
                run.fail(ReplayStatus::FellBack, t, report.severity, &tree, "step fallback produced no action".into());
                break;
            };
            let outcome = device.apply(&resp.action);
            let rejected = outcome == ApplyOutcome::Rejected;
            run.out.executed_steps.push(TrajectoryStep::record(resp.action, &tree, resp.reasoning, outcome));
            run.trace(t, report.severity, None, false, true);
            if rejected {
                run.fail(ReplayStatus::FellBack, t, report.severity, &tree, "step fallback action rejected".into());
                break;
            }
            t += 1;
        }

        if run.out.status == ReplayStatus::Completed {
            run.out.checker = Some(device.run_checker(&task.task_id, &task.expected));
        }
        run.out.policy_calls = policy.calls() - calls_at_start;
        run.out
    }
}

fn params_hint(params: Option<&str>, bindings: &BTreeMap<String, String>) -> String {
    params.map(|p| format!(" with '{}'", substitute(p, bindings))).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::compile;
    use crate::orchestrator::{EpisodeOutcome, Orchestrator};
    use crate::policy::PolicyResponse;
    use crate::sim::{Perturbation, PerturbationKind};
    use crate::test_support::{bindings, device, scripted};
    use crate::ui::{Rect, UINode};

    fn learn(instruction: &str, task: &TaskSpec, perturb: Option<PerturbationKind>) -> SkillTemplate {
        let mut d = device(3);
        if let Some(kind) = perturb {
            d.inject(&Perturbation { kind, target_app: task.target_app.clone() }).unwrap();
        }
        let mut p = scripted();
        let ep = Orchestrator::default().execute(&mut d, &mut p, instruction, task, None);
        assert_eq!(ep.outcome, EpisodeOutcome::Success, "{instruction}");
        compile(&mut p, &ep.trajectory, "skill-0001").unwrap()
    }

    fn alarm(time: &str) -> TaskSpec {
        TaskSpec { task_id: "set_alarm".into(), target_app: "clock".into(), expected: bindings(&[("time", time)]) }
    }

    fn note(title: &str) -> TaskSpec {
        TaskSpec { task_id: "create_note".into(), target_app: "notes".into(), expected: bindings(&[("title", title)]) }
    }

    #[test]
    fn pure_replay_uses_no_calls() {
        let skill = learn("Set an alarm for 7:30 AM", &alarm("7:30 AM"), None);
        assert_eq!(skill.steps.len(), 5);
        let mut d = device(4);
        let mut p = scripted();
        let out =
            Replayer::default().replay(&mut d, &mut p, &skill, &bindings(&[("time", "9:00 AM")]), &alarm("9:00 AM"));
        assert_eq!(out.status, ReplayStatus::Completed);
        assert!(out.verified());
        assert_eq!((out.policy_calls, p.calls(), out.fallback_calls), (0, 0, 0));
        assert!(out.skipped_step_indices.is_empty());
    }

    #[test]
    fn chooser_dialog_dismissed_without_calls() {
        let skill = learn("Set an alarm for 7:30 AM", &alarm("7:30 AM"), None);
        let mut d = device(4);
        d.inject(&Perturbation { kind: PerturbationKind::ChooserDialog, target_app: "clock".into() }).unwrap();
        let mut p = scripted();
        let out =
            Replayer::default().replay(&mut d, &mut p, &skill, &bindings(&[("time", "9:00 AM")]), &alarm("9:00 AM"));
        assert!(out.verified());
        assert_eq!(out.dismissals, 1);
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn stale_permission_step_is_skipped() {
        let skill =
            learn("Create a note titled Groceries", &note("Groceries"), Some(PerturbationKind::RevokePermission));
        let allow = skill
            .steps
            .iter()
            .position(|s| s.locator.as_ref().and_then(|l| l.resource_id.as_deref()) == Some("permission_allow"))
            .expect("permission step kept in skeleton");
        let mut d = device(4);
        let mut p = scripted();
        let out =
            Replayer::default().replay(&mut d, &mut p, &skill, &bindings(&[("title", "Meeting")]), &note("Meeting"));
        assert!(out.verified());
        assert_eq!(out.skipped_step_indices, vec![allow]);
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn wrong_foreground_aborts() {
        let skill = learn("Set an alarm for 7:30 AM", &alarm("7:30 AM"), None);
        let mut stray = skill.clone();
        stray.steps[0].params = Some("notes".into());
        let mut d = device(4);
        let mut p = scripted();
        let out =
            Replayer::default().replay(&mut d, &mut p, &stray, &bindings(&[("time", "9:00 AM")]), &alarm("9:00 AM"));
        assert_eq!(out.status, ReplayStatus::Aborted);
        let f = out.failure.unwrap();
        assert_eq!((f.step_index, f.severity), (1, Severity::Major));
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn third_consecutive_miss_falls_back() {
        let skill = learn("Set an alarm for 7:30 AM", &alarm("7:30 AM"), None);
        let mut broken = skill.clone();
        for s in broken.steps.iter_mut().skip(1) {
            s.locator =
                Some(crate::compiler::ElementLocator { resource_id: Some("gone".into()), ..Default::default() });
        }
        let mut d = device(4);
        let mut p = scripted();
        let out =
            Replayer::default().replay(&mut d, &mut p, &broken, &bindings(&[("time", "9:00 AM")]), &alarm("9:00 AM"));
        assert_eq!(out.status, ReplayStatus::FellBack);
        assert_eq!(out.fallback_calls, 2);
        assert_eq!(out.policy_calls, 2);
        assert_eq!(out.failure.unwrap().step_index, 3);
        // the executed prefix is a valid prior context: launch plus two resolved steps
        assert_eq!(out.executed_steps.len(), 3);
    }

    #[test]
    fn dismiss_keywords_use_word_boundaries() {
        let d = Dismisser::default();
        assert!(d.matches("Allow"));
        assert!(d.matches("Got it"));
        assert!(d.matches("OK"));
        assert!(!d.matches("booking"));
        assert!(!d.matches("Skipper"));
    }

    #[test]
    fn no_dismiss_button_means_no_tap() {
        let r = Rect::new(0, 0, 10, 10);
        let tree = UITree::new(
            UINode::new("FrameLayout", r).with_children(vec![UINode::new(crate::ui::DIALOG_CLASS, r)
                .with_id("promo")
                .with_children(vec![UINode::new("Button", r).with_text("Book now").clickable()])]),
            "a",
            "app",
        );
        assert_eq!(Dismisser::default().find(&tree), None);
    }

    #[test]
    fn verify_state_levels() {
        let mut d = device(1);
        d.apply(&Action::launch("clock"));
        let tree = d.capture();
        let desc = make_descriptor(&tree);
        assert_eq!(verify_state(&tree, &desc, "clock").severity, Severity::None);
        let home = {
            let mut h = device(1);
            h.capture()
        };
        assert_eq!(verify_state(&home, &desc, "clock").severity, Severity::Major);
        d.inject(&Perturbation { kind: PerturbationKind::ChooserDialog, target_app: "clock".into() }).unwrap();
        assert_eq!(verify_state(&d.capture(), &desc, "clock").severity, Severity::Moderate);
        let mut sparse = desc.clone();
        sparse.key_element_ids = vec!["x".into(), "y".into(), "fab".into()];
        let _ = d.apply(&Action::back());
        assert_eq!(verify_state(&d.capture(), &sparse, "clock").severity, Severity::Minor);
    }

    #[test]
    fn fallback_fail_action_falls_back() {
        let skill = learn("Set an alarm for 7:30 AM", &alarm("7:30 AM"), None);
        let mut broken = skill.clone();
        broken.steps[1].locator =
            Some(crate::compiler::ElementLocator { resource_id: Some("gone".into()), ..Default::default() });
        let mut d = device(4);
        let mut p = CountingPolicy::new(|_: &PolicyRequest| Ok(PolicyResponse::action(Action::fail(), "")));
        let out =
            Replayer::default().replay(&mut d, &mut p, &broken, &bindings(&[("time", "9:00 AM")]), &alarm("9:00 AM"));
        assert_eq!(out.status, ReplayStatus::FellBack);
        assert_eq!(out.fallback_calls, 1);
    }
}
