use std::collections::BTreeMap;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::checker::{evaluate, CheckResult};
use super::scenario::{expand_template, value_to_string, DialogTemplate, Effect, NodeTemplate, Scenario};
use super::{Action, ActionKind, ApplyOutcome, Perturbation, PerturbationKind};
use crate::error::{Error, Result};
use crate::ui::{Rect, UINode, UITree, DIALOG_CLASS};
use crate::util::OneOrMany;

/// Pseudo app id reported while the launcher is in the foreground.
pub const HOME_APP: &str = "home";

const SCREEN: Rect = Rect::new(0, 0, 1080, 2400);
const DIALOG_RECT: Rect = Rect::new(90, 800, 990, 1600);
const ROOT_CLASS: &str = "android.widget.FrameLayout";
const LAUNCHER_PREFIX: &str = "launcher_";

/// Pre-state mutation applied to one app before a round starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupStep {
    pub app: String,
    pub effect: OneOrMany<Effect>,
}

#[derive(Debug, Clone)]
struct AppRuntime {
    stack: Vec<String>,
    vars: BTreeMap<String, String>,
    state: BTreeMap<String, Value>,
    permission_armed: bool,
}

impl AppRuntime {
    fn fresh(s: &Scenario) -> Self {
        Self {
            stack: vec![s.initial_screen.clone()],
            vars: BTreeMap::new(),
            state: s.initial_state.clone(),
            permission_armed: false,
        }
    }

    fn lookup(&self, name: &str) -> Option<String> {
        self.vars.get(name).cloned().or_else(|| self.state.get(name).map(value_to_string))
    }

    fn apply_effect(&mut self, effect: &Effect) {
        let expand = |rt: &AppRuntime, v: &str| expand_template(v, |n| rt.lookup(n)).0;
        match effect {
            Effect::Set { key, value } => {
                let v = expand(self, value);
                self.state.insert(key.clone(), Value::String(v));
            }
            Effect::Append { key, value } => {
                let v = Value::String(expand(self, value));
                match self.state.get_mut(key) {
                    Some(Value::Array(xs)) => xs.push(v),
                    Some(other) => {
                        let prev = std::mem::take(other);
                        *other = Value::Array(vec![prev, v]);
                    }
                    None => {
                        self.state.insert(key.clone(), Value::Array(vec![v]));
                    }
                }
            }
            Effect::Remove { key, value } => {
                let v = Value::String(expand(self, value));
                if let Some(Value::Array(xs)) = self.state.get_mut(key) {
                    xs.retain(|x| *x != v);
                } else if self.state.get(key) == Some(&v) {
                    self.state.remove(key);
                }
            }
            Effect::Toggle { key } => {
                let on = self.state.get(key).map(value_to_string).as_deref() == Some("on");
                let next = if on { "off" } else { "on" };
                self.state.insert(key.clone(), Value::String(next.into()));
            }
            Effect::ClearVars => self.vars.clear(),
        }
    }

    fn navigate(&mut self, to: &str) {
        if let Some(pos) = self.stack.iter().position(|s| s == to) {
            self.stack.truncate(pos + 1);
        } else {
            self.stack.push(to.to_string());
        }
    }
}

#[derive(Debug, Clone)]
struct Overlay {
    owner: String,
    template: DialogTemplate,
}

/// A simulated device. Single-threaded mutable state; distinct devices are
/// independent.
#[derive(Debug, Clone)]
pub struct SimDevice {
    scenarios: BTreeMap<String, Arc<Scenario>>,
    apps: BTreeMap<String, AppRuntime>,
    foreground: Option<String>,
    pending_dialog: Option<Overlay>,
    rng_seed: u64,
    epoch: u64,
}

fn dialog_button(id: &str, text: &str) -> NodeTemplate {
    NodeTemplate {
        resource_id: Some(id.into()),
        text: Some(text.into()),
        class_name: "android.widget.Button".into(),
        clickable: true,
        ..Default::default()
    }
}

fn dialog_label(id: &str, text: &str) -> NodeTemplate {
    NodeTemplate {
        resource_id: Some(id.into()),
        text: Some(text.into()),
        class_name: "android.widget.TextView".into(),
        ..Default::default()
    }
}

fn default_chooser() -> DialogTemplate {
    DialogTemplate {
        resource_id: "chooser_dialog".into(),
        nodes: vec![
            dialog_label("chooser_title", "Open with"),
            dialog_button("chooser_option_primary", "Chrome"),
            dialog_button("chooser_option_secondary", "Files"),
            dialog_button("chooser_dismiss", "Not now"),
        ],
    }
}

fn default_permission() -> DialogTemplate {
    DialogTemplate {
        resource_id: "permission_dialog".into(),
        nodes: vec![
            dialog_label("permission_message", "Allow ${app_label} to access this device's data?"),
            dialog_button("permission_allow", "Allow"),
            dialog_button("permission_deny", "Don't allow"),
        ],
    }
}

fn row(rect: Rect, i: usize, n: usize) -> Rect {
    let h = (rect.bottom - rect.top) / n.max(1) as i32;
    let top = rect.top + i as i32 * h;
    Rect::new(rect.left, top, rect.right, top + h.max(1))
}

fn non_empty(s: String) -> Option<String> {
    (!s.is_empty()).then_some(s)
}

fn find_template<'a>(nodes: &'a [NodeTemplate], resource_id: &str) -> Option<&'a NodeTemplate> {
    nodes.iter().find_map(|t| {
        if t.resource_id.as_deref() == Some(resource_id) {
            Some(t)
        } else {
            find_template(&t.children, resource_id)
        }
    })
}

impl SimDevice {
    pub fn new(scenarios: Vec<Scenario>, rng_seed: u64) -> Result<Self> {
        let mut map = BTreeMap::new();
        for s in scenarios {
            s.validate()?;
            if s.app_id == HOME_APP {
                return Err(Error::InvalidScenario("app id 'home' is reserved".into()));
            }
            let id = s.app_id.clone();
            if map.insert(id.clone(), Arc::new(s)).is_some() {
                return Err(Error::InvalidScenario(format!("duplicate app id {id:?}")));
            }
        }
        let mut dev =
            Self { scenarios: map, apps: BTreeMap::new(), foreground: None, pending_dialog: None, rng_seed, epoch: 0 };
        dev.reset();
        Ok(dev)
    }

    /// Restores every app to its scenario's initial state and returns to
    /// the launcher.
    pub fn reset(&mut self) {
        self.apps = self.scenarios.iter().map(|(id, s)| (id.clone(), AppRuntime::fresh(s))).collect();
        self.foreground = None;
        self.pending_dialog = None;
        self.epoch += 1;
    }

    /// Re-instantiation hook for long plans; a plain reset in simulation.
    pub fn restart(&mut self) {
        self.reset();
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn app_ids(&self) -> impl Iterator<Item = &str> {
        self.scenarios.keys().map(String::as_str)
    }

    pub fn has_app(&self, app: &str) -> bool {
        self.scenarios.contains_key(app)
    }

    pub fn foreground_app(&self) -> &str {
        self.foreground.as_deref().unwrap_or(HOME_APP)
    }

    pub fn has_pending_dialog(&self) -> bool {
        self.pending_dialog.is_some()
    }

    pub fn app_state(&self, app: &str) -> Option<&BTreeMap<String, Value>> {
        self.apps.get(app).map(|rt| &rt.state)
    }

    /// App owning the checker registered for `task`.
    pub fn task_app(&self, task: &str) -> Option<&str> {
        self.scenarios.values().find(|s| s.checkers.iter().any(|c| c.task_id == task)).map(|s| s.app_id.as_str())
    }

    pub fn setup(&mut self, step: &SetupStep) -> Result<()> {
        let rt = self.apps.get_mut(&step.app).ok_or_else(|| Error::NoSuchApp(step.app.clone()))?;
        for e in step.effect.as_slice() {
            rt.apply_effect(e);
        }
        Ok(())
    }

    pub fn inject(&mut self, p: &Perturbation) -> Result<()> {
        let scenario = self.scenarios.get(&p.target_app).ok_or_else(|| Error::NoSuchApp(p.target_app.clone()))?.clone();
        let rt = self.apps.get_mut(&p.target_app).expect("runtime exists for every scenario");
        match p.kind {
            PerturbationKind::ChooserDialog => {
                let template = scenario.dialogs.get("chooser").cloned().unwrap_or_else(default_chooser);
                self.pending_dialog = Some(Overlay { owner: p.target_app.clone(), template });
            }
            PerturbationKind::ClearAppData => {
                *rt = AppRuntime::fresh(&scenario);
                if let Some(w) = &scenario.welcome_screen {
                    rt.stack = vec![w.clone()];
                }
            }
            PerturbationKind::RevokePermission => rt.permission_armed = true,
        }
        Ok(())
    }

    /// Current screen as a UI tree. One-shot permission dialogs armed for the
    /// foreground app surface here.
    pub fn capture(&mut self) -> UITree {
        if let Some(app) = self.foreground.clone() {
            let rt = self.apps.get_mut(&app).expect("foreground app has a runtime");
            if rt.permission_armed && self.pending_dialog.is_none() {
                rt.permission_armed = false;
                let template =
                    self.scenarios[&app].dialogs.get("permission").cloned().unwrap_or_else(default_permission);
                self.pending_dialog = Some(Overlay { owner: app, template });
            }
        }
        self.render()
    }

    /// Pure rendering of the current state; never arms or clears anything.
    pub fn render(&self) -> UITree {
        let (activity, app, mut children) = match &self.foreground {
            None => ("home".to_string(), HOME_APP.to_string(), self.home_nodes()),
            Some(app) => {
                let rt = &self.apps[app];
                let screen_id = rt.stack.last().expect("screen stack is never empty");
                let screen = &self.scenarios[app].screens[screen_id];
                let label = self.scenarios[app].label().to_string();
                let lookup = |n: &str| if n == "app_label" { Some(label.clone()) } else { rt.lookup(n) };
                let nodes = self.render_list(&screen.nodes, &lookup, Some(rt), screen_id, SCREEN);
                (screen_id.clone(), app.clone(), nodes)
            }
        };
        if let Some(ov) = &self.pending_dialog {
            children.push(self.render_dialog(ov));
        }
        let root = UINode::new(ROOT_CLASS, SCREEN).with_children(children);
        UITree::new(root, activity, app)
    }

    fn home_nodes(&self) -> Vec<UINode> {
        let n = self.scenarios.len();
        self.scenarios
            .values()
            .enumerate()
            .map(|(i, s)| {
                UINode::new("android.widget.TextView", row(SCREEN, i, n))
                    .with_id(format!("{LAUNCHER_PREFIX}{}", s.app_id))
                    .with_text(s.label())
                    .with_desc(s.label())
                    .clickable()
            })
            .collect()
    }

    fn render_dialog(&self, ov: &Overlay) -> UINode {
        let label = self.scenarios.get(&ov.owner).map(|s| s.label().to_string()).unwrap_or_default();
        let lookup = |n: &str| (n == "app_label").then(|| label.clone());
        let children = self.render_list(&ov.template.nodes, &lookup, None, &ov.template.resource_id, DIALOG_RECT);
        UINode::new(DIALOG_CLASS, DIALOG_RECT).with_id(ov.template.resource_id.clone()).with_children(children)
    }

    fn shuffle_rng(&self, scope: &str, node: &NodeTemplate) -> ChaCha8Rng {
        let mut h = FnvHasher::default();
        h.write(scope.as_bytes());
        h.write(node.resource_id.as_deref().unwrap_or("").as_bytes());
        h.write(node.class_name.as_bytes());
        let seed = self.rng_seed ^ self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ h.finish();
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn render_list(
        &self,
        templates: &[NodeTemplate],
        lookup: &dyn Fn(&str) -> Option<String>,
        rt: Option<&AppRuntime>,
        scope: &str,
        rect: Rect,
    ) -> Vec<UINode> {
        // expand for_each first so the row layout covers the real node count
        let mut expanded: Vec<(&NodeTemplate, Option<String>)> = Vec::new();
        for t in templates {
            match (&t.for_each, rt) {
                (Some(key), Some(rt)) => {
                    if let Some(Value::Array(xs)) = rt.state.get(key) {
                        expanded.extend(xs.iter().map(|x| (t, Some(value_to_string(x)))));
                    }
                }
                (Some(_), None) => {}
                (None, _) => expanded.push((t, None)),
            }
        }
        let n = expanded.len();
        expanded
            .into_iter()
            .enumerate()
            .map(|(i, (t, item))| {
                let scoped = |name: &str| {
                    if name == "item" {
                        item.clone()
                    } else {
                        lookup(name)
                    }
                };
                self.render_node(t, &scoped, rt, scope, t.bounds.unwrap_or_else(|| row(rect, i, n)))
            })
            .collect()
    }

    fn render_node(
        &self,
        t: &NodeTemplate,
        lookup: &dyn Fn(&str) -> Option<String>,
        rt: Option<&AppRuntime>,
        scope: &str,
        rect: Rect,
    ) -> UINode {
        let ex = |s: &Option<String>| s.as_deref().and_then(|s| non_empty(expand_template(s, lookup).0));
        let typed =
            t.input_var.as_ref().and_then(|v| rt.and_then(|rt| rt.vars.get(v))).filter(|v| !v.is_empty()).cloned();
        let mut children = self.render_list(&t.children, lookup, rt, scope, rect);
        if t.shuffle {
            // keep rows in place; only the order of the children changes
            let rects: Vec<Rect> = children.iter().map(|c| c.bounds).collect();
            children.shuffle(&mut self.shuffle_rng(scope, t));
            for (c, r) in children.iter_mut().zip(rects) {
                c.bounds = r;
            }
        }
        UINode {
            resource_id: ex(&t.resource_id),
            text: typed.or_else(|| ex(&t.text)),
            content_desc: ex(&t.content_desc),
            class_name: t.class_name.clone(),
            bounds: rect,
            clickable: t.clickable,
            children,
            ..Default::default()
        }
    }

    /// Executes one action against the current screen.
    pub fn apply(&mut self, action: &Action) -> ApplyOutcome {
        if action.validate().is_err() {
            return ApplyOutcome::Rejected;
        }
        let tree = self.render();
        let target = match action.element_index {
            Some(i) => {
                let flat = tree.flatten();
                match flat.get(i) {
                    Some(n) => Some(UINode { children: Vec::new(), ..(*n).clone() }),
                    None => return ApplyOutcome::Rejected,
                }
            }
            None => None,
        };
        let in_dialog = match (&target, &self.pending_dialog) {
            (Some(node), Some(_)) => tree.root.children.last().is_some_and(|d| subtree_contains(d, node.node_id)),
            _ => false,
        };

        match action.kind {
            ActionKind::Tap => {
                let node = target.expect("validated");
                if self.pending_dialog.is_some() {
                    return if in_dialog && node.clickable {
                        self.pending_dialog = None;
                        ApplyOutcome::Changed
                    } else {
                        ApplyOutcome::Unchanged
                    };
                }
                match self.foreground.clone() {
                    None => match node.resource_id.as_deref().and_then(|id| id.strip_prefix(LAUNCHER_PREFIX)) {
                        Some(app) if self.has_app(app) => {
                            self.foreground = Some(app.to_string());
                            ApplyOutcome::Changed
                        }
                        _ => ApplyOutcome::Unchanged,
                    },
                    Some(app) => self.fire(&app, ActionKind::Tap, Some(&node)),
                }
            }
            ActionKind::Input => {
                let node = target.expect("validated");
                if self.pending_dialog.is_some() && !in_dialog {
                    return ApplyOutcome::Unchanged;
                }
                let Some(app) = self.foreground.clone() else {
                    return ApplyOutcome::Unchanged;
                };
                let var = {
                    let rt = &self.apps[&app];
                    let screen = &self.scenarios[&app].screens[rt.stack.last().expect("non-empty")];
                    node.resource_id
                        .as_deref()
                        .and_then(|id| find_template(&screen.nodes, id))
                        .and_then(|t| t.input_var.clone())
                };
                match var {
                    Some(var) => {
                        let payload = action.payload.clone().unwrap_or_default();
                        self.apps.get_mut(&app).expect("runtime").vars.insert(var, payload);
                        ApplyOutcome::Changed
                    }
                    None => self.fire(&app, ActionKind::Input, Some(&node)),
                }
            }
            ActionKind::Scroll => match (&self.pending_dialog, self.foreground.clone()) {
                (None, Some(app)) => self.fire(&app, ActionKind::Scroll, None),
                _ => ApplyOutcome::Unchanged,
            },
            ActionKind::Back => {
                if self.pending_dialog.take().is_some() {
                    return ApplyOutcome::Changed;
                }
                match self.foreground.clone() {
                    None => ApplyOutcome::Unchanged,
                    Some(app) => {
                        let rt = self.apps.get_mut(&app).expect("runtime");
                        if rt.stack.len() > 1 {
                            rt.stack.pop();
                        } else {
                            self.foreground = None;
                        }
                        ApplyOutcome::Changed
                    }
                }
            }
            ActionKind::Launch => {
                let app = action.payload.as_deref().expect("validated");
                if app == HOME_APP {
                    self.foreground = None;
                    ApplyOutcome::Changed
                } else if self.has_app(app) {
                    self.foreground = Some(app.to_string());
                    ApplyOutcome::Changed
                } else {
                    ApplyOutcome::Rejected
                }
            }
            ActionKind::Done | ActionKind::Fail => ApplyOutcome::Unchanged,
        }
    }

    fn fire(&mut self, app: &str, kind: ActionKind, node: Option<&UINode>) -> ApplyOutcome {
        let scenario = self.scenarios[app].clone();
        let rt = self.apps.get_mut(app).expect("runtime");
        let screen = &scenario.screens[rt.stack.last().expect("non-empty")];
        let hit = screen.transitions.iter().find(|t| {
            t.on.kind == kind
                && t.on.target.as_ref().is_none_or(|id| node.and_then(|n| n.resource_id.as_ref()) == Some(id))
                && t.on.target_text.as_ref().is_none_or(|txt| node.and_then(|n| n.text.as_ref()) == Some(txt))
        });
        let Some(t) = hit else {
            return ApplyOutcome::Unchanged;
        };
        for e in t.effect.as_slice() {
            rt.apply_effect(e);
        }
        if let Some(to) = &t.to {
            rt.navigate(to);
        }
        ApplyOutcome::Changed
    }

    /// Ground-truth check of a task's outcome against device state only.
    pub fn run_checker(&self, task: &str, expected: &BTreeMap<String, String>) -> CheckResult {
        for s in self.scenarios.values() {
            if let Some(spec) = s.checkers.iter().find(|c| c.task_id == task) {
                return evaluate(spec, &self.apps[&s.app_id].state, expected);
            }
        }
        CheckResult::error(format!("no checker registered for task '{task}'"))
    }
}

fn subtree_contains(node: &UINode, id: usize) -> bool {
    node.node_id == id || node.children.iter().any(|c| subtree_contains(c, id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::CheckStatus;

    const CLOCK: &str = r#"{
      "app_id": "clock", "label": "Clock", "initial_screen": "alarms",
      "initial_state": {"alarms": []},
      "screens": {
        "alarms": {
          "nodes": [
            {"resource_id": "alarm_list", "class_name": "RecyclerView",
             "children": [{"resource_id": "alarm_time", "class_name": "TextView", "text": "${item}", "for_each": "alarms"}]},
            {"resource_id": "fab", "class_name": "ImageButton", "content_desc": "Add alarm", "clickable": true}
          ],
          "transitions": [{"on": {"kind": "TAP", "target": "fab"}, "to": "time_picker"}]
        },
        "time_picker": {
          "nodes": [
            {"resource_id": "time_input", "class_name": "EditText", "text": "Enter time", "input_var": "time", "clickable": true},
            {"resource_id": "picker_ok", "class_name": "Button", "text": "OK", "clickable": true}
          ],
          "transitions": [{"on": {"kind": "TAP", "target": "picker_ok"}, "to": "alarms",
                           "effect": [{"op": "append", "key": "alarms", "value": "${time}"}, {"op": "clear_vars"}]}]
        },
        "welcome": {"nodes": [], "transitions": []}
      },
      "welcome_screen": "welcome",
      "checkers": [{"task_id": "set_alarm", "state_key": "alarms", "comparator": "contains_time", "expected": "${time}"}]
    }"#;

    fn device() -> SimDevice {
        SimDevice::new(vec![Scenario::from_json(CLOCK).unwrap()], 7).unwrap()
    }

    fn index_of(tree: &UITree, id: &str) -> usize {
        tree.flatten()
            .iter()
            .position(|n| n.resource_id.as_deref() == Some(id))
            .unwrap_or_else(|| panic!("{id} not on screen"))
    }

    fn expected_time(t: &str) -> BTreeMap<String, String> {
        [("time".to_string(), t.to_string())].into()
    }

    #[test]
    fn home_lists_launchers() {
        let mut d = device();
        let t = d.capture();
        assert_eq!(t.activity, "home");
        assert_eq!(t.foreground_app, HOME_APP);
        assert!(t.flatten().iter().any(|n| n.text.as_deref() == Some("Clock")));
    }

    #[test]
    fn alarm_flow_and_checker() {
        let mut d = device();
        assert_eq!(d.run_checker("set_alarm", &expected_time("07:30")).status, CheckStatus::NotSatisfied);
        assert_eq!(d.apply(&Action::launch("clock")), ApplyOutcome::Changed);
        let t = d.capture();
        assert_eq!(t.activity, "alarms");
        assert_eq!(d.apply(&Action::tap(index_of(&t, "fab"))), ApplyOutcome::Changed);
        let t = d.capture();
        assert_eq!(t.activity, "time_picker");
        d.apply(&Action::input(index_of(&t, "time_input"), "7:30 AM"));
        let t = d.capture();
        assert_eq!(t.flatten()[index_of(&t, "time_input")].text.as_deref(), Some("7:30 AM"));
        d.apply(&Action::tap(index_of(&t, "picker_ok")));
        let t = d.capture();
        assert_eq!(t.activity, "alarms");
        assert!(t.flatten().iter().any(|n| n.text.as_deref() == Some("7:30 AM")));
        assert!(d.run_checker("set_alarm", &expected_time("07:30")).is_verified());
        assert_eq!(d.run_checker("unknown_task", &BTreeMap::new()).status, CheckStatus::CheckError);
    }

    #[test]
    fn scroll_on_static_screen_is_unchanged() {
        let mut d = device();
        d.apply(&Action::launch("clock"));
        assert_eq!(d.apply(&Action::scroll("down")), ApplyOutcome::Unchanged);
    }

    #[test]
    fn out_of_range_tap_rejected_without_change() {
        let mut d = device();
        d.apply(&Action::launch("clock"));
        let before = d.capture().to_json();
        assert_eq!(d.apply(&Action::tap(999)), ApplyOutcome::Rejected);
        assert_eq!(d.capture().to_json(), before);
    }

    #[test]
    fn back_pops_then_returns_home() {
        let mut d = device();
        d.apply(&Action::launch("clock"));
        let t = d.capture();
        d.apply(&Action::tap(index_of(&t, "fab")));
        d.apply(&Action::back());
        assert_eq!(d.capture().activity, "alarms");
        d.apply(&Action::back());
        assert_eq!(d.capture().activity, "home");
        assert_eq!(d.apply(&Action::launch("maps")), ApplyOutcome::Rejected);
    }

    #[test]
    fn chooser_dialog_is_modal_and_dismissable() {
        let mut d = device();
        d.inject(&Perturbation { kind: PerturbationKind::ChooserDialog, target_app: "clock".into() }).unwrap();
        d.apply(&Action::launch("clock"));
        let t = d.capture();
        let flat = t.flatten();
        assert!(flat.iter().any(|n| n.text.as_deref() == Some("Open with")));
        assert_eq!(t.dialogs().len(), 1);
        assert_eq!(d.apply(&Action::tap(index_of(&t, "fab"))), ApplyOutcome::Unchanged);
        assert_eq!(d.capture().activity, "alarms");
        let t = d.capture();
        assert_eq!(d.apply(&Action::tap(index_of(&t, "chooser_dismiss"))), ApplyOutcome::Changed);
        assert!(d.capture().dialogs().is_empty());
    }

    #[test]
    fn revoked_permission_shows_once() {
        let mut d = device();
        d.inject(&Perturbation { kind: PerturbationKind::RevokePermission, target_app: "clock".into() }).unwrap();
        assert!(d.capture().dialogs().is_empty(), "not on the launcher");
        d.apply(&Action::launch("clock"));
        let t = d.capture();
        let allow = index_of(&t, "permission_allow");
        assert_eq!(t.flatten()[allow].text.as_deref(), Some("Allow"));
        d.apply(&Action::tap(allow));
        assert!(d.capture().dialogs().is_empty());
        assert!(d.capture().dialogs().is_empty());
    }

    #[test]
    fn clear_data_lands_on_welcome() {
        let mut d = device();
        d.setup(&SetupStep {
            app: "clock".into(),
            effect: OneOrMany(vec![Effect::Append { key: "alarms".into(), value: "8:00".into() }]),
        })
        .unwrap();
        d.inject(&Perturbation { kind: PerturbationKind::ClearAppData, target_app: "clock".into() }).unwrap();
        d.apply(&Action::launch("clock"));
        assert_eq!(d.capture().activity, "welcome");
        assert_eq!(d.app_state("clock").unwrap()["alarms"], serde_json::json!([]));
        let err =
            d.inject(&Perturbation { kind: PerturbationKind::ClearAppData, target_app: "nope".into() }).unwrap_err();
        assert_eq!(err.code(), "no-such-app");
    }

    #[test]
    fn identical_sequences_render_identically() {
        let run = || {
            let mut d = device();
            let mut out = Vec::new();
            for a in [Action::launch("clock"), Action::tap(2), Action::input(1, "6:00"), Action::tap(2)] {
                d.apply(&a);
                out.push(d.capture().to_json());
            }
            out
        };
        assert_eq!(run(), run());
    }
}
