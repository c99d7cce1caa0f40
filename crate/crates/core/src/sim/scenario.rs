//! Declarative app scenarios: screens built from node templates, transition
//! rules keyed on actions, dialog templates and ground-truth checkers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sim::ActionKind;
use crate::ui::Rect;
use crate::util::OneOrMany;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub app_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub initial_screen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welcome_screen: Option<String>,
    #[serde(default)]
    pub initial_state: BTreeMap<String, Value>,
    pub screens: BTreeMap<String, Screen>,
    #[serde(default)]
    pub dialogs: BTreeMap<String, DialogTemplate>,
    #[serde(default)]
    pub checkers: Vec<CheckerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Screen {
    #[serde(default)]
    pub nodes: Vec<NodeTemplate>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct NodeTemplate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc: Option<String>,
    pub class_name: String,
    /// Explicit bounds; when absent the node gets an equal-height row of its
    /// parent's rectangle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Rect>,
    #[serde(default)]
    pub clickable: bool,
    /// Session variable written by INPUT actions on this node. A non-empty
    /// value replaces the node's text when rendered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_var: Option<String>,
    /// Persistent-state list key; the node is repeated once per item with
    /// `${item}` bound to the element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub for_each: Option<String>,
    /// Shuffle the rendered children with the device seed.
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default)]
    pub children: Vec<NodeTemplate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionPattern {
    pub kind: ActionKind,
    /// Resource id of the acted-on node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub on: ActionPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default)]
    pub effect: OneOrMany<Effect>,
}

/// State mutation applied by a transition or a round setup. `value`
/// strings may reference session variables and state keys as `${name}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Effect {
    Set { key: String, value: String },
    Append { key: String, value: String },
    Remove { key: String, value: String },
    Toggle { key: String },
    ClearVars,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogTemplate {
    pub resource_id: String,
    pub nodes: Vec<NodeTemplate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Equals,
    EqualsIgnoreCase,
    Contains,
    NotContains,
    ContainsTime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckerSpec {
    pub task_id: String,
    pub state_key: String,
    pub comparator: Comparator,
    /// Expected value, with `${slot}` references resolved from the bindings
    /// passed to the checker.
    pub expected: String,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.app_id)
    }

    pub fn validate(&self) -> Result<()> {
        let exists = |id: &str, what: &str| {
            if self.screens.contains_key(id) {
                Ok(())
            } else {
                Err(Error::InvalidScenario(format!("{}: {what} names unknown screen {id:?}", self.app_id)))
            }
        };
        exists(&self.initial_screen, "initial_screen")?;
        if let Some(w) = &self.welcome_screen {
            exists(w, "welcome_screen")?;
        }
        for (sid, screen) in &self.screens {
            for t in &screen.transitions {
                if let Some(to) = &t.to {
                    exists(to, &format!("transition on screen {sid:?}"))?;
                }
            }
        }
        Ok(())
    }
}

/// Loads every scenario file in `dir` (any `*.json` carrying an `app_id`),
/// sorted by app id.
pub fn load_dir(dir: &Path) -> Result<Vec<Scenario>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path)?;
        let probe: Value =
            serde_json::from_str(&text).map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
        if probe.get("app_id").is_none() {
            continue;
        }
        out.push(Scenario::from_json(&text).map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?);
    }
    out.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    Ok(out)
}

fn var_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

/// Expands `${name}` references. Unknown names expand to the empty string
/// and are reported in the second tuple element.
pub fn expand_template(template: &str, lookup: impl Fn(&str) -> Option<String>) -> (String, Vec<String>) {
    let mut missing = Vec::new();
    let out = var_regex().replace_all(template, |caps: &regex::Captures| {
        let name = &caps[1];
        lookup(name).unwrap_or_else(|| {
            missing.push(name.to_string());
            String::new()
        })
    });
    (out.into_owned(), missing)
}

/// Renders a JSON state value as a display string.
pub fn value_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}
