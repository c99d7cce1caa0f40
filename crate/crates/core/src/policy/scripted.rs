//! Rule-table policy used by tests and the simulator fixtures.
//!
//! Rules are tried in file order; the first one whose conditions all hold
//! produces the response. Templates of the form `${name}` in targets,
//! payloads and slot values are filled from the named captures of
//! `instruction_pattern`.

use std::collections::BTreeMap;
use std::path::Path;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyRequest, PolicyResponse, Role, SlotBinding};
use crate::compiler::SlotType;
use crate::error::{Error, Result};
use crate::sim::scenario::expand_template;
use crate::sim::{Action, ActionKind};
use crate::ui::UINode;
use crate::util::OneOrMany;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptBinding {
    pub value: String,
    #[serde(rename = "type")]
    pub slot_type: SlotType,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ScriptAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_bindings: Option<BTreeMap<String, ScriptBinding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirm: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub role: OneOrMany<Role>,
    pub instruction_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_id: Option<String>,
    /// Regex over the candidate intent pattern (MATCH_CONFIRM).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_pattern: Option<String>,
    /// Regex the request feedback must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_pattern: Option<String>,
    /// Only applies to requests without feedback.
    #[serde(default)]
    pub fresh_only: bool,
    /// Node that must be on screen for the rule to apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_present: Option<TargetSpec>,
    pub response: ScriptResponse,
}

struct CompiledRule {
    rule: ScriptRule,
    instruction: Regex,
    candidate: Option<Regex>,
    feedback: Option<Regex>,
}

pub struct ScriptedPolicy {
    rules: Vec<CompiledRule>,
}

fn fill(template: &str, caps: &Captures) -> String {
    expand_template(template, |n| caps.name(n).map(|m| m.as_str().to_string())).0
}

fn node_matches(node: &UINode, spec: &TargetSpec, caps: &Captures) -> bool {
    let eq = |want: &Option<String>, got: &Option<String>| {
        want.as_ref().is_none_or(|w| got.as_deref() == Some(fill(w, caps).as_str()))
    };
    eq(&spec.resource_id, &node.resource_id) && eq(&spec.text, &node.text) && eq(&spec.content_desc, &node.content_desc)
}

impl ScriptedPolicy {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self> {
        let rules = rules
            .into_iter()
            .map(|rule| {
                Ok(CompiledRule {
                    instruction: Regex::new(&rule.instruction_pattern)?,
                    candidate: rule.candidate_pattern.as_deref().map(Regex::new).transpose()?,
                    feedback: rule.feedback_pattern.as_deref().map(Regex::new).transpose()?,
                    rule,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rules })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))
    }

    fn try_rule(&self, r: &CompiledRule, req: &PolicyRequest) -> Option<PolicyResponse> {
        let rule = &r.rule;
        if !rule.role.as_slice().contains(&req.role) {
            return None;
        }
        let caps = r.instruction.captures(&req.instruction)?;
        if rule.screen_id.as_ref().is_some_and(|s| *s != req.tree.activity) {
            return None;
        }
        if let Some(c) = &r.candidate {
            if !req.candidate.as_deref().is_some_and(|cand| c.is_match(cand)) {
                return None;
            }
        }
        if rule.fresh_only && req.feedback.is_some() {
            return None;
        }
        if let Some(f) = &r.feedback {
            if !req.feedback.as_deref().is_some_and(|fb| f.is_match(fb)) {
                return None;
            }
        }
        let flat = req.tree.flatten();
        if let Some(spec) = &rule.when_present {
            flat.iter().find(|n| node_matches(n, spec, &caps))?;
        }
        let action = match &rule.response.action {
            None => Action::done(),
            Some(sa) => {
                let element_index = match &sa.target {
                    None => None,
                    Some(spec) => Some(flat.iter().position(|n| node_matches(n, spec, &caps))?),
                };
                Action { kind: sa.kind, element_index, payload: sa.payload.as_deref().map(|p| fill(p, &caps)) }
            }
        };
        let slot_bindings = rule.response.slot_bindings.as_ref().map(|m| {
            m.iter()
                .map(|(k, b)| (k.clone(), SlotBinding { value: fill(&b.value, &caps), slot_type: b.slot_type }))
                .collect()
        });
        Some(PolicyResponse {
            action,
            reasoning: rule.response.reasoning.clone().unwrap_or_default(),
            slot_bindings,
            confirm: rule.response.confirm,
        })
    }
}

impl Policy for ScriptedPolicy {
    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        Ok(self.rules.iter().find_map(|r| self.try_rule(r, req)).unwrap_or_else(|| PolicyResponse::incapable(req.role)))
    }
}
