//! One interface for every decision the engine delegates to a model:
//! per-step decisions, slot extraction, semantic-match confirmation and
//! single-step replay fallback. [`CountingPolicy`] owns the call counter
//! all cost metrics are derived from.

mod scripted;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compiler::SlotType;
use crate::error::{Error, Result};
use crate::sim::Action;
use crate::ui::UITree;

pub use scripted::{ScriptRule, ScriptedPolicy};
pub use text::{parse_response, render_prompt, TextBackend, TextPolicy};

/// Upper bound on episode length; request history must stay below it.
pub const N_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    StepDecide,
    SlotExtract,
    MatchConfirm,
    StepFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: Action,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub role: Role,
    pub instruction: String,
    pub tree: UITree,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    /// Intent pattern of the skill under confirmation (MATCH_CONFIRM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
}

impl PolicyRequest {
    pub fn new(role: Role, instruction: impl Into<String>, tree: UITree) -> Self {
        Self { role, instruction: instruction.into(), tree, history: Vec::new(), feedback: None, candidate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBinding {
    pub value: String,
    #[serde(rename = "type")]
    pub slot_type: SlotType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub action: Action,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_bindings: Option<BTreeMap<String, SlotBinding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirm: Option<bool>,
}

impl PolicyResponse {
    pub fn action(action: Action, reasoning: impl Into<String>) -> Self {
        Self { action, reasoning: reasoning.into(), slot_bindings: None, confirm: None }
    }

    /// Response used when a backend has nothing for the request.
    pub fn incapable(role: Role) -> Self {
        Self {
            action: Action::fail(),
            reasoning: "no applicable rule".into(),
            slot_bindings: (role == Role::SlotExtract).then(BTreeMap::new),
            confirm: (role == Role::MatchConfirm).then_some(false),
        }
    }

    fn check_role(&self, role: Role) -> Result<()> {
        match role {
            Role::StepDecide | Role::StepFallback => {
                self.action.validate().map_err(|e| Error::ParseFailure(format!("{role:?}: {e}")))
            }
            Role::SlotExtract if self.slot_bindings.is_none() => {
                Err(Error::ParseFailure("SLOT_EXTRACT response without slot_bindings".into()))
            }
            Role::MatchConfirm => match self.confirm {
                None => Err(Error::ParseFailure("MATCH_CONFIRM response without confirm".into())),
                Some(true) if self.slot_bindings.is_none() => {
                    Err(Error::ParseFailure("confirmed match without slot_bindings".into()))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounter {
    pub total: u64,
    pub by_role: BTreeMap<Role, u64>,
}

impl CallCounter {
    pub fn record(&mut self, role: Role) {
        self.total += 1;
        *self.by_role.entry(role).or_default() += 1;
    }

    pub fn get(&self, role: Role) -> u64 {
        self.by_role.get(&role).copied().unwrap_or(0)
    }
}

/// A decision backend. Implementations need not be deterministic, but the
/// scripted ones are.
pub trait Policy {
    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse>;
}

impl<F> Policy for F
where
    F: FnMut(&PolicyRequest) -> Result<PolicyResponse>,
{
    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        self(req)
    }
}

/// Wraps a backend and counts every invocation, including ones that fail
/// to produce a usable response.
pub struct CountingPolicy {
    inner: Box<dyn Policy + Send>,
    counter: CallCounter,
}

impl CountingPolicy {
    pub fn new(inner: impl Policy + Send + 'static) -> Self {
        Self { inner: Box::new(inner), counter: CallCounter::default() }
    }

    pub fn decide(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        if req.history.len() >= N_MAX {
            return Err(Error::Precondition(format!("history length {} >= {N_MAX}", req.history.len())));
        }
        self.counter.record(req.role);
        let resp = self.inner.respond(req)?;
        resp.check_role(req.role)?;
        Ok(resp)
    }

    pub fn counter(&self) -> &CallCounter {
        &self.counter
    }

    pub fn calls(&self) -> u64 {
        self.counter.total
    }
}

impl std::fmt::Debug for CountingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CountingPolicy").field("counter", &self.counter).finish_non_exhaustive()
    }
}
