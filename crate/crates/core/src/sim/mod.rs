//! Deterministic simulated handset: apps are finite state machines over
//! UI trees, driven by the same action vocabulary the policies emit.

mod checker;
mod device;
pub mod scenario;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checker::{normalize_time, CheckResult, CheckStatus};
pub use device::{SetupStep, SimDevice, HOME_APP};
pub use scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Tap,
    Input,
    Scroll,
    Back,
    Launch,
    Done,
    Fail,
}

impl ActionKind {
    pub fn targets_element(self) -> bool {
        matches!(self, ActionKind::Tap | ActionKind::Input)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl Action {
    fn bare(kind: ActionKind) -> Self {
        Self { kind, element_index: None, payload: None }
    }

    pub fn tap(index: usize) -> Self {
        Self { element_index: Some(index), ..Self::bare(ActionKind::Tap) }
    }

    pub fn input(index: usize, text: impl Into<String>) -> Self {
        Self { element_index: Some(index), payload: Some(text.into()), ..Self::bare(ActionKind::Input) }
    }

    pub fn scroll(direction: impl Into<String>) -> Self {
        Self { payload: Some(direction.into()), ..Self::bare(ActionKind::Scroll) }
    }

    pub fn back() -> Self {
        Self::bare(ActionKind::Back)
    }

    pub fn launch(app: impl Into<String>) -> Self {
        Self { payload: Some(app.into()), ..Self::bare(ActionKind::Launch) }
    }

    pub fn done() -> Self {
        Self::bare(ActionKind::Done)
    }

    pub fn fail() -> Self {
        Self::bare(ActionKind::Fail)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.targets_element() && self.element_index.is_none() {
            return Err(Error::InvalidAction(format!("{:?} requires element_index", self.kind)));
        }
        if self.kind == ActionKind::Input && self.payload.is_none() {
            return Err(Error::InvalidAction("INPUT requires payload".into()));
        }
        if self.kind == ActionKind::Launch && self.payload.is_none() {
            return Err(Error::InvalidAction("LAUNCH requires payload".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApplyOutcome {
    Changed,
    Unchanged,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbationKind {
    ChooserDialog,
    ClearAppData,
    RevokePermission,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub target_app: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_validation() {
        assert!(Action::tap(0).validate().is_ok());
        assert!(Action { element_index: None, ..Action::tap(0) }.validate().is_err());
        assert!(Action { payload: None, ..Action::launch("x") }.validate().is_err());
        assert!(Action::done().validate().is_ok());
    }

    #[test]
    fn action_wire_format() {
        let a = Action::input(3, "hi");
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"kind":"INPUT","element_index":3,"payload":"hi"}"#);
    }
}
