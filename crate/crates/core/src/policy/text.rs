//! Adapter for chat-completion style backends: requests are rendered to a
//! plain-text prompt and the reply is parsed as a JSON response object.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use super::{Policy, PolicyRequest, PolicyResponse, Role, SlotBinding};
use crate::error::{Error, Result};
use crate::sim::Action;

/// Raw completion transport, e.g. an HTTP client for a hosted model.
pub trait TextBackend {
    fn complete(&mut self, prompt: &str) -> Result<String>;
}

impl<F> TextBackend for F
where
    F: FnMut(&str) -> Result<String>,
{
    fn complete(&mut self, prompt: &str) -> Result<String> {
        self(prompt)
    }
}

pub struct TextPolicy<B> {
    backend: B,
}

impl<B: TextBackend> TextPolicy<B> {
    pub fn new(backend: B) -> Self {
        Self { backend }
    }
}

impl<B: TextBackend> Policy for TextPolicy<B> {
    fn respond(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        let reply = self.backend.complete(&render_prompt(req))?;
        parse_response(req.role, &reply)
    }
}

fn task_line(role: Role) -> &'static str {
    match role {
        Role::StepDecide => "Choose the next UI action that makes progress on the instruction.",
        Role::StepFallback => "A replayed step could not find its target. Choose one action that performs this step.",
        Role::SlotExtract => {
            "List the task-specific values in the instruction as typed slots (text, time, phone, url)."
        }
        Role::MatchConfirm => {
            "Decide whether the instruction asks for the same task as the candidate pattern; if so, extract its slot values."
        }
    }
}

pub fn render_prompt(req: &PolicyRequest) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{}", task_line(req.role));
    let _ = writeln!(p, "Instruction: {}", req.instruction);
    if let Some(c) = &req.candidate {
        let _ = writeln!(p, "Candidate pattern: {c}");
    }
    let _ = writeln!(p, "Screen: {} (app {})", req.tree.activity, req.tree.foreground_app);
    for (i, n) in req.tree.flatten().iter().enumerate() {
        let _ = write!(p, "[{i}] {}", n.class_name);
        if let Some(id) = &n.resource_id {
            let _ = write!(p, " id={id}");
        }
        if let Some(t) = &n.text {
            let _ = write!(p, " text={t:?}");
        }
        if let Some(d) = &n.content_desc {
            let _ = write!(p, " desc={d:?}");
        }
        if n.clickable {
            p.push_str(" clickable");
        }
        p.push('\n');
    }
    if !req.history.is_empty() {
        p.push_str("History:\n");
        for (i, h) in req.history.iter().enumerate() {
            let _ = writeln!(p, "{}. {} {}", i + 1, serde_json::to_string(&h.action).unwrap_or_default(), h.reasoning);
        }
    }
    if let Some(f) = &req.feedback {
        let _ = writeln!(p, "Feedback: {f}");
    }
    p.push_str(
        "Reply with one JSON object: {\"action\": {\"kind\", \"element_index\", \"payload\"}, \
         \"reasoning\", \"slot_bindings\": {name: {\"value\", \"type\"}}, \"confirm\"}.\n",
    );
    p
}

#[derive(Deserialize)]
struct Wire {
    #[serde(default)]
    action: Option<Action>,
    #[serde(default)]
    reasoning: Option<String>,
    #[serde(default)]
    slot_bindings: Option<BTreeMap<String, SlotBinding>>,
    #[serde(default)]
    confirm: Option<bool>,
}

/// Parses a model reply. Surrounding prose and code fences are tolerated;
/// anything else is a parse failure.
pub fn parse_response(role: Role, reply: &str) -> Result<PolicyResponse> {
    let (start, end) = match (reply.find('{'), reply.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(Error::ParseFailure("no JSON object in reply".into())),
    };
    let wire: Wire = serde_json::from_str(&reply[start..=end]).map_err(|e| Error::ParseFailure(e.to_string()))?;
    let action = match (role, wire.action) {
        (_, Some(a)) => a,
        (Role::StepDecide | Role::StepFallback, None) => {
            return Err(Error::ParseFailure("step response without action".into()))
        }
        (_, None) => Action::done(),
    };
    Ok(PolicyResponse {
        action,
        reasoning: wire.reasoning.unwrap_or_default(),
        slot_bindings: wire.slot_bindings,
        confirm: wire.confirm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::CountingPolicy;
    use crate::sim::ActionKind;
    use crate::ui::{Rect, UINode, UITree};

    fn req(role: Role) -> PolicyRequest {
        let r = Rect::new(0, 0, 10, 10);
        let tree = UITree::new(
            UINode::new("root", r).with_children(vec![UINode::new("Button", r).with_id("ok").with_text("OK")]),
            "main",
            "app",
        );
        PolicyRequest::new(role, "Press OK", tree)
    }

    #[test]
    fn prompt_lists_indexed_elements() {
        let p = render_prompt(&req(Role::StepDecide));
        assert!(p.contains("[1] Button id=ok text=\"OK\""));
        assert!(p.contains("Instruction: Press OK"));
    }

    #[test]
    fn parses_fenced_reply() {
        let reply =
            "Sure:\n```json\n{\"action\": {\"kind\": \"TAP\", \"element_index\": 1}, \"reasoning\": \"tap ok\"}\n```";
        let r = parse_response(Role::StepDecide, reply).unwrap();
        assert_eq!(r.action.kind, ActionKind::Tap);
        assert_eq!(r.action.element_index, Some(1));
    }

    #[test]
    fn malformed_reply_counts_as_call() {
        let mut p = CountingPolicy::new(TextPolicy::new(|_: &str| Ok("I think you should tap OK".to_string())));
        assert_eq!(p.decide(&req(Role::StepDecide)).unwrap_err().code(), "parse-failure");
        assert_eq!(p.calls(), 1);
    }
}
