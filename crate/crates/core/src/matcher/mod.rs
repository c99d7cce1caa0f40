//! Routes an instruction to a stored skill: regex over intent patterns,
//! then embedding similarity with policy confirmation, both restricted to
//! the app the instruction is about.

mod embed;
mod intent;

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::compiler::{placeholders, SkillTemplate};
use crate::error::Result;
use crate::policy::{CountingPolicy, PolicyRequest, Role};
use crate::ui::{Rect, UINode, UITree};

pub use embed::{cosine, EmbeddingProvider, TokenHashEmbedding};
pub use intent::{resolve_intent, IntentResolution, KeywordDictionary, ResolutionMethod};

pub const TAU_SEM: f64 = 0.40;
pub const CANDIDATE_CAP: usize = 3;

/// Anchored, case-insensitive regex for an intent pattern, together with
/// the slot name bound to each capture group.
pub fn pattern_to_regex(intent_pattern: &str) -> Result<(Regex, Vec<String>)> {
    let names = placeholders(intent_pattern);
    let mut re = String::from("(?i)^");
    let mut rest = intent_pattern;
    for name in &names {
        let ph = format!("{{{name}}}");
        let at = rest.find(&ph).expect("placeholder found by the same scan");
        re.push_str(&regex::escape(&rest[..at]));
        re.push_str("(.+)");
        rest = &rest[at + ph.len()..];
    }
    re.push_str(&regex::escape(rest));
    re.push('$');
    Ok((Regex::new(&re)?, names))
}

/// Slot values captured from `instruction`, or `None` when the pattern does
/// not match. A slot that appears twice must capture the same text twice.
pub fn regex_bindings(intent_pattern: &str, instruction: &str) -> Result<Option<BTreeMap<String, String>>> {
    let (re, names) = pattern_to_regex(intent_pattern)?;
    let Some(caps) = re.captures(instruction) else {
        return Ok(None);
    };
    let mut out = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let v = caps.get(i + 1).map(|m| m.as_str().to_string()).unwrap_or_default();
        if out.get(name).is_some_and(|prev: &String| *prev != v) {
            return Ok(None);
        }
        out.insert(name.clone(), v);
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchKind {
    Full,
    Partial,
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchStrategy {
    Regex,
    Embedding,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub kind: MatchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_id: Option<String>,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    pub strategy: MatchStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    pub intent: IntentResolution,
    /// MATCH_CONFIRM calls made.
    pub policy_calls: u64,
}

/// A skill as the matcher sees it. `last_success` orders regex hits; the
/// embedding is that of the placeholder-stripped intent pattern.
#[derive(Debug, Clone)]
pub struct MatchCandidate<'a> {
    pub skill: &'a SkillTemplate,
    pub last_success: Option<u64>,
    pub embedding: Vec<f64>,
}

impl<'a> MatchCandidate<'a> {
    pub fn new(skill: &'a SkillTemplate, last_success: Option<u64>, provider: &dyn EmbeddingProvider) -> Self {
        Self { skill, last_success, embedding: provider.embed(&skill.stripped_pattern()) }
    }
}

/// Skills with cosine similarity at or above `tau`, best first, ties by id.
pub fn semantic_candidates<'a>(
    instruction: &str,
    candidates: &[MatchCandidate<'a>],
    provider: &dyn EmbeddingProvider,
    tau: f64,
) -> Vec<(&'a SkillTemplate, f64)> {
    let q = provider.embed(instruction);
    let mut out: Vec<(&SkillTemplate, f64)> =
        candidates.iter().map(|c| (c.skill, cosine(&q, &c.embedding))).filter(|(_, s)| *s >= tau).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.skill_id.cmp(&b.0.skill_id)));
    out
}

#[derive(Debug, Clone)]
pub struct Matcher {
    pub keywords: KeywordDictionary,
    pub tau_sem: f64,
    pub candidate_cap: usize,
}

fn blank_tree() -> UITree {
    UITree::new(UINode::new("android.widget.FrameLayout", Rect::new(0, 0, 1080, 2400)), "home", "home")
}

impl Matcher {
    pub fn new(keywords: KeywordDictionary) -> Self {
        Self { keywords, tau_sem: TAU_SEM, candidate_cap: CANDIDATE_CAP }
    }

    /// Runs the cascade. MATCH_CONFIRM requests carry `tree` (the screen
    /// at match time) and the candidate's intent pattern.
    pub fn match_instruction(
        &self,
        instruction: &str,
        candidates: &[MatchCandidate<'_>],
        provider: &dyn EmbeddingProvider,
        policy: &mut CountingPolicy,
        tree: Option<&UITree>,
    ) -> Result<MatchResult> {
        let intent = resolve_intent(instruction, &self.keywords);
        let allowed = |s: &SkillTemplate| intent.target_app.as_ref().is_none_or(|app| *app == s.target_app);
        let pool: Vec<MatchCandidate<'_>> = candidates.iter().filter(|c| allowed(c.skill)).cloned().collect();
        let mut result = MatchResult {
            kind: MatchKind::NoMatch,
            skill_id: None,
            bindings: BTreeMap::new(),
            strategy: MatchStrategy::None,
            similarity: None,
            intent: intent.clone(),
            policy_calls: 0,
        };

        let mut by_recency: Vec<&MatchCandidate<'_>> = pool.iter().collect();
        by_recency
            .sort_by(|a, b| b.last_success.cmp(&a.last_success).then_with(|| a.skill.skill_id.cmp(&b.skill.skill_id)));
        for c in by_recency {
            if let Some(b) = regex_bindings(&c.skill.intent_pattern, instruction)? {
                result.kind = MatchKind::Full;
                result.skill_id = Some(c.skill.skill_id.clone());
                result.bindings = b;
                result.strategy = MatchStrategy::Regex;
                return Ok(result);
            }
        }

        let ranked = semantic_candidates(instruction, &pool, provider, self.tau_sem);
        let calls_before = policy.calls();
        let tree = tree.cloned().unwrap_or_else(blank_tree);
        for (skill, sim) in ranked.into_iter().take(self.candidate_cap) {
            let mut req = PolicyRequest::new(Role::MatchConfirm, instruction, tree.clone());
            req.candidate = Some(skill.intent_pattern.clone());
            let Ok(resp) = policy.decide(&req) else {
                continue;
            };
            if resp.confirm != Some(true) {
                continue;
            }
            let bindings: BTreeMap<String, String> =
                resp.slot_bindings.unwrap_or_default().into_iter().map(|(k, v)| (k, v.value)).collect();
            if skill.slots.iter().all(|s| bindings.get(&s.name).is_some_and(|v| !v.is_empty())) {
                result.kind = MatchKind::Full;
                result.skill_id = Some(skill.skill_id.clone());
                result.bindings =
                    bindings.into_iter().filter(|(k, _)| skill.slots.iter().any(|s| s.name == *k)).collect();
                result.strategy = MatchStrategy::Embedding;
                result.similarity = Some(sim);
                break;
            }
        }
        result.policy_calls = policy.calls() - calls_before;
        if result.kind != MatchKind::Full && intent.target_app.is_some() && !pool.is_empty() {
            result.kind = MatchKind::Partial;
        }
        Ok(result)
    }
}
