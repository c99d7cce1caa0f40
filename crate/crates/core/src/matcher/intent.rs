use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResolutionMethod {
    ExplicitContext,
    DomainSuffix,
    Keyword,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentResolution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_app: Option<String>,
    pub method: ResolutionMethod,
}

impl IntentResolution {
    pub fn none() -> Self {
        Self { target_app: None, method: ResolutionMethod::None }
    }
}

#[derive(Deserialize)]
struct DictionaryFile {
    browser: String,
    keywords: BTreeMap<String, String>,
}

/// Keyword to app mapping plus the app that handles bare domains.
#[derive(Debug, Clone)]
pub struct KeywordDictionary {
    pub browser: String,
    pub keywords: BTreeMap<String, String>,
    // longest first, then lexicographic
    compiled: Vec<(String, Regex)>,
}

impl KeywordDictionary {
    pub fn new(keywords: BTreeMap<String, String>, browser: impl Into<String>) -> Result<Self> {
        let mut compiled = keywords
            .keys()
            .map(|k| Ok((k.to_lowercase(), Regex::new(&format!(r"(?i)\b{}\b", regex::escape(k)))?)))
            .collect::<Result<Vec<_>>>()?;
        compiled.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then_with(|| a.0.cmp(&b.0)));
        let keywords = keywords.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        Ok(Self { browser: browser.into(), keywords, compiled })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: DictionaryFile = serde_json::from_str(text)?;
        Self::new(f.keywords, f.browser)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))
    }

    fn app(&self, keyword: &str) -> Option<&String> {
        self.keywords.get(keyword)
    }

    /// Longest keyword that `text` starts with, ending on a word boundary.
    fn prefix_keyword(&self, text: &str) -> Option<&str> {
        let lower = text.to_lowercase();
        self.compiled
            .iter()
            .map(|(k, _)| k.as_str())
            .find(|k| lower.starts_with(k) && lower[k.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric()))
    }
}

fn explicit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:in|using)\s+").expect("static regex"))
}

fn domain_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b[a-z0-9-]+(?:\.[a-z0-9-]+)*\.(?:com|org|net|edu|gov|io|dev|co|uk|de|info)\b")
            .expect("static regex")
    })
}

/// Three passes: an explicit "in X" / "using X" reference, then a bare
/// domain (routed to the browser), then the longest keyword anywhere.
pub fn resolve_intent(instruction: &str, dict: &KeywordDictionary) -> IntentResolution {
    let explicit =
        explicit_re().find_iter(instruction).filter_map(|m| dict.prefix_keyword(&instruction[m.end()..])).last();
    if let Some(app) = explicit.and_then(|k| dict.app(k)) {
        return IntentResolution { target_app: Some(app.clone()), method: ResolutionMethod::ExplicitContext };
    }
    if domain_re().is_match(instruction) {
        return IntentResolution { target_app: Some(dict.browser.clone()), method: ResolutionMethod::DomainSuffix };
    }
    for (k, re) in &dict.compiled {
        if re.is_match(instruction) {
            if let Some(app) = dict.app(k) {
                return IntentResolution { target_app: Some(app.clone()), method: ResolutionMethod::Keyword };
            }
        }
    }
    IntentResolution::none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::fixtures;

    fn dict() -> KeywordDictionary {
        KeywordDictionary::load(&fixtures().join("keywords.json")).unwrap()
    }

    fn resolve(s: &str) -> (Option<String>, ResolutionMethod) {
        let r = resolve_intent(s, &dict());
        (r.target_app, r.method)
    }

    #[test]
    fn explicit_reference() {
        assert_eq!(resolve("Search for weather in Chrome"), (Some("chrome".into()), ResolutionMethod::ExplicitContext));
        assert_eq!(resolve("Write it down using notes"), (Some("notes".into()), ResolutionMethod::ExplicitContext));
    }

    #[test]
    fn domain_goes_to_browser() {
        assert_eq!(resolve("Open youtube.com"), (Some("chrome".into()), ResolutionMethod::DomainSuffix));
    }

    #[test]
    fn longest_keyword_wins() {
        assert_eq!(resolve("Save this phone number"), (Some("contacts".into()), ResolutionMethod::Keyword));
        assert_eq!(resolve("Pick up the phone"), (Some("dialer".into()), ResolutionMethod::Keyword));
    }

    #[test]
    fn keywords_need_word_boundaries() {
        assert_eq!(resolve("Recall the notebook"), (None, ResolutionMethod::None));
    }
}
