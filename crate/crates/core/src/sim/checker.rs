use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scenario::{expand_template, value_to_string, CheckerSpec, Comparator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckStatus {
    Verified,
    NotSatisfied,
    CheckError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub status: CheckStatus,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

impl CheckResult {
    pub fn verified() -> Self {
        Self { status: CheckStatus::Verified, message: String::new() }
    }

    pub fn not_satisfied(message: impl Into<String>) -> Self {
        Self { status: CheckStatus::NotSatisfied, message: message.into() }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { status: CheckStatus::CheckError, message: message.into() }
    }

    pub fn is_verified(&self) -> bool {
        self.status == CheckStatus::Verified
    }
}

fn time_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(\d{1,2})(?:[:.](\d{2}))?\s*(a\.?m\.?|p\.?m\.?)?\s*$").expect("static regex")
    })
}

/// Normalizes clock times such as `7:30 AM`, `19:05` or `6` to `HH:MM`.
pub fn normalize_time(s: &str) -> Option<String> {
    let caps = time_regex().captures(s)?;
    let mut hour: u32 = caps[1].parse().ok()?;
    let minute: u32 = caps.get(2).map_or(Some(0), |m| m.as_str().parse().ok())?;
    if let Some(m) = caps.get(3) {
        if !(1..=12).contains(&hour) {
            return None;
        }
        let pm = m.as_str().to_ascii_lowercase().starts_with('p');
        hour %= 12;
        if pm {
            hour += 12;
        }
    }
    (hour < 24 && minute < 60).then(|| format!("{hour:02}:{minute:02}"))
}

fn items(v: &Value) -> Vec<String> {
    match v {
        Value::Array(xs) => xs.iter().map(value_to_string).collect(),
        other => vec![value_to_string(other)],
    }
}

/// Evaluates one checker against an app's persistent state.
pub(crate) fn evaluate(
    spec: &CheckerSpec,
    state: &BTreeMap<String, Value>,
    expected: &BTreeMap<String, String>,
) -> CheckResult {
    let (want, missing) = expand_template(&spec.expected, |k| expected.get(k).cloned());
    if !missing.is_empty() {
        return CheckResult::error(format!("missing expected binding(s): {}", missing.join(", ")));
    }
    let actual = state.get(&spec.state_key).cloned().unwrap_or(Value::Null);
    let key = &spec.state_key;
    match spec.comparator {
        Comparator::Equals => {
            let got = value_to_string(&actual);
            if got == want {
                CheckResult::verified()
            } else {
                CheckResult::not_satisfied(format!("{key} is '{got}', expected '{want}'"))
            }
        }
        Comparator::EqualsIgnoreCase => {
            let got = value_to_string(&actual);
            if got.eq_ignore_ascii_case(&want) {
                CheckResult::verified()
            } else {
                CheckResult::not_satisfied(format!("{key} is '{got}', expected '{want}'"))
            }
        }
        Comparator::Contains => {
            if items(&actual).contains(&want) {
                CheckResult::verified()
            } else {
                CheckResult::not_satisfied(format!("{key} does not contain '{want}'"))
            }
        }
        Comparator::NotContains => {
            if items(&actual).contains(&want) {
                CheckResult::not_satisfied(format!("{key} still contains '{want}'"))
            } else {
                CheckResult::verified()
            }
        }
        Comparator::ContainsTime => {
            let Some(target) = normalize_time(&want) else {
                return CheckResult::error(format!("expected time '{want}' is not a clock time"));
            };
            if items(&actual).iter().filter_map(|x| normalize_time(x)).any(|t| t == target) {
                CheckResult::verified()
            } else {
                CheckResult::not_satisfied(format!("{key} has no entry for {target}"))
            }
        }
    }
}
