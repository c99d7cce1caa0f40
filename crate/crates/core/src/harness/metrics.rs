//! Path classification and the per-round metric definitions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::matcher::{MatchKind, MatchStrategy};
use crate::orchestrator::EpisodeOutcome;
use crate::replayer::ReplayStatus;

use super::{RoundResult, Variation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecutionPath {
    L2Pure,
    L2Semantic,
    L2StepFallback,
    L2ToL1,
    L1Fresh,
}

impl ExecutionPath {
    pub const ALL: [ExecutionPath; 5] = [
        ExecutionPath::L2Pure,
        ExecutionPath::L2Semantic,
        ExecutionPath::L2StepFallback,
        ExecutionPath::L2ToL1,
        ExecutionPath::L1Fresh,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExecutionPath::L2Pure => "L2: Pure replay",
            ExecutionPath::L2Semantic => "L2 + semantic match",
            ExecutionPath::L2StepFallback => "L2 + step-level fallback",
            ExecutionPath::L2ToL1 => "L2 -> L1 fallback",
            ExecutionPath::L1Fresh => "L1: Fresh",
        }
    }

    pub fn is_layer2(self) -> bool {
        matches!(self, ExecutionPath::L2Pure | ExecutionPath::L2Semantic | ExecutionPath::L2StepFallback)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub status: ReplayStatus,
    pub verified: bool,
    pub fallback_calls: u32,
    pub policy_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshSummary {
    pub outcome: EpisodeOutcome,
    pub policy_calls: u64,
    /// Steps handed over from a replay that stopped short.
    pub prior_steps: usize,
}

/// What a round did, in the order it happened. Everything reported about
/// a round's path is derived from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_kind: Option<MatchKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_strategy: Option<MatchStrategy>,
    pub match_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_violation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplaySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh: Option<FreshSummary>,
}

pub fn classify(trace: &RoundTrace) -> ExecutionPath {
    match (&trace.replay, &trace.fresh) {
        (None, _) => ExecutionPath::L1Fresh,
        (Some(_), Some(_)) => ExecutionPath::L2ToL1,
        (Some(r), None) if r.fallback_calls > 0 => ExecutionPath::L2StepFallback,
        (Some(_), None) if trace.match_strategy == Some(MatchStrategy::Embedding) => ExecutionPath::L2Semantic,
        (Some(_), None) => ExecutionPath::L2Pure,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rounds: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub total_policy_calls: u64,
    pub mean_policy_calls: f64,
    pub zero_llm_rate: f64,
    /// Rounds outside P1, the denominator of `match_rate`.
    pub match_eligible: usize,
    pub match_rate: f64,
    pub l2_attempts: usize,
    pub fallback_rate: f64,
    pub layer_distribution: BTreeMap<ExecutionPath, usize>,
}

impl MetricsSummary {
    pub fn of<'a>(rounds: impl IntoIterator<Item = &'a RoundResult>) -> Self {
        let rounds: Vec<&RoundResult> = rounds.into_iter().collect();
        let n = rounds.len();
        let successes = rounds.iter().filter(|r| r.success).count();
        let total_policy_calls: u64 = rounds.iter().map(|r| r.policy_calls).sum();
        let zero = rounds.iter().filter(|r| r.policy_calls == 0).count();
        let eligible: Vec<_> = rounds.iter().filter(|r| r.phase != "P1").collect();
        let full = eligible.iter().filter(|r| r.trace.match_kind == Some(MatchKind::Full)).count();
        let attempts = rounds.iter().filter(|r| r.trace.replay.is_some()).count();
        let degraded = rounds.iter().filter(|r| r.execution_path == ExecutionPath::L2ToL1).count();
        let mut layer_distribution: BTreeMap<ExecutionPath, usize> =
            ExecutionPath::ALL.iter().map(|p| (*p, 0)).collect();
        for r in &rounds {
            *layer_distribution.entry(r.execution_path).or_default() += 1;
        }
        Self {
            rounds: n,
            successes,
            success_rate: ratio(successes, n),
            total_policy_calls,
            mean_policy_calls: if n == 0 { 0.0 } else { total_policy_calls as f64 / n as f64 },
            zero_llm_rate: ratio(zero, n),
            match_eligible: eligible.len(),
            match_rate: ratio(full, eligible.len()),
            l2_attempts: attempts,
            fallback_rate: ratio(degraded, attempts),
            layer_distribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: MetricsSummary,
    pub per_phase: BTreeMap<String, MetricsSummary>,
    pub per_variation: BTreeMap<Variation, MetricsSummary>,
}

pub fn report(results: &[RoundResult]) -> MetricsReport {
    let mut phases: BTreeMap<String, Vec<&RoundResult>> = BTreeMap::new();
    let mut variations: BTreeMap<Variation, Vec<&RoundResult>> = BTreeMap::new();
    for r in results {
        phases.entry(r.phase.clone()).or_default().push(r);
        variations.entry(r.variation).or_default().push(r);
    }
    MetricsReport {
        overall: MetricsSummary::of(results),
        per_phase: phases.into_iter().map(|(k, v)| (k, MetricsSummary::of(v))).collect(),
        per_variation: variations.into_iter().map(|(k, v)| (k, MetricsSummary::of(v))).collect(),
    }
}

fn row(out: &mut String, label: &str, rounds: &[&RoundResult]) {
    let n = rounds.len();
    let ok = rounds.iter().filter(|r| r.success).count();
    let calls: u64 = rounds.iter().map(|r| r.policy_calls).sum();
    let (succ, mean) = if n == 0 {
        ("-".to_string(), "-".to_string())
    } else {
        (format!("{:.1}%", 100.0 * ok as f64 / n as f64), format!("{:.1}", calls as f64 / n as f64))
    };
    writeln!(out, "{label:<28} {n:>5} {succ:>8} {mean:>8}").unwrap();
}

/// Aligned text table of rounds by execution path, then by phase.
pub fn render_table(results: &[RoundResult]) -> String {
    let mut out = String::new();
    let rule = "-".repeat(52);
    writeln!(out, "{:<28} {:>5} {:>8} {:>8}", "Execution path", "n", "Success", "Calls").unwrap();
    writeln!(out, "{rule}").unwrap();
    let by = |p: ExecutionPath| results.iter().filter(|r| r.execution_path == p).collect::<Vec<_>>();
    for p in [ExecutionPath::L2Pure, ExecutionPath::L2Semantic, ExecutionPath::L2StepFallback] {
        row(&mut out, p.label(), &by(p));
    }
    writeln!(out, "{rule}").unwrap();
    row(&mut out, "All Layer 2 variants", &results.iter().filter(|r| r.execution_path.is_layer2()).collect::<Vec<_>>());
    writeln!(out, "{rule}").unwrap();
    for p in [ExecutionPath::L2ToL1, ExecutionPath::L1Fresh] {
        row(&mut out, p.label(), &by(p));
    }
    writeln!(out, "{rule}").unwrap();
    row(&mut out, "All rounds", &results.iter().collect::<Vec<_>>());

    let mut phases: BTreeMap<&str, Vec<&RoundResult>> = BTreeMap::new();
    for r in results {
        phases.entry(r.phase.as_str()).or_default().push(r);
    }
    if !phases.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "{:<28} {:>5} {:>8} {:>8}", "Phase", "n", "Success", "Calls").unwrap();
        writeln!(out, "{rule}").unwrap();
        for (phase, rs) in &phases {
            row(&mut out, phase, rs);
        }
    }
    out
}
