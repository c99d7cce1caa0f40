//! Weighted locator scoring and element finding.
//!
//! Scores are kept as integer weight sums (hundredths) so threshold
//! comparisons and ties are exact; the `f64` is derived only for display
//! and for callers that want a plain number.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compiler::{ElementLocator, Feature};
use crate::ui::{UINode, UITree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Strict,
    Relaxed,
}

impl Threshold {
    pub const fn pct(self) -> u32 {
        match self {
            Threshold::Strict => 50,
            Threshold::Relaxed => 30,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.pct()) / 100.0
    }
}

/// Matched and active weight sums, in hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub matched: u32,
    pub active: u32,
}

impl Score {
    pub fn value(self) -> f64 {
        if self.active == 0 {
            0.0
        } else {
            f64::from(self.matched) / f64::from(self.active)
        }
    }

    pub fn passes(self, tau: Threshold) -> bool {
        self.active > 0 && self.matched * 100 >= tau.pct() * self.active
    }

    /// Exact comparison of the two fractions.
    pub fn beats(self, other: Score) -> bool {
        u64::from(self.matched) * u64::from(other.active) > u64::from(other.matched) * u64::from(self.active)
    }
}

fn feature_matches(node: &UINode, loc: &ElementLocator, f: Feature) -> bool {
    let eq = |want: &Option<String>, got: &Option<String>| want.is_some() && want == got;
    match f {
        Feature::ResourceId => eq(&loc.resource_id, &node.resource_id),
        Feature::Text => match (&loc.text, &node.text) {
            (Some(w), Some(g)) => g.contains(w.as_str()),
            _ => false,
        },
        Feature::ContentDesc => match (&loc.content_desc, &node.content_desc) {
            (Some(w), Some(g)) => g.contains(w.as_str()),
            _ => false,
        },
        Feature::ClassName => loc.class_name.as_deref() == Some(node.class_name.as_str()),
        Feature::ParentClass => eq(&loc.parent_class, &node.parent_class),
        Feature::SiblingIndex => loc.sibling_index == Some(node.sibling_index),
    }
}

/// Score of `node` against a locator whose placeholders are already
/// substituted.
pub fn score_parts(node: &UINode, loc: &ElementLocator) -> Score {
    let mut s = Score { matched: 0, active: 0 };
    for f in loc.active_features() {
        s.active += f.weight_pct();
        if feature_matches(node, loc, f) {
            s.matched += f.weight_pct();
        }
    }
    s
}

pub fn score_element(node: &UINode, loc: &ElementLocator, bindings: &BTreeMap<String, String>) -> f64 {
    score_parts(node, &loc.substituted(bindings)).value()
}

/// Best-scoring node at or above `tau`, as `(node index, score)`. Ties go
/// to the earliest node in BFS order.
pub fn find_element(
    tree: &UITree,
    loc: &ElementLocator,
    tau: Threshold,
    bindings: &BTreeMap<String, String>,
) -> Option<(usize, f64)> {
    let loc = loc.substituted(bindings);
    let mut best: Option<(usize, Score)> = None;
    for (i, node) in tree.flatten().into_iter().enumerate() {
        let s = score_parts(node, &loc);
        if best.is_none_or(|(_, b)| s.beats(b)) {
            best = Some((i, s));
        }
    }
    best.filter(|(_, s)| s.passes(tau)).map(|(i, s)| (i, s.value()))
}
