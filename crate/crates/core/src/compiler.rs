//! Turns a verified trajectory into a replayable skill template.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{FeatureSnapshot, Trajectory};
use crate::policy::{CountingPolicy, PolicyRequest, Role};
use crate::sim::ActionKind;
use crate::ui::{make_descriptor, Rect, UINode, UIStateDescriptor, UITree};

/// Highest version a skill id may reach through recompilation.
pub const V_MAX: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotType {
    Text,
    Time,
    Phone,
    Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub slot_type: SlotType,
    pub placeholder: String,
}

impl Slot {
    pub fn new(name: impl Into<String>, slot_type: SlotType) -> Self {
        let name = name.into();
        let placeholder = format!("{{{name}}}");
        Self { name, slot_type, placeholder }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    ResourceId,
    Text,
    ContentDesc,
    ClassName,
    ParentClass,
    SiblingIndex,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::ResourceId,
        Feature::Text,
        Feature::ContentDesc,
        Feature::ClassName,
        Feature::ParentClass,
        Feature::SiblingIndex,
    ];

    /// Weight in hundredths. The six weights sum to 100.
    pub const fn weight_pct(self) -> u32 {
        match self {
            Feature::ResourceId => 40,
            Feature::Text => 20,
            Feature::ContentDesc => 15,
            Feature::ClassName => 10,
            Feature::ParentClass => 10,
            Feature::SiblingIndex => 5,
        }
    }

    pub fn weight(self) -> f64 {
        f64::from(self.weight_pct()) / 100.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementLocator {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sibling_index: Option<usize>,
}

impl ElementLocator {
    pub fn is_active(&self, f: Feature) -> bool {
        match f {
            Feature::ResourceId => self.resource_id.is_some(),
            Feature::Text => self.text.is_some(),
            Feature::ContentDesc => self.content_desc.is_some(),
            Feature::ClassName => self.class_name.is_some(),
            Feature::ParentClass => self.parent_class.is_some(),
            Feature::SiblingIndex => self.sibling_index.is_some(),
        }
    }

    pub fn active_features(&self) -> Vec<Feature> {
        Feature::ALL.into_iter().filter(|f| self.is_active(*f)).collect()
    }

    /// Replaces every placeholder in the text feature with its bound value.
    pub fn substituted(&self, bindings: &BTreeMap<String, String>) -> Self {
        let mut out = self.clone();
        if let Some(t) = &self.text {
            out.text = Some(substitute(t, bindings));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<ElementLocator>,
    pub descriptor: UIStateDescriptor,
    pub action_kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillTemplate {
    pub skill_id: String,
    pub intent_pattern: String,
    pub slots: Vec<Slot>,
    pub steps: Vec<SkillStep>,
    pub target_app: String,
    pub version: u32,
    pub n_succ: u64,
    pub n_fail: u64,
    pub needs_recompile: bool,
}

impl SkillTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.version == 0 || self.version > V_MAX {
            return Err(Error::Precondition(format!("version {} outside 1..={V_MAX}", self.version)));
        }
        let mut in_pattern = placeholders(&self.intent_pattern);
        in_pattern.sort();
        in_pattern.dedup();
        let mut declared: Vec<String> = self.slots.iter().map(|s| s.name.clone()).collect();
        declared.sort();
        if in_pattern != declared {
            return Err(Error::SlotMismatch(format!(
                "pattern placeholders {in_pattern:?} differ from declared slots {declared:?}"
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.locator.is_some() != s.action_kind.targets_element() {
                return Err(Error::Precondition(format!(
                    "step {i}: locator presence does not match {:?}",
                    s.action_kind
                )));
            }
        }
        Ok(())
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Intent pattern with placeholders removed and whitespace collapsed.
    pub fn stripped_pattern(&self) -> String {
        strip_placeholders(&self.intent_pattern)
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

pub fn is_slot_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

/// Placeholder names in order of appearance.
pub fn placeholders(s: &str) -> Vec<String> {
    placeholder_re().captures_iter(s).map(|c| c[1].to_string()).collect()
}

pub fn strip_placeholders(s: &str) -> String {
    placeholder_re().replace_all(s, " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fills `{name}` placeholders; unknown names are left as written.
pub fn substitute(s: &str, bindings: &BTreeMap<String, String>) -> String {
    placeholder_re()
        .replace_all(s, |c: &regex::Captures| bindings.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_string()))
        .into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionField {
    Params,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSubstitution {
    /// Index into the trajectory's steps.
    pub step: usize,
    pub field: SubstitutionField,
    pub slot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotExtraction {
    pub intent_pattern: String,
    pub slots: Vec<Slot>,
    /// Value each slot had in the recorded trajectory.
    pub values: BTreeMap<String, String>,
    pub substitutions: Vec<StepSubstitution>,
}

fn fallback_tree(app: &str) -> UITree {
    UITree::new(UINode::new("android.widget.FrameLayout", Rect::new(0, 0, 1, 1)), "unknown", app)
}

/// One SLOT_EXTRACT call, then the generalized pattern.
pub fn extract_slots(policy: &mut CountingPolicy, trajectory: &Trajectory) -> Result<SlotExtraction> {
    if !trajectory.verified {
        return Err(Error::Precondition("trajectory is not verified".into()));
    }
    let tree = trajectory
        .steps
        .first()
        .map(|s| s.tree_before.clone())
        .unwrap_or_else(|| fallback_tree(&trajectory.target_app));
    let resp = policy.decide(&PolicyRequest::new(Role::SlotExtract, trajectory.instruction.clone(), tree))?;
    let bindings = resp.slot_bindings.unwrap_or_default();
    let instruction = &trajectory.instruction;

    // longest value first so a short value never claims part of a longer one
    let mut order: Vec<(&String, &crate::policy::SlotBinding)> = bindings.iter().collect();
    order.sort_by(|a, b| b.1.value.len().cmp(&a.1.value.len()).then_with(|| a.0.cmp(b.0)));
    let mut claimed: Vec<(usize, usize, &str)> = Vec::new();
    for (name, b) in &order {
        if !is_slot_name(name) {
            return Err(Error::SlotMismatch(format!("slot name '{name}' is not [a-z_]+")));
        }
        if b.value.is_empty() {
            return Err(Error::SlotMismatch(format!("slot '{name}' has an empty value")));
        }
        let start = instruction
            .match_indices(b.value.as_str())
            .map(|(i, _)| i)
            .find(|&i| {
                let end = i + b.value.len();
                claimed.iter().all(|&(s, e, _)| end <= s || i >= e)
            })
            .ok_or_else(|| {
                Error::SlotMismatch(format!("value '{}' of slot '{name}' does not occur in the instruction", b.value))
            })?;
        claimed.push((start, start + b.value.len(), name.as_str()));
    }
    claimed.sort();
    let mut pattern = String::new();
    let mut pos = 0;
    for &(s, e, name) in &claimed {
        pattern.push_str(&instruction[pos..s]);
        pattern.push('{');
        pattern.push_str(name);
        pattern.push('}');
        pos = e;
    }
    pattern.push_str(&instruction[pos..]);

    let mut substitutions = Vec::new();
    for (i, step) in trajectory.steps.iter().enumerate() {
        for (name, b) in &order {
            let in_params = step.action.kind == ActionKind::Input
                && step.action.payload.as_deref().is_some_and(|p| p.contains(b.value.as_str()));
            if in_params {
                substitutions.push(StepSubstitution {
                    step: i,
                    field: SubstitutionField::Params,
                    slot: name.to_string(),
                });
            }
            let in_text = step
                .target_features
                .as_ref()
                .and_then(|f| f.text.as_deref())
                .is_some_and(|t| t.contains(b.value.as_str()));
            if in_text {
                substitutions.push(StepSubstitution {
                    step: i,
                    field: SubstitutionField::Text,
                    slot: name.to_string(),
                });
            }
        }
    }

    Ok(SlotExtraction {
        intent_pattern: pattern,
        slots: claimed.iter().map(|&(_, _, n)| Slot::new(n, bindings[n].slot_type)).collect(),
        values: bindings.into_iter().map(|(k, b)| (k, b.value)).collect(),
        substitutions,
    })
}

/// Copies the non-null features of a target snapshot. `input_slot` is the
/// `(value, placeholder)` pair when the step types exactly a slot value.
pub fn build_locator(features: &FeatureSnapshot, input_slot: Option<(&str, &str)>) -> Result<ElementLocator> {
    let nonempty = |v: &Option<String>| v.clone().filter(|s| !s.is_empty());
    let mut loc = ElementLocator {
        resource_id: nonempty(&features.resource_id),
        text: nonempty(&features.text),
        content_desc: nonempty(&features.content_desc),
        class_name: nonempty(&features.class_name),
        parent_class: nonempty(&features.parent_class),
        sibling_index: features.sibling_index,
    };
    if loc.active_features().is_empty() {
        return Err(Error::UnlocatableElement);
    }
    if let (Some(_), Some((_, placeholder))) = (&loc.text, input_slot) {
        loc.text = Some(placeholder.to_string());
    }
    Ok(loc)
}

fn replace_first(s: &str, value: &str, placeholder: &str) -> String {
    s.replacen(value, placeholder, 1)
}

/// Compiles a verified trajectory. DONE steps and steps the device
/// rejected are left out of the skeleton; everything else is kept.
pub fn compile(policy: &mut CountingPolicy, trajectory: &Trajectory, skill_id: &str) -> Result<SkillTemplate> {
    let ext = extract_slots(policy, trajectory)?;
    let mut steps = Vec::new();
    for (i, ts) in trajectory.steps.iter().enumerate() {
        let kind = ts.action.kind;
        if !ts.success || matches!(kind, ActionKind::Done | ActionKind::Fail) {
            continue;
        }
        let subs: Vec<&StepSubstitution> = ext.substitutions.iter().filter(|s| s.step == i).collect();
        let slot_of = |field| subs.iter().find(|s| s.field == field).map(|s| s.slot.as_str());
        let payload = ts.action.payload.as_deref();
        let exact_input = slot_of(SubstitutionField::Params)
            .filter(|name| kind == ActionKind::Input && payload == ext.values.get(*name).map(String::as_str));

        let mut params = match kind {
            ActionKind::Launch | ActionKind::Input | ActionKind::Scroll => ts.action.payload.clone(),
            _ => None,
        };
        if let (Some(p), Some(name)) = (&params, slot_of(SubstitutionField::Params)) {
            params = Some(replace_first(p, &ext.values[name], &format!("{{{name}}}")));
        }

        let locator = if kind.targets_element() {
            let features = ts.target_features.clone().unwrap_or_default();
            let placeholder = exact_input.map(|n| format!("{{{n}}}"));
            let input_slot = exact_input.zip(placeholder.as_deref()).map(|(n, p)| (ext.values[n].as_str(), p));
            let mut loc = build_locator(&features, input_slot)?;
            if exact_input.is_none() {
                if let (Some(t), Some(name)) = (&loc.text, slot_of(SubstitutionField::Text)) {
                    loc.text = Some(replace_first(t, &ext.values[name], &format!("{{{name}}}")));
                }
            }
            Some(loc)
        } else {
            None
        };

        steps.push(SkillStep { locator, descriptor: make_descriptor(&ts.tree_before), action_kind: kind, params });
    }
    let template = SkillTemplate {
        skill_id: skill_id.to_string(),
        intent_pattern: ext.intent_pattern,
        slots: ext.slots,
        steps,
        target_app: trajectory.target_app.clone(),
        version: 1,
        n_succ: 0,
        n_fail: 0,
        needs_recompile: false,
    };
    template.validate()?;
    Ok(template)
}
