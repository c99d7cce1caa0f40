//! Durable skill library plus the failure-driven learning loop: outcome
//! counters, failure records, guard synthesis and recompilation.
//!
//! The store is one JSON document on disk. Every mutation rewrites it
//! through a temporary file in the same directory followed by a rename, so
//! a crash leaves either the old or the new document. Templates are kept
//! as serialized strings, which makes a damaged record detectable (and
//! nameable) without losing the rest of the library.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compiler::{SkillTemplate, V_MAX};
use crate::error::{Error, Result};
use crate::replayer::Severity;
use crate::sim::HOME_APP;
use crate::ui::{UIStateDescriptor, UITree};

/// Recurrences of one (step, severity) pattern needed to emit a guard.
pub const GUARD_THRESHOLD: usize = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillStats {
    pub n_succ: u64,
    pub n_fail: u64,
    /// Store sequence number of the latest success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_success: Option<u64>,
}

impl SkillStats {
    pub fn r_fail(&self) -> f64 {
        let n = self.n_succ + self.n_fail;
        if n == 0 {
            0.0
        } else {
            self.n_fail as f64 / n as f64
        }
    }

    /// `r_fail > 0.5`, compared exactly.
    pub fn over_threshold(&self) -> bool {
        self.n_fail > self.n_succ
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub skill_id: String,
    pub version: u32,
    /// Skeleton index of the failing step; the skeleton length marks a
    /// failure after the last step (the checker rejected the result).
    pub step_index: usize,
    pub severity: Severity,
    pub descriptor_at_failure: UIStateDescriptor,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuardPredicate {
    NoDialogOverlay,
    ForegroundIn { apps: Vec<String> },
    KeyElementPresent { resource_id: String },
}

impl GuardPredicate {
    pub fn holds(&self, tree: &UITree) -> bool {
        match self {
            GuardPredicate::NoDialogOverlay => tree.dialogs().is_empty(),
            GuardPredicate::ForegroundIn { apps } => apps.contains(&tree.foreground_app),
            GuardPredicate::KeyElementPresent { resource_id } => {
                tree.flatten().iter().any(|n| n.resource_id.as_deref() == Some(resource_id.as_str()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardCondition {
    pub skill_id: String,
    pub version: u32,
    pub step_index: usize,
    pub severity: Severity,
    pub predicate: GuardPredicate,
    pub source_failure_count: usize,
}

/// One guard per (step, severity) pattern seen at least twice. Dialog
/// recurrences guard against overlays; app mismatches guard the starting
/// foreground app. Other severities describe in-app drift that a
/// pre-replay check cannot see, so they produce no guard.
pub fn synthesize_guards(skill: &SkillTemplate, failures: &[FailureRecord]) -> Vec<GuardCondition> {
    let mut groups: BTreeMap<(usize, Severity), usize> = BTreeMap::new();
    for f in failures.iter().filter(|f| f.skill_id == skill.skill_id && f.version == skill.version) {
        *groups.entry((f.step_index, f.severity)).or_default() += 1;
    }
    groups
        .into_iter()
        .filter(|(_, n)| *n >= GUARD_THRESHOLD)
        .filter_map(|((step_index, severity), n)| {
            let predicate = match severity {
                Severity::Moderate => GuardPredicate::NoDialogOverlay,
                Severity::Major => {
                    GuardPredicate::ForegroundIn { apps: vec![skill.target_app.clone(), HOME_APP.to_string()] }
                }
                Severity::Minor | Severity::None => return None,
            };
            Some(GuardCondition {
                skill_id: skill.skill_id.clone(),
                version: skill.version,
                step_index,
                severity,
                predicate,
                source_failure_count: n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecompileDecision {
    Recompile,
    VersionCapReached,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Meta {
    next_skill: u64,
    seq: u64,
    #[serde(default)]
    pending_recompile: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Document {
    #[serde(default)]
    skills: BTreeMap<String, String>,
    #[serde(default)]
    stats: BTreeMap<String, SkillStats>,
    #[serde(default)]
    failures: BTreeMap<String, Vec<FailureRecord>>,
    #[serde(default)]
    guards: BTreeMap<String, Vec<GuardCondition>>,
    #[serde(default)]
    embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    meta: Meta,
}

fn version_key(skill_id: &str, version: u32) -> String {
    format!("{skill_id}/v{version}")
}

fn split_key(key: &str) -> Option<(&str, u32)> {
    let (id, v) = key.rsplit_once("/v")?;
    Some((id, v.parse().ok()?))
}

#[derive(Debug, Clone)]
pub struct SkillStore {
    path: Option<PathBuf>,
    doc: Document,
}

impl SkillStore {
    pub fn in_memory() -> Self {
        Self { path: None, doc: Document::default() }
    }

    /// Opens the store file, creating an empty store if it does not exist.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let doc = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::StoreCorrupt { key: path.display().to_string(), reason: e.to_string() })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Document::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { path: Some(path), doc })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn commit(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.export_string().as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    /// Applies `f` and commits; on error the in-memory state is rolled back.
    fn transact<T>(&mut self, f: impl FnOnce(&mut Document) -> Result<T>) -> Result<T> {
        let saved = self.doc.clone();
        let out = f(&mut self.doc).and_then(|v| self.commit().map(|_| v));
        if out.is_err() {
            self.doc = saved;
        }
        out
    }

    pub fn export_string(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("store document serializes") + "\n"
    }

    pub fn export(&self) -> serde_json::Value {
        serde_json::to_value(&self.doc).expect("store document serializes")
    }

    pub fn export_to(&self, out: &Path) -> Result<()> {
        std::fs::write(out, self.export_string())?;
        Ok(())
    }

    /// Reserves a fresh skill id.
    pub fn next_skill_id(&mut self) -> Result<String> {
        self.transact(|d| {
            d.meta.next_skill += 1;
            Ok(format!("skill-{:04}", d.meta.next_skill))
        })
    }

    pub fn latest_version(&self, skill_id: &str) -> Option<u32> {
        self.doc.skills.keys().filter_map(|k| split_key(k)).filter(|(id, _)| *id == skill_id).map(|(_, v)| v).max()
    }

    /// Stores a new version. Versions of one id must be consecutive from 1.
    pub fn store(&mut self, template: &SkillTemplate) -> Result<()> {
        template.validate()?;
        let expected = self.latest_version(&template.skill_id).map_or(1, |v| v + 1);
        if template.version != expected {
            return Err(Error::Precondition(format!(
                "{} must be stored as version {expected}, got {}",
                template.skill_id, template.version
            )));
        }
        let json = serde_json::to_string(template)?;
        let key = version_key(&template.skill_id, template.version);
        let stats = SkillStats { n_succ: template.n_succ, n_fail: template.n_fail, last_success: None };
        self.transact(|d| {
            d.skills.insert(key.clone(), json);
            d.stats.insert(key, stats);
            d.meta.pending_recompile.remove(&template.skill_id);
            Ok(())
        })
    }

    /// Serialized form of a stored version, exactly as written.
    pub fn raw(&self, skill_id: &str, version: u32) -> Result<&str> {
        self.doc
            .skills
            .get(&version_key(skill_id, version))
            .map(String::as_str)
            .ok_or_else(|| Error::NoSuchSkill(format!("{skill_id} v{version}")))
    }

    fn parse(key: &str, json: &str) -> Result<SkillTemplate> {
        serde_json::from_str(json)
            .map_err(|e| Error::StoreCorrupt { key: format!("skills/{key}"), reason: e.to_string() })
    }

    /// Loads one version, or the latest when `version` is `None`.
    pub fn load(&self, skill_id: &str, version: Option<u32>) -> Result<SkillTemplate> {
        let v = match version {
            Some(v) => v,
            None => self.latest_version(skill_id).ok_or_else(|| Error::NoSuchSkill(skill_id.to_string()))?,
        };
        Self::parse(&version_key(skill_id, v), self.raw(skill_id, v)?)
    }

    /// Latest version of every skill, flagged ones included, by id.
    pub fn list_skills(&self, target_app: Option<&str>) -> Result<Vec<SkillTemplate>> {
        let mut latest: BTreeMap<&str, (u32, &str)> = BTreeMap::new();
        for (k, json) in &self.doc.skills {
            let (id, v) = split_key(k).ok_or_else(|| Error::StoreCorrupt {
                key: format!("skills/{k}"),
                reason: "key is not <skill_id>/v<version>".into(),
            })?;
            if latest.get(id).is_none_or(|(lv, _)| v > *lv) {
                latest.insert(id, (v, json));
            }
        }
        let mut out = Vec::new();
        for (id, (v, json)) in latest {
            let t = Self::parse(&version_key(id, v), json)?;
            if target_app.is_none_or(|a| a == t.target_app) {
                out.push(t);
            }
        }
        Ok(out)
    }

    pub fn stats(&self, skill_id: &str, version: u32) -> Result<SkillStats> {
        self.doc
            .stats
            .get(&version_key(skill_id, version))
            .copied()
            .ok_or_else(|| Error::NoSuchSkill(format!("{skill_id} v{version}")))
    }

    pub fn failures(&self, skill_id: &str) -> &[FailureRecord] {
        self.doc.failures.get(skill_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn guards(&self, skill_id: &str) -> &[GuardCondition] {
        self.doc.guards.get(skill_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Updates counters, persists the failure context and raises the
    /// recompile flag when the failure rate exceeds one half.
    pub fn record_outcome(
        &mut self,
        skill_id: &str,
        version: u32,
        success: bool,
        failure: Option<FailureRecord>,
    ) -> Result<SkillStats> {
        let key = version_key(skill_id, version);
        let json = self.raw(skill_id, version)?.to_string();
        let mut template = Self::parse(&key, &json)?;
        if let Some(f) = &failure {
            if f.step_index > template.steps.len() {
                return Err(Error::Precondition(format!(
                    "failure step {} beyond skeleton of {} steps",
                    f.step_index,
                    template.steps.len()
                )));
            }
        }
        self.transact(|d| {
            d.meta.seq += 1;
            let stats = d.stats.entry(key.clone()).or_default();
            if success {
                stats.n_succ += 1;
                stats.last_success = Some(d.meta.seq);
            } else {
                stats.n_fail += 1;
            }
            let stats = *stats;
            template.n_succ = stats.n_succ;
            template.n_fail = stats.n_fail;
            if stats.over_threshold() {
                template.needs_recompile = true;
            }
            if let Some(f) = failure {
                d.failures.entry(skill_id.to_string()).or_default().push(f);
                let all = d.failures.get(skill_id).map(Vec::as_slice).unwrap_or(&[]);
                let guards = synthesize_guards(&template, all);
                if guards.is_empty() {
                    d.guards.remove(skill_id);
                } else {
                    d.guards.insert(skill_id.to_string(), guards);
                }
            }
            d.skills.insert(key, serde_json::to_string(&template)?);
            Ok(stats)
        })
    }

    /// Decides whether a flagged skill may be recompiled. A RECOMPILE
    /// decision is remembered until the next version is stored.
    pub fn request_recompile(&mut self, skill_id: &str) -> Result<RecompileDecision> {
        let t = self.load(skill_id, None)?;
        if !t.needs_recompile {
            return Err(Error::NotFlagged(skill_id.to_string()));
        }
        if t.version >= V_MAX {
            return Ok(RecompileDecision::VersionCapReached);
        }
        self.transact(|d| {
            d.meta.pending_recompile.insert(skill_id.to_string());
            Ok(RecompileDecision::Recompile)
        })
    }

    pub fn recompile_pending(&self, skill_id: &str) -> bool {
        self.doc.meta.pending_recompile.contains(skill_id)
    }

    /// Stores `fresh` as the next version of `skill_id` with counters
    /// zeroed and the flag cleared.
    pub fn store_recompiled(&mut self, skill_id: &str, fresh: &SkillTemplate) -> Result<SkillTemplate> {
        if !self.recompile_pending(skill_id) {
            return Err(Error::NotFlagged(skill_id.to_string()));
        }
        let version = self.latest_version(skill_id).ok_or_else(|| Error::NoSuchSkill(skill_id.to_string()))? + 1;
        let next = SkillTemplate {
            skill_id: skill_id.to_string(),
            version,
            n_succ: 0,
            n_fail: 0,
            needs_recompile: false,
            ..fresh.clone()
        };
        self.store(&next)?;
        self.transact(|d| {
            d.guards.remove(skill_id);
            Ok(())
        })?;
        Ok(next)
    }

    pub fn embedding(&self, key: &str) -> Option<&[f64]> {
        self.doc.embeddings.get(key).map(Vec::as_slice)
    }

    pub fn put_embedding(&mut self, key: String, v: Vec<f64>) -> Result<()> {
        self.transact(|d| {
            d.embeddings.insert(key, v);
            Ok(())
        })
    }
}

pub fn embedding_key(skill_id: &str, version: u32, provider: &str, dimension: usize) -> String {
    format!("{skill_id}/v{version}/{provider}/{dimension}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{ElementLocator, SkillStep, Slot, SlotType};
    use crate::sim::ActionKind;
    use proptest::prelude::*;

    fn template(id: &str, app: &str) -> SkillTemplate {
        let step = |kind, loc: Option<&str>| SkillStep {
            locator: loc.map(|r| ElementLocator { resource_id: Some(r.into()), ..Default::default() }),
            descriptor: UIStateDescriptor {
                activity: "alarms".into(),
                key_element_ids: vec!["fab".into()],
                element_count_bucket: 0,
            },
            action_kind: kind,
            params: None,
        };
        SkillTemplate {
            skill_id: id.into(),
            intent_pattern: "Set an alarm for {time}".into(),
            slots: vec![Slot::new("time", SlotType::Time)],
            steps: vec![
                SkillStep { params: Some("clock".into()), ..step(ActionKind::Launch, None) },
                step(ActionKind::Tap, Some("fab")),
                step(ActionKind::Tap, Some("time_input")),
                SkillStep { params: Some("{time}".into()), ..step(ActionKind::Input, Some("time_input")) },
                step(ActionKind::Tap, Some("picker_ok")),
            ],
            target_app: app.into(),
            version: 1,
            n_succ: 0,
            n_fail: 0,
            needs_recompile: false,
        }
    }

    fn failure(id: &str, step: usize, severity: Severity) -> FailureRecord {
        FailureRecord {
            skill_id: id.into(),
            version: 1,
            step_index: step,
            severity,
            descriptor_at_failure: UIStateDescriptor::default(),
            recovered: true,
        }
    }

    #[test]
    fn round_trip_is_byte_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skills.json");
        let mut s = SkillStore::open(&path).unwrap();
        let t = template("skill-0001", "clock");
        s.store(&t).unwrap();
        let reopened = SkillStore::open(&path).unwrap();
        let loaded = reopened.load("skill-0001", None).unwrap();
        assert_eq!(serde_json::to_string(&loaded).unwrap(), serde_json::to_string(&t).unwrap());
        assert_eq!(reopened.raw("skill-0001", 1).unwrap(), serde_json::to_string(&t).unwrap());
        assert_eq!(reopened.load("skill-0009", None).unwrap_err().code(), "no-such-skill");
    }

    #[test]
    fn corrupt_record_names_its_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skills.json");
        let mut s = SkillStore::open(&path).unwrap();
        s.store(&template("skill-0001", "clock")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["skills"]["skill-0001/v1"] = serde_json::Value::String("{\"skill_id\": 3".into());
        std::fs::write(&path, v.to_string()).unwrap();
        let s = SkillStore::open(&path).unwrap();
        match s.load("skill-0001", None).unwrap_err() {
            Error::StoreCorrupt { key, .. } => assert_eq!(key, "skills/skill-0001/v1"),
            e => panic!("unexpected {e}"),
        }
        std::fs::write(&path, "not json").unwrap();
        assert_eq!(SkillStore::open(&path).unwrap_err().code(), "store-corrupt");
    }

    #[test]
    fn flag_threshold_is_strict() {
        let mut s = SkillStore::in_memory();
        s.store(&template("skill-0001", "clock")).unwrap();
        s.record_outcome("skill-0001", 1, true, None).unwrap();
        let st = s.record_outcome("skill-0001", 1, false, None).unwrap();
        assert_eq!(st.r_fail(), 0.5);
        assert!(!s.load("skill-0001", None).unwrap().needs_recompile);
        let st = s.record_outcome("skill-0001", 1, false, None).unwrap();
        assert!((st.r_fail() - 2.0 / 3.0).abs() < 1e-12);
        assert!(s.load("skill-0001", None).unwrap().needs_recompile);
        s.record_outcome("skill-0001", 1, true, None).unwrap();
        let t = s.load("skill-0001", None).unwrap();
        assert!(t.needs_recompile, "flag survives a success");
        assert_eq!((t.n_succ, t.n_fail), (2, 2));
        assert_eq!(s.record_outcome("nope", 1, true, None).unwrap_err().code(), "no-such-skill");
    }

    #[test]
    fn recompile_lifecycle_and_cap() {
        let mut s = SkillStore::in_memory();
        s.store(&template("skill-0001", "clock")).unwrap();
        assert_eq!(s.request_recompile("skill-0001").unwrap_err().code(), "not-flagged");
        for v in 1..=3u32 {
            s.record_outcome("skill-0001", v, false, None).unwrap();
            let decision = s.request_recompile("skill-0001").unwrap();
            if v < 3 {
                assert_eq!(decision, RecompileDecision::Recompile);
                let next = s.store_recompiled("skill-0001", &template("skill-0001", "clock")).unwrap();
                assert_eq!((next.version, next.n_succ, next.n_fail, next.needs_recompile), (v + 1, 0, 0, false));
            } else {
                assert_eq!(decision, RecompileDecision::VersionCapReached);
            }
        }
        assert_eq!(s.latest_version("skill-0001"), Some(3));
        assert_eq!(s.list_skills(Some("clock")).unwrap().len(), 1);
    }

    #[test]
    fn list_includes_flagged_and_filters_app() {
        let mut s = SkillStore::in_memory();
        s.store(&template("skill-0001", "clock")).unwrap();
        s.store(&template("skill-0002", "clock")).unwrap();
        s.store(&template("skill-0003", "notes")).unwrap();
        s.record_outcome("skill-0002", 1, false, None).unwrap();
        let clock = s.list_skills(Some("clock")).unwrap();
        assert_eq!(clock.len(), 2);
        assert!(clock.iter().any(|t| t.needs_recompile));
        assert_eq!(s.list_skills(None).unwrap().len(), 3);
    }

    #[test]
    fn version_gaps_rejected() {
        let mut s = SkillStore::in_memory();
        let mut t = template("skill-0001", "clock");
        t.version = 2;
        assert_eq!(s.store(&t).unwrap_err().code(), "precondition");
    }

    #[test]
    fn guard_synthesis_rules() {
        let t = template("skill-0001", "clock");
        assert!(synthesize_guards(&t, &[failure("skill-0001", 2, Severity::Moderate)]).is_empty());
        let two = [failure("skill-0001", 2, Severity::Moderate), failure("skill-0001", 2, Severity::Moderate)];
        let g = synthesize_guards(&t, &two);
        assert_eq!(g.len(), 1);
        assert_eq!(
            (g[0].step_index, &g[0].predicate, g[0].source_failure_count),
            (2, &GuardPredicate::NoDialogOverlay, 2)
        );
        let mixed = [
            failure("skill-0001", 2, Severity::Moderate),
            failure("skill-0001", 2, Severity::Moderate),
            failure("skill-0001", 1, Severity::Major),
            failure("skill-0001", 1, Severity::Major),
            failure("skill-0001", 3, Severity::Major),
        ];
        let g = synthesize_guards(&t, &mixed);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].predicate, GuardPredicate::ForegroundIn { apps: vec!["clock".into(), "home".into()] });
    }

    #[test]
    fn guards_persist_with_failures() {
        let mut s = SkillStore::in_memory();
        s.store(&template("skill-0001", "clock")).unwrap();
        s.record_outcome("skill-0001", 1, false, Some(failure("skill-0001", 2, Severity::Moderate))).unwrap();
        assert!(s.guards("skill-0001").is_empty());
        s.record_outcome("skill-0001", 1, false, Some(failure("skill-0001", 2, Severity::Moderate))).unwrap();
        assert_eq!(s.guards("skill-0001").len(), 1);
        assert_eq!(s.failures("skill-0001").len(), 2);
        let bad = failure("skill-0001", 9, Severity::Moderate);
        assert_eq!(s.record_outcome("skill-0001", 1, false, Some(bad)).unwrap_err().code(), "precondition");
    }

    proptest! {
        #[test]
        fn counters_conserved_and_flag_semantics(outcomes in proptest::collection::vec(any::<bool>(), 0..30)) {
            let mut s = SkillStore::in_memory();
            s.store(&template("skill-0001", "clock")).unwrap();
            let mut ever_over = false;
            for &ok in &outcomes {
                let st = s.record_outcome("skill-0001", 1, ok, None).unwrap();
                ever_over |= st.r_fail() > 0.5;
                prop_assert!((0.0..=1.0).contains(&st.r_fail()));
            }
            let st = s.stats("skill-0001", 1).unwrap();
            prop_assert_eq!((st.n_succ + st.n_fail) as usize, outcomes.len());
            prop_assert_eq!(s.load("skill-0001", None).unwrap().needs_recompile, ever_over);
        }
    }
}
