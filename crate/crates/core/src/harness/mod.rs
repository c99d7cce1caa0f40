//! Round controller and the phased evaluation protocol.
//!
//! A controller owns one device, one policy and one store. Each round
//! resets the device, applies the round's setup and perturbation, routes
//! the instruction through the matcher and then either replays a stored
//! skill or runs the step loop from scratch.

mod metrics;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compiler::{compile, SkillTemplate};
use crate::error::{Error, Result};
use crate::matcher::{EmbeddingProvider, KeywordDictionary, MatchCandidate, MatchKind, Matcher, TokenHashEmbedding};
use crate::orchestrator::{EpisodeOutcome, EpisodeResult, Orchestrator, PriorContext, TaskSpec};
use crate::policy::{CountingPolicy, ScriptedPolicy};
use crate::replayer::{Replayer, Severity};
use crate::sim::{scenario, Perturbation, SetupStep, SimDevice};
use crate::store::{embedding_key, FailureRecord, RecompileDecision, SkillStore};
use crate::ui::make_descriptor;

pub use metrics::{
    classify, render_table, report, ExecutionPath, FreshSummary, MetricsReport, MetricsSummary, ReplaySummary,
    RoundTrace,
};

/// Rounds between device re-instantiations.
pub const RESTART_EVERY: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variation {
    C,
    L,
    M,
    H,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSpec {
    pub task_id: String,
    pub instruction: String,
    pub variation: Variation,
    /// Values the checker compares against.
    #[serde(default)]
    pub expected: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub setup: Vec<SetupStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPhase {
    pub phase: String,
    pub rounds: Vec<RoundSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub phases: Vec<PlanPhase>,
}

impl Plan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Plan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.phases {
            let ok = matches!(p.phase.as_bytes(), [b'P', b'1'..=b'5']);
            if !ok {
                return Err(Error::InvalidPlan(format!("phase label {:?} is not one of P1-P5", p.phase)));
            }
        }
        Ok(())
    }

    pub fn round_count(&self) -> usize {
        self.phases.iter().map(|p| p.rounds.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub phase: String,
    pub task_id: String,
    pub instruction: String,
    pub variation: Variation,
    /// Checker verified the final device state.
    pub success: bool,
    pub execution_path: ExecutionPath,
    pub policy_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_version: Option<u32>,
    pub skipped_steps: usize,
    pub dismissals: u32,
    /// `<id>/v<version>` of a template written this round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiled_skill: Option<String>,
    pub recompiled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trace: RoundTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRun {
    pub rounds: Vec<RoundResult>,
    pub report: MetricsReport,
}

impl PlanRun {
    pub fn round_log(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r).expect("round serializes"));
            out.push('\n');
        }
        out
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n"
    }

    pub fn table(&self) -> String {
        render_table(&self.rounds)
    }

    /// Writes `rounds.jsonl`, `report.json` and `report.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("rounds.jsonl"), self.round_log())?;
        std::fs::write(dir.join("report.json"), self.report_json())?;
        std::fs::write(dir.join("report.txt"), self.table())?;
        Ok(())
    }
}

pub struct Controller {
    pub device: SimDevice,
    pub policy: CountingPolicy,
    pub store: SkillStore,
    pub matcher: Matcher,
    pub replayer: Replayer,
    pub orchestrator: Orchestrator,
    pub embedding: Box<dyn EmbeddingProvider + Send>,
    /// Zero disables restarts.
    pub restart_every: usize,
    rounds_run: usize,
}

impl Controller {
    pub fn new(device: SimDevice, policy: CountingPolicy, store: SkillStore, keywords: KeywordDictionary) -> Self {
        Self {
            device,
            policy,
            store,
            matcher: Matcher::new(keywords),
            replayer: Replayer::default(),
            orchestrator: Orchestrator::default(),
            embedding: Box::new(TokenHashEmbedding::default()),
            restart_every: RESTART_EVERY,
            rounds_run: 0,
        }
    }

    /// Builds a controller over a scenario directory, a scripted policy
    /// file and a keyword dictionary. `store` of `None` keeps the library
    /// in memory.
    pub fn from_files(
        scenarios: &Path,
        policy: &Path,
        keywords: &Path,
        store: Option<&Path>,
        seed: u64,
    ) -> Result<Self> {
        let device = SimDevice::new(scenario::load_dir(scenarios)?, seed)?;
        let policy = CountingPolicy::new(ScriptedPolicy::load(policy)?);
        let store = match store {
            Some(p) => SkillStore::open(p)?,
            None => SkillStore::in_memory(),
        };
        Ok(Self::new(device, policy, store, KeywordDictionary::load(keywords)?))
    }

    pub fn run_phases(&mut self, plan: &Plan) -> PlanRun {
        let mut rounds = Vec::with_capacity(plan.round_count());
        for phase in &plan.phases {
            for spec in &phase.rounds {
                let mut r = self.run_round(&phase.phase, spec);
                r.round = rounds.len() + 1;
                rounds.push(r);
            }
        }
        let report = report(&rounds);
        PlanRun { rounds, report }
    }

    /// Runs one round. Errors end the round as a failure; they never
    /// escape.
    pub fn run_round(&mut self, phase: &str, spec: &RoundSpec) -> RoundResult {
        let calls_at_start = self.policy.calls();
        let mut res = RoundResult {
            round: self.rounds_run + 1,
            phase: phase.to_string(),
            task_id: spec.task_id.clone(),
            instruction: spec.instruction.clone(),
            variation: spec.variation,
            success: false,
            execution_path: ExecutionPath::L1Fresh,
            policy_calls: 0,
            skill_id: None,
            skill_version: None,
            skipped_steps: 0,
            dismissals: 0,
            compiled_skill: None,
            recompiled: false,
            error: None,
            trace: RoundTrace {
                match_kind: None,
                match_strategy: None,
                match_calls: 0,
                guard_violation: None,
                replay: None,
                fresh: None,
            },
        };
        if let Err(e) = self.drive(spec, &mut res) {
            let msg = e.to_string();
            res.error = Some(if msg.starts_with(e.code()) { msg } else { format!("{}: {msg}", e.code()) });
        }
        res.execution_path = classify(&res.trace);
        res.policy_calls = self.policy.calls() - calls_at_start;
        res
    }

    fn drive(&mut self, spec: &RoundSpec, res: &mut RoundResult) -> Result<()> {
        if self.restart_every > 0 && self.rounds_run > 0 && self.rounds_run.is_multiple_of(self.restart_every) {
            self.device.restart();
        }
        self.rounds_run += 1;
        self.device.reset();
        for s in &spec.setup {
            self.device.setup(s)?;
        }
        if let Some(p) = &spec.perturbation {
            self.device.inject(p)?;
        }
        let task = TaskSpec::for_device(&self.device, &spec.task_id, spec.expected.clone())?;

        let skills = self.store.list_skills(None)?;
        let embeddings = self.embeddings(&skills)?;
        let candidates: Vec<MatchCandidate<'_>> = skills
            .iter()
            .zip(embeddings)
            .map(|(s, embedding)| {
                let last_success = self.store.stats(&s.skill_id, s.version).ok().and_then(|st| st.last_success);
                MatchCandidate { skill: s, last_success, embedding }
            })
            .collect();
        let screen = self.device.render();
        let m = self.matcher.match_instruction(
            &spec.instruction,
            &candidates,
            self.embedding.as_ref(),
            &mut self.policy,
            Some(&screen),
        )?;
        res.trace.match_kind = Some(m.kind);
        res.trace.match_strategy = Some(m.strategy);
        res.trace.match_calls = m.policy_calls;

        let Some(skill_id) = m.skill_id.clone().filter(|_| m.kind == MatchKind::Full) else {
            let ep = self.fresh(spec, &task, None, res);
            if ep.outcome == EpisodeOutcome::Success {
                self.compile_new(&ep, res)?;
            }
            return Ok(());
        };
        let skill = self.store.load(&skill_id, None)?;
        res.skill_id = Some(skill_id.clone());
        res.skill_version = Some(skill.version);

        if skill.needs_recompile && self.store.request_recompile(&skill_id)? == RecompileDecision::Recompile {
            let ep = self.fresh(spec, &task, None, res);
            if ep.outcome == EpisodeOutcome::Success {
                let fresh = compile(&mut self.policy, &ep.trajectory, &skill_id)?;
                let stored = self.store.store_recompiled(&skill_id, &fresh)?;
                res.recompiled = true;
                res.compiled_skill = Some(format!("{}/v{}", stored.skill_id, stored.version));
            }
            return Ok(());
        }

        let tree = self.device.render();
        let violated = self
            .store
            .guards(&skill_id)
            .iter()
            .find(|g| g.version == skill.version && !g.predicate.holds(&tree))
            .map(|g| g.step_index);
        if let Some(step) = violated {
            res.trace.guard_violation = Some(step);
            self.fresh(spec, &task, None, res);
            return Ok(());
        }

        let out = self.replayer.replay(&mut self.device, &mut self.policy, &skill, &m.bindings, &task);
        res.skipped_steps = out.skipped_step_indices.len();
        res.dismissals = out.dismissals;
        res.trace.replay = Some(ReplaySummary {
            status: out.status,
            verified: out.verified(),
            fallback_calls: out.fallback_calls,
            policy_calls: out.policy_calls,
        });
        if out.verified() {
            res.success = true;
            self.store.record_outcome(&skill_id, skill.version, true, None)?;
            return Ok(());
        }

        let mut failure = match &out.failure {
            Some(f) => FailureRecord {
                skill_id: skill_id.clone(),
                version: skill.version,
                step_index: f.step_index,
                severity: f.severity,
                descriptor_at_failure: f.descriptor_at_failure.clone(),
                recovered: false,
            },
            None => FailureRecord {
                skill_id: skill_id.clone(),
                version: skill.version,
                step_index: skill.steps.len(),
                severity: Severity::None,
                descriptor_at_failure: make_descriptor(&self.device.render()),
                recovered: false,
            },
        };
        let prior = PriorContext { completed_steps: out.executed_steps, origin_skill: skill_id.clone() };
        let ep = self.fresh(spec, &task, Some(&prior), res);
        failure.recovered = ep.outcome == EpisodeOutcome::Success;
        self.store.record_outcome(&skill_id, skill.version, false, Some(failure))?;
        if ep.outcome == EpisodeOutcome::Success {
            self.compile_new(&ep, res)?;
        }
        Ok(())
    }

    fn fresh(
        &mut self,
        spec: &RoundSpec,
        task: &TaskSpec,
        prior: Option<&PriorContext>,
        res: &mut RoundResult,
    ) -> EpisodeResult {
        let ep = self.orchestrator.execute(&mut self.device, &mut self.policy, &spec.instruction, task, prior);
        res.success = ep.outcome == EpisodeOutcome::Success;
        res.trace.fresh = Some(FreshSummary {
            outcome: ep.outcome,
            policy_calls: ep.policy_calls,
            prior_steps: prior.map_or(0, |p| p.completed_steps.len()),
        });
        ep
    }

    fn compile_new(&mut self, ep: &EpisodeResult, res: &mut RoundResult) -> Result<()> {
        let mut template = compile(&mut self.policy, &ep.trajectory, "pending")?;
        template.skill_id = self.store.next_skill_id()?;
        self.store.store(&template)?;
        res.compiled_skill = Some(format!("{}/v{}", template.skill_id, template.version));
        Ok(())
    }

    /// Intent-pattern embeddings, cached in the store per provider.
    fn embeddings(&mut self, skills: &[SkillTemplate]) -> Result<Vec<Vec<f64>>> {
        let provider = self.embedding.as_ref();
        let mut out = Vec::with_capacity(skills.len());
        for s in skills {
            let key = embedding_key(&s.skill_id, s.version, provider.id(), provider.dimension());
            match self.store.embedding(&key) {
                Some(v) => out.push(v.to_vec()),
                None => {
                    let v = provider.embed(&s.stripped_pattern());
                    self.store.put_embedding(key, v.clone())?;
                    out.push(v);
                }
            }
        }
        Ok(out)
    }
}
