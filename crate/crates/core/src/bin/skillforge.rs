use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use skillforge::compiler::ElementLocator;
use skillforge::harness::{Controller, Plan};
use skillforge::matcher::{KeywordDictionary, MatchCandidate, Matcher, TokenHashEmbedding};
use skillforge::policy::{CountingPolicy, PolicyRequest, PolicyResponse, ScriptedPolicy};
use skillforge::replayer::{find_element, score_parts, Threshold};
use skillforge::store::SkillStore;
use skillforge::ui::UITree;
use skillforge::{Error, Result};

#[derive(Parser)]
#[command(name = "skillforge", version, about = "Compile, match and replay UI automation skills")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a round plan against simulated apps and write the reports.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// `scripted:<file>`; defaults to policy.json next to the scenario directory.
        #[arg(long)]
        policy: Option<String>,
        /// Defaults to keywords.json next to the scenario directory.
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report directory; defaults to the store's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match one instruction against the stored library.
    Match {
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// `scripted:<file>` used for confirmation; without it, every
        /// semantic candidate is declined.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Show a stored skill with its counters, failures and guards.
    Inspect {
        #[arg(long)]
        skill: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        version: Option<u32>,
    },
    /// Dump the whole store as one JSON document.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a locator against every node of a tree.
    Score {
        /// Inline JSON or a path to a JSON file.
        #[arg(long)]
        locator: String,
        /// Inline JSON or a path to a JSON file.
        #[arg(long)]
        tree: String,
        /// Slot bindings as a JSON object.
        #[arg(long)]
        bindings: Option<String>,
    },
}

fn json_arg(arg: &str) -> Result<String> {
    if serde_json::from_str::<serde_json::Value>(arg).is_ok() {
        Ok(arg.to_string())
    } else {
        Ok(std::fs::read_to_string(arg)?)
    }
}

fn sibling(dir: &Path, name: &str) -> PathBuf {
    dir.parent().unwrap_or(Path::new(".")).join(name)
}

fn scripted_path(spec: &str) -> Result<PathBuf> {
    spec.strip_prefix("scripted:")
        .map(PathBuf::from)
        .ok_or_else(|| Error::Precondition(format!("unsupported policy {spec:?}; expected scripted:<file>")))
}

fn default_keywords(store: &Path) -> PathBuf {
    store.parent().unwrap_or(Path::new(".")).join("keywords.json")
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    emit(&(serde_json::to_string_pretty(v)? + "\n"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { plan, scenarios, store, policy, keywords, seed, out } => {
            let policy = match policy {
                Some(p) => scripted_path(&p)?,
                None => sibling(&scenarios, "policy.json"),
            };
            let keywords = keywords.unwrap_or_else(|| sibling(&scenarios, "keywords.json"));
            let plan = Plan::load(&plan)?;
            let mut controller = Controller::from_files(&scenarios, &policy, &keywords, Some(&store), seed)?;
            let result = controller.run_phases(&plan);
            let out = out.unwrap_or_else(|| store.parent().unwrap_or(Path::new(".")).to_path_buf());
            result.write_to(&out)?;
            emit(&result.table())?;
        }
        Command::Match { instruction, store, keywords, policy } => {
            let store_db = SkillStore::open(&store)?;
            let keywords = KeywordDictionary::load(&keywords.unwrap_or_else(|| default_keywords(&store)))?;
            let mut policy = match policy {
                Some(p) => CountingPolicy::new(ScriptedPolicy::load(&scripted_path(&p)?)?),
                None => CountingPolicy::new(|r: &PolicyRequest| Ok(PolicyResponse::incapable(r.role))),
            };
            let skills = store_db.list_skills(None)?;
            let emb = TokenHashEmbedding::default();
            let cands: Vec<MatchCandidate<'_>> = skills
                .iter()
                .map(|s| {
                    let last = store_db.stats(&s.skill_id, s.version).ok().and_then(|st| st.last_success);
                    MatchCandidate::new(s, last, &emb)
                })
                .collect();
            let m = Matcher::new(keywords).match_instruction(&instruction, &cands, &emb, &mut policy, None)?;
            print_json(&m)?;
        }
        Command::Inspect { skill, store, version } => {
            let s = SkillStore::open(&store)?;
            let t = s.load(&skill, version)?;
            print_json(&json!({
                "template": t,
                "stats": s.stats(&t.skill_id, t.version)?,
                "failures": s.failures(&skill),
                "guards": s.guards(&skill),
            }))?;
        }
        Command::Export { store, out } => SkillStore::open(&store)?.export_to(&out)?,
        Command::Score { locator, tree, bindings } => {
            let loc: ElementLocator = serde_json::from_str(&json_arg(&locator)?)?;
            let tree = UITree::from_json(&json_arg(&tree)?)?;
            let bindings: BTreeMap<String, String> = match bindings {
                Some(b) => serde_json::from_str(&json_arg(&b)?)?,
                None => BTreeMap::new(),
            };
            let substituted = loc.substituted(&bindings);
            let scores: Vec<_> = tree
                .flatten()
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let s = score_parts(n, &substituted);
                    json!({"index": i, "resource_id": n.resource_id, "matched": s.matched, "active": s.active, "score": s.value()})
                })
                .collect();
            let best = |tau| find_element(&tree, &loc, tau, &bindings).map(|(i, s)| json!({"index": i, "score": s}));
            print_json(&json!({
                "strict": best(Threshold::Strict),
                "relaxed": best(Threshold::Relaxed),
                "nodes": scores,
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
