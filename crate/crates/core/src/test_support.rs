use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::policy::{CountingPolicy, ScriptedPolicy};
use crate::sim::{scenario, SimDevice};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn device(seed: u64) -> SimDevice {
    SimDevice::new(scenario::load_dir(&fixtures().join("scenarios")).unwrap(), seed).unwrap()
}

pub fn scripted() -> CountingPolicy {
    CountingPolicy::new(ScriptedPolicy::load(&fixtures().join("policy.json")).unwrap())
}

pub fn bindings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
