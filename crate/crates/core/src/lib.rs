//! Skill compilation and replay for UI automation agents.
//!
//! Successful policy-driven episodes are compiled into parameterized skill
//! templates (weighted element locators, typed slots, state descriptors)
//! that later instructions replay without consulting the policy.

pub mod compiler;
pub mod error;
pub mod harness;
pub mod matcher;
pub mod orchestrator;
pub mod policy;
pub mod replayer;
pub mod sim;
pub mod store;
pub mod ui;
mod util;

pub use error::{Error, Result};
pub use util::OneOrMany;

#[cfg(test)]
mod test_support;
