//! Desk-scale workbench for root cause analysis of 5G drive-test throughput
//! drops: scenario simulation, a rule oracle, reasoning-trace generation,
//! a toy SFT + GRPO trainer and an evaluation harness.

pub mod agentpipe;
pub mod domain;
pub mod error;
pub mod evalharness;
pub mod oracle;
pub mod phrases;
pub mod promptkit;
pub mod seeding;
pub mod simulator;
pub mod trainer;

pub use error::{RcaError, Result};
