//! Offline reinforcement learning on tabular MDPs with finite hypothesis
//! classes: the A-Crab actor-critic (weighted average Bellman regularizer),
//! its robust-policy-improvement variant, the ATAC squared-Bellman baseline,
//! exact coverage audits, and the experiment harness around them.

pub mod classes;
pub mod data;
pub mod error;
pub mod experiments;
pub mod mdp;
pub mod objectives;
pub mod solvers;

pub use error::{Error, Result};
