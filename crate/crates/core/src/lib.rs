//! Robust offline bandit evaluation and learning under structural shifts.
//!
//! The pipeline detects which variables shift across training environments,
//! fits linear structural equations per environment, turns the spread of the
//! fits into an interval uncertainty set, and solves a linear or mixed-integer
//! program for the worst-case distribution. KL-ball baselines and an
//! experiment harness sit alongside.

pub mod baselines;
pub mod data;
pub mod fixtures;
pub mod graph;
pub mod mathprog;
pub mod semcp;
pub mod semfit;
pub mod shiftdetect;
