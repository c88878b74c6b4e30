//! Workspace-level acceptance checks.
//!
//! The checks live in `tests/acceptance.rs`; they run after every other test
//! target of the workspace because this package sorts last.
