//! Holds the workspace acceptance checks; see `tests/acceptance.rs`.
