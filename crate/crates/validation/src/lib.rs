//! Reproduction checks live in `tests/acceptance.rs`.
