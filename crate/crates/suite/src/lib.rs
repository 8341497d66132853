//! Acceptance checks for the divesound toolkit live in `tests/acceptance.rs`.
//!
//! Run them with `cargo test -p divesound-suite --test acceptance`.
