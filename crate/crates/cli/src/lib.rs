//! Command implementations behind the `orbe` binary.

pub mod args;
pub mod bench;
pub mod commands;
