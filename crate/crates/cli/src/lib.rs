//! Command implementations behind the `wbc` binary.

pub mod commands;
pub mod logs;
pub mod plot;
