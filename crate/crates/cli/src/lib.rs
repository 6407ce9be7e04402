//! Library side of the `alphami` binary, split out so the commands and the
//! plot renderer can be tested in-process.

pub mod args;
pub mod commands;
pub mod exit;
pub mod plot;
