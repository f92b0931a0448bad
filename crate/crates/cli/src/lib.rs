//! Library side of the `ycda` command-line tool.

pub mod commands;
pub mod ppm;
pub mod stats;
pub mod synth;
