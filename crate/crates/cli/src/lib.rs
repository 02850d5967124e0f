//! Front end for the `ppath` command: problem files, trace files, graymaps.

pub mod commands;
pub mod pgm;
pub mod problem;
pub mod trace;

pub use commands::{denoise, plot_data, solve, DenoiseOptions, Outcome, Overrides, SolveOptions};
pub use problem::ProblemFile;
