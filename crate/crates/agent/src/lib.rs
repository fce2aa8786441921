//! Runtime side of the HOI agent: backends, the crop tool, the two-turn
//! orchestrator, file formats and the `hoi` command line.

pub mod artifacts;
pub mod backend;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod io;
pub mod orchestrator;
pub mod prompts;

pub use hoi_core;
