//! Command-line front end: configuration files, dataset/checkpoint
//! serialization, SVG plotting, the finite-difference gradient suite, and
//! the subcommand implementations behind the `strep` binary.

pub mod commands;
pub mod config;
pub mod fileio;
pub mod gradsuite;
pub mod plot;
