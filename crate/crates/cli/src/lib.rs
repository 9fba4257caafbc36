//! Command-line front end: file formats, configuration and run drivers.

pub mod app;
pub mod config;
pub mod error;
pub mod io;
pub mod synth;
