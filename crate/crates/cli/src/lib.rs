//! Command-line front end: sweeps over the bound, simulation, trace and
//! bench prongs, CSV reports, and the verification suite.

pub mod cli;
pub mod config;
pub mod report;
pub mod verify;
