//! Command-line front end and HTTP control API for the fediot simulator.

pub mod api;
pub mod serve;
