//! Deterministic simulation of a federated 5G and building-IoT deployment.
//!
//! Two 5G domains each sit behind an open gateway that decides attaches,
//! issues tokens, and derives route programs. A federation controller keeps
//! a canonical policy set and pushes compiled enforcement programs to the
//! policy enforcement routers. The IoT side models a group-addressed
//! building bus bridged to a pub/sub broker. Everything runs on one
//! virtual clock driven by the scenario harness.

pub mod core5g;
pub mod gateway;
pub mod iot;
pub mod pep;
pub mod scenario;
pub mod sdn;
pub mod sim;
