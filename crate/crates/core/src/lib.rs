//! Gate-level STUMPS logic BIST toolkit.
//!
//! The crate turns a `.bench` netlist into a BIST-ready core (scan chains,
//! X-blocking, I/O wrapper cells, observation points), models the per-domain
//! PRPG/MISR hardware, simulates complete self-test sessions with at-speed
//! double capture, grades stuck-at and transition faults, and boosts coverage
//! with fault-simulation guided observation points and top-up PODEM patterns.
//!
//! Module map:
//!
//! - [`netlist`]: parsing, levelization, clock domains, X-source analysis
//! - [`dft`]: scan insertion, X blocking, I/O wrapping, observation cells
//! - [`tpg`]: PRPGs, phase shifters and space expanders
//! - [`odc`]: MISRs and space compactors
//! - [`simkernel`]: bit-parallel good-machine and BIST session simulation
//! - [`faultsim`]: fault universe, collapsing, parallel and serial fault simulation
//! - [`topup`]: observation point selection and top-up ATPG
//! - [`timing`]: shift-path skew discipline and capture margin checks
//! - [`flow`]: session configuration, full flow orchestration and reports

pub mod dft;
pub mod faultsim;
pub mod flow;
pub mod netlist;
pub mod odc;
pub mod par;
pub mod simkernel;
pub mod time;
pub mod timing;
pub mod topup;
pub mod tpg;

#[cfg(test)]
mod testutil;

pub use netlist::{GateKind, Netlist, NetlistError};
