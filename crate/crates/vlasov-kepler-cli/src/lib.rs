//! Command-line driver for the radial point-mass scattering simulator.
//!
//! The library half of the `vlasov-kepler` binary: configuration parsing
//! and validation ([`config`]), deterministic initial-data synthesis
//! ([`init`]), checkpoint/report persistence ([`io`]), run orchestration
//! with exit-code classification ([`run`]), and the no-simulation property
//! battery behind the `verify` subcommand ([`verify`]).
//!
//! Everything here is deterministic: no random state, fixed marker and
//! reduction orders, and shortest round-trip float formatting, so a config
//! file pins its outputs bit-for-bit on a given platform.

#![deny(unsafe_code)]
#![warn(missing_docs)]

pub mod config;
pub mod init;
pub mod io;
pub mod run;
pub mod verify;
