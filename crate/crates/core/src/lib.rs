//! Deterministic co-simulation of CAN bus traffic, ECU task schedules,
//! switched-LTI control loops, a schedule-based bus-off attacker, and the
//! Hide-n-Seek attack-aware schedule obfuscation defense.
//!
//! The crate is organised around the data flow of one experiment:
//!
//! * [`sched`] builds per-ECU execution schedules and equal-priority groups,
//! * [`bus`] turns frame release streams into a bus trace via priority
//!   arbitration and the CAN error-confinement state machine,
//! * [`attacker`] performs reconnaissance on a trace and injects
//!   synchronized same-id attack frames,
//! * [`asp`] quantifies per-slot and total attack success probability,
//! * [`control`] bounds how many control-task executions may be skipped
//!   without losing the closed loop's stability certificate,
//! * [`hns`] emits the per-reconnaissance-period obfuscation plan (Hide)
//!   and checks the bus against it (Seek),
//! * [`scenario`] / [`experiment`] wire everything into reproducible,
//!   seed-driven runs with CSV reports.

pub mod asp;
pub mod attacker;
pub mod bus;
pub mod control;
pub mod error;
pub mod experiment;
pub mod hns;
pub mod scenario;
pub mod sched;

pub use error::{Error, Result};
