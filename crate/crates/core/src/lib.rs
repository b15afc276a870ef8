//! Deterministic trace-driven simulator of heterogeneous (DRAM + NVM) memory
//! management for virtual machines.
//!
//! The pipeline mirrors a hypervisor-side manager: the [`mmu`] emulates guest
//! A/D bits and page-modification logging, the [`tracker`] harvests access
//! counts from PML-logged guest page-table pages through a multi-level queue,
//! the [`classifier`] turns counts into page-degrees and hot sets, the
//! [`migrator`] moves pages under three protocols, and the [`pool`] balances
//! DRAM across VMs. [`baselines`] holds the comparison policies and
//! [`harness`] composes everything into runnable scenarios.

pub mod error;
pub mod model;
pub mod workload;
pub mod mmu;
pub mod stats;
pub mod tracker;
pub mod classifier;
pub mod migrator;
pub mod pool;
pub mod baselines;
pub mod harness;

pub use error::{Error, Result};
