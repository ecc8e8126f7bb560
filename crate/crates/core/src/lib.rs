//! Exact continuous-time simulation of a multi-patch metapopulation in
//! which every local population is subject to a strong Allee effect.
//!
//! Patches sit on the vertices of a finite graph. Each edge fires mixing
//! events at rate one (both endpoints move a fraction `mu` toward each
//! other) and each vertex fires local events at rate one (the density
//! snaps to 1 above the Allee threshold `theta`, to 0 below it, and to a
//! fair coin exactly at it).
//!
//! - [`topology`]: ring, complete, circulant and edge-list graphs.
//! - [`engine`]: event streams, the full and mixing-only dynamics, couplings.
//! - [`observables`]: classification, absorption, collisions, dynamic graph.
//! - [`theory`]: closed-form scales, Poisson-tail bounds, good-event checks.
//! - [`experiments`]: Monte Carlo estimates, grid sweeps, scaling studies.
//! - [`cli`]: configuration parsing and command dispatch for the `allee` binary.

pub mod cli;
pub mod engine;
pub mod experiments;
pub mod observables;
pub mod seed;
pub mod theory;
pub mod topology;

pub use engine::{
    Configuration, Event, EventKind, EventStream, InitialCondition, Params, Process, RunOptions,
    StoppingRule, StreamMode,
};
pub use observables::{ConfigClass, Outcome, TrajectoryRecord};
pub use topology::Graph;
