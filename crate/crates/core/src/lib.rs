//! Organization-level congestion incentives.
//!
//! A central planner pays organizations (fleets, delivery platforms,
//! navigation apps) to route their drivers so that total system travel time
//! falls, compensating each organization only for its net time loss. The
//! pipeline enumerates routes, computes a user-equilibrium baseline, solves a
//! relaxed assignment problem by ADMM and projects the result onto a binary
//! feasible assignment with a small exact MILP solver.

pub mod admm;
pub mod assignment;
pub mod harness;
pub mod incentives;
pub mod network;
pub mod projection;
