//! Simulation of nonholonomic Lagrangian systems on manifolds with boundary
//! undergoing elastic collisions.
//!
//! The crate integrates the implicit Lagrange–d'Alembert equations on the
//! Pontryagin bundle `TQ ⊕ T*Q` between impacts, resolves elastic impacts by
//! solving the momentum-jump/energy-conservation system at located boundary
//! crossings, and provides the symmetry-reduced counterparts (Lagrange–Poincaré
//! and Euler–Poincaré–Suslov flows) on trivialized principal bundles, together
//! with a post-hoc verification harness and a CLI front end.

pub mod audit;
pub mod config;
pub mod geometry;
pub mod impact;
pub mod integrator;
pub mod lagrangian;
pub mod output;
pub mod reduction;
pub mod runner;
pub mod scenarios;
pub mod system;

pub use geometry::{BoundarySpec, ChartSpec, ConnectionSpec, DistributionSpec};
pub use impact::{ImpactRecord, ZenoPolicy};
pub use integrator::{integrate, IntegratorOptions, Trajectory};
pub use lagrangian::{energy, legendre, LagrangianSpec, PontryaginState};
pub use reduction::{LieAlgebraSpec, ReducedState, ReducedSystemSpec};
pub use system::SystemSpec;
