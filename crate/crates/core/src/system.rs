//! Full problem definition: chart, Lagrangian, constraints, boundary and
//! connection bundled into one immutable spec.

use nalgebra::DVector;
use std::sync::Arc;

use crate::geometry::{BoundarySpec, ChartSpec, ConnectionSpec, DistributionSpec};
use crate::lagrangian::LagrangianSpec;

/// Domain-validity guard: returns an error message when a configuration leaves
/// the region where the scenario's model is valid (e.g. coordinate
/// singularities of a chart or non-free group actions).
pub type StateGuard = Arc<dyn Fn(&DVector<f64>) -> Result<(), String> + Send + Sync>;

/// Complete definition of a nonholonomic system with boundary.
#[derive(Clone)]
pub struct SystemSpec {
    pub chart: ChartSpec,
    pub lagrangian: LagrangianSpec,
    pub distribution: DistributionSpec,
    pub boundary: BoundarySpec,
    pub connection: ConnectionSpec,
    pub guard: Option<StateGuard>,
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        self.chart.dim
    }

    /// Number of velocity constraints.
    pub fn constraint_count(&self) -> usize {
        self.distribution.rows
    }

    /// Sup-norm of the constraint violation `μ(q)·v`.
    pub fn constraint_residual(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        if self.distribution.is_unconstrained() {
            return 0.0;
        }
        (self.distribution.mu(q) * v).abs().max()
    }

    pub fn check_guard(&self, q: &DVector<f64>) -> Result<(), String> {
        match &self.guard {
            Some(g) => g(q),
            None => Ok(()),
        }
    }
}
