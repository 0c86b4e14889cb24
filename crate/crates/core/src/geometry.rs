//! Configuration-manifold chart, boundary, constraint distribution and
//! linear-connection data.
//!
//! Distributions are specified through their annihilator one-forms
//! `μ^a(q) = μ^a_i dq^i`; the admissible-velocity subspace is recovered
//! numerically as the null space of the annihilator matrix.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

use crate::system::SystemSpec;

/// Scalar field `q ↦ f(q)` on the chart.
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Covector field `q ↦ α(q)` on the chart.
pub type CovectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Matrix-valued field `q ↦ A(q)`.
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Third-order tensor field, stored as one matrix per leading index.
pub type TensorFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Relative rank tolerance: singular values below `RANK_TOL_REL · σ_max` are
/// treated as zero.
pub const RANK_TOL_REL: f64 = 1e-10;
/// Absolute tolerance on `|b(q)|` for a point to count as lying on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("chart dimension must be >= 1")]
    EmptyChart,
    #[error("chart has {names} coordinate names for dimension {dim}")]
    NameCountMismatch { names: usize, dim: usize },
    #[error("duplicate coordinate name `{0}`")]
    DuplicateName(String),
    #[error("annihilator matrix is rank deficient (smallest singular value {smallest:.3e} <= tol {tol:.3e})")]
    RankDeficient { smallest: f64, tol: f64 },
    #[error("point is not on the boundary: |b(q)| = {b:.3e} > {tol:.3e}")]
    NotOnBoundary { b: f64, tol: f64 },
    #[error("boundary gradient vanishes at impact point (|db| = {norm:.3e})")]
    DegenerateBoundaryGradient { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Chart of the configuration manifold: dimension, coordinate labels and
/// periodicity flags for angle coordinates.
#[derive(Clone)]
pub struct ChartSpec {
    pub dim: usize,
    pub coord_names: Vec<String>,
    pub periodic: Vec<bool>,
}

impl ChartSpec {
    pub fn new(coord_names: &[&str], periodic: &[bool]) -> Result<Self, GeometryError> {
        let dim = coord_names.len();
        if dim == 0 {
            return Err(GeometryError::EmptyChart);
        }
        if periodic.len() != dim {
            return Err(GeometryError::NameCountMismatch {
                names: periodic.len(),
                dim,
            });
        }
        for (i, a) in coord_names.iter().enumerate() {
            for b in &coord_names[i + 1..] {
                if a == b {
                    return Err(GeometryError::DuplicateName(a.to_string()));
                }
            }
        }
        Ok(Self {
            dim,
            coord_names: coord_names.iter().map(|s| s.to_string()).collect(),
            periodic: periodic.to_vec(),
        })
    }
}

/// Boundary function `b` with interior `{b < 0}` and boundary `{b = 0}`,
/// together with its gradient covector `db`.
#[derive(Clone)]
pub struct BoundarySpec {
    pub b: ScalarFn,
    pub db: CovectorFn,
}

impl BoundarySpec {
    pub fn new(b: ScalarFn, db: CovectorFn) -> Self {
        Self { b, db }
    }

    pub fn value(&self, q: &DVector<f64>) -> f64 {
        (self.b)(q)
    }

    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.db)(q)
    }
}

/// Constraint distribution given by `m` annihilator one-forms: `mu(q)` is the
/// `m × dim` matrix whose rows are the `μ^a(q)`.
#[derive(Clone)]
pub struct DistributionSpec {
    /// Number of constraints (annihilator rows).
    pub rows: usize,
    /// Dimension of the vectors the rows contract with.
    pub dim: usize,
    mu: Option<MatrixFn>,
    dmu: Option<TensorFn>,
}

impl DistributionSpec {
    pub fn new(rows: usize, dim: usize, mu: MatrixFn, dmu: Option<TensorFn>) -> Self {
        Self {
            rows,
            dim,
            mu: Some(mu),
            dmu,
        }
    }

    /// Unconstrained case `m = 0`.
    pub fn unconstrained(dim: usize) -> Self {
        Self {
            rows: 0,
            dim,
            mu: None,
            dmu: None,
        }
    }

    /// Distribution with configuration-independent annihilator rows.
    pub fn constant(rows: DMatrix<f64>) -> Self {
        let m = rows.nrows();
        let dim = rows.ncols();
        let dmu_zero: TensorFn = {
            let (m, dim) = (m, dim);
            Arc::new(move |_q: &DVector<f64>| vec![DMatrix::zeros(dim, dim); m])
        };
        // dmu input dimension equals the chart dimension only when rows act on
        // chart velocities; for constant rows the derivative is zero anyway.
        Self {
            rows: m,
            dim,
            mu: Some(Arc::new(move |_q| rows.clone())),
            dmu: Some(dmu_zero),
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        self.rows == 0
    }

    /// Annihilator matrix `mu(q)`, shape `rows × dim` (empty when `rows = 0`).
    pub fn mu(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.mu {
            Some(f) => f(q),
            None => DMatrix::zeros(0, self.dim),
        }
    }

    /// Derivative tensor `∂μ^a_j/∂q^i` as one `nq × dim` matrix per row `a`,
    /// indexed `[a][(i, j)]`. Finite-differenced from `mu` when not supplied.
    pub fn dmu(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        if self.rows == 0 {
            return Vec::new();
        }
        if let Some(f) = &self.dmu {
            return f(q);
        }
        let nq = q.len();
        let mut out = vec![DMatrix::zeros(nq, self.dim); self.rows];
        let mut qp = q.clone();
        let mut qm = q.clone();
        for i in 0..nq {
            let h = fd_step(q[i]);
            qp[i] = q[i] + h;
            qm[i] = q[i] - h;
            let mp = self.mu(&qp);
            let mm = self.mu(&qm);
            for a in 0..self.rows {
                for j in 0..self.dim {
                    out[a][(i, j)] = (mp[(a, j)] - mm[(a, j)]) / (2.0 * h);
                }
            }
            qp[i] = q[i];
            qm[i] = q[i];
        }
        out
    }

    /// Mixed contraction `Σ_{i,j} ∂μ^a_j/∂q^i u^i w^j`: derivative of the
    /// constraint value along base motion `u` applied to fiber vector `w`.
    pub fn dmu_uv(&self, q: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let dmu = self.dmu(q);
        let mut out = DVector::zeros(self.rows);
        for (a, d) in dmu.iter().enumerate() {
            out[a] = (u.transpose() * d * w)[(0, 0)];
        }
        out
    }

    /// Quadratic contraction `(Dμ(q)·v)·v`, the inhomogeneity of the
    /// differentiated constraint `d/dt (μ(q)·v) = μ·v̇ + (Dμ·v)·v`.
    pub fn dmu_vv(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.dmu_uv(q, v, v)
    }
}

/// Optional Christoffel symbols `Γ^i_{jk}(q)` of a linear connection on `TQ`.
/// The default (absent) connection is the flat chart connection `Γ = 0`.
#[derive(Clone, Default)]
pub struct ConnectionSpec {
    gamma: Option<TensorFn>,
}

impl ConnectionSpec {
    pub fn flat() -> Self {
        Self { gamma: None }
    }

    /// `gamma(q)[i]` is the matrix `Γ^i_{jk}(q)` indexed `(j, k)`.
    pub fn with_christoffel(gamma: TensorFn) -> Self {
        Self { gamma: Some(gamma) }
    }

    pub fn is_flat(&self) -> bool {
        self.gamma.is_none()
    }

    pub fn christoffel(&self, q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        self.gamma.as_ref().map(|f| f(q))
    }

    /// Covariant correction for a covector along a motion: with `Γ = 0` this
    /// is zero, otherwise `(Γᵀ(v)·p)_i = Γ^k_{ji} v^j p_k` so that
    /// `(∇p/dt)_i = ṗ_i − Γ^k_{ji} v^j p_k`.
    pub fn covector_transport(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        p: &DVector<f64>,
    ) -> DVector<f64> {
        let n = q.len();
        match self.christoffel(q) {
            None => DVector::zeros(n),
            Some(gamma) => {
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let mut acc = 0.0;
                    for (k, gk) in gamma.iter().enumerate() {
                        for j in 0..n {
                            acc += gk[(j, i)] * v[j] * p[k];
                        }
                    }
                    out[i] = acc;
                }
                out
            }
        }
    }

    /// Horizontal correction for the Lagrangian derivative:
    /// `(Γ(v)·p)_i = Γ^k_{ij} v^j p_k`, so that `δL/δq = ∂L/∂q − Γ(v)·p`.
    pub fn horizontal_correction(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        p: &DVector<f64>,
    ) -> DVector<f64> {
        let n = q.len();
        match self.christoffel(q) {
            None => DVector::zeros(n),
            Some(gamma) => {
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let mut acc = 0.0;
                    for (k, gk) in gamma.iter().enumerate() {
                        for j in 0..n {
                            acc += gk[(i, j)] * v[j] * p[k];
                        }
                    }
                    out[i] = acc;
                }
                out
            }
        }
    }
}

/// Central-difference step scaled to the coordinate magnitude.
pub(crate) fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

/// Orthonormal basis of the admissible-velocity subspace `Δ_Q(q) = ker μ(q)`.
///
/// Returns a `dim × (dim − m)` matrix `B` with `μ(q)·B = 0` and `Bᵀ·B = I`.
pub fn distribution_basis(
    dist: &DistributionSpec,
    q: &DVector<f64>,
) -> Result<DMatrix<f64>, GeometryError> {
    let n = dist.dim;
    if dist.rows == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let mu = dist.mu(q);
    check_full_rank(&mu)?;
    Ok(null_space(&mu))
}

fn check_full_rank(mu: &DMatrix<f64>) -> Result<(), GeometryError> {
    let svals = mu.clone().singular_values();
    let smax = svals.max();
    let smin = svals.min();
    let tol = RANK_TOL_REL * smax;
    if smin <= tol {
        return Err(GeometryError::RankDeficient {
            smallest: smin,
            tol,
        });
    }
    Ok(())
}

/// Orthonormal basis of `ker A` for a full-row-rank `m × n` matrix, via the
/// projector `I − QQᵀ` with `Q` an orthonormal row-space basis.
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let m = a.nrows();
    let qr = a.transpose().qr();
    let q = qr.q(); // n × m, orthonormal columns spanning row space
    let projector = DMatrix::identity(n, n) - &q * q.transpose();
    let eig = nalgebra::SymmetricEigen::new(projector);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let k = n - m;
    let mut basis = DMatrix::zeros(n, k);
    for (col, &i) in idx.iter().take(k).enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(i));
    }
    // Fix a sign convention so the basis is deterministic.
    for c in 0..k {
        let col = basis.column(c);
        let lead =
            col.iter()
                .cloned()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            basis.column_mut(c).neg_mut();
        }
    }
    basis
}

/// Rows spanning the impact-jump coannihilator
/// `(T_q∂Q ∩ Δ_Q(q))° = (T_q∂Q)° + Δ_Q°(q)`: `db(q)` stacked over `μ(q)`,
/// exactly as supplied (no normalization).
#[derive(Debug)]
pub struct ImpactCoannihilator {
    /// `(m+1) × n` matrix: first row `db(q)`, remaining rows `μ(q)`.
    pub rows: DMatrix<f64>,
    /// Numerical rank of the stacked rows.
    pub rank: usize,
    /// True when the stacked rows are rank deficient (degenerate contact).
    pub degenerate: bool,
}

pub fn impact_coannihilator(
    dist: &DistributionSpec,
    bnd: &BoundarySpec,
    q: &DVector<f64>,
    boundary_tol: f64,
) -> Result<ImpactCoannihilator, GeometryError> {
    let b = bnd.value(q);
    if b.abs() > boundary_tol {
        return Err(GeometryError::NotOnBoundary {
            b: b.abs(),
            tol: boundary_tol,
        });
    }
    let db = bnd.gradient(q);
    let n = q.len();
    let m = dist.rows;
    let mu = dist.mu(q);
    let mut rows = DMatrix::zeros(m + 1, n);
    rows.row_mut(0).copy_from(&db.transpose());
    for a in 0..m {
        rows.row_mut(a + 1).copy_from(&mu.row(a));
    }
    let svals = rows.clone().singular_values();
    let smax = svals.max();
    if smax <= 0.0 {
        return Err(GeometryError::DegenerateBoundaryGradient { norm: 0.0 });
    }
    let rank = svals.iter().filter(|&&s| s > RANK_TOL_REL * smax).count();
    let degenerate = rank < m + 1;
    if degenerate {
        log::warn!(
            "impact coannihilator is rank deficient at the contact point (rank {} < {})",
            rank,
            m + 1
        );
    }
    Ok(ImpactCoannihilator {
        rows,
        rank,
        degenerate,
    })
}

/// Outcome of one validation check.
#[derive(Debug, Clone)]
pub struct GeometryCheck {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tol: f64,
    pub location: Option<usize>,
}

/// Report produced by [`validate_geometry`].
#[derive(Debug, Clone, Default)]
pub struct GeometryReport {
    pub checks: Vec<GeometryCheck>,
}

impl GeometryReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&GeometryCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Re-checks the geometric invariants of a system at the given sample points:
/// boundary gradient vs. finite differences of `b`, annihilator rank, and
/// annihilation of the derived distribution basis. Report-only.
pub fn validate_geometry(sys: &SystemSpec, samples: &[DVector<f64>]) -> GeometryReport {
    let mut report = GeometryReport::default();

    // db must be the gradient of b.
    let mut worst_grad = 0.0f64;
    let mut worst_loc = None;
    for (s, q) in samples.iter().enumerate() {
        let db = sys.boundary.gradient(q);
        let mut qp = q.clone();
        let mut qm = q.clone();
        for i in 0..q.len() {
            let h = 1e-6 * (1.0 + q[i].abs());
            qp[i] = q[i] + h;
            qm[i] = q[i] - h;
            let fd = (sys.boundary.value(&qp) - sys.boundary.value(&qm)) / (2.0 * h);
            let rel = (fd - db[i]).abs() / (1.0 + db[i].abs());
            if rel > worst_grad {
                worst_grad = rel;
                worst_loc = Some(s);
            }
            qp[i] = q[i];
            qm[i] = q[i];
        }
    }
    report.checks.push(GeometryCheck {
        name: "boundary_gradient".into(),
        passed: worst_grad <= 1e-6,
        worst: worst_grad,
        tol: 1e-6,
        location: worst_loc,
    });

    // Annihilator rank and basis annihilation.
    let mut rank_ok = true;
    let mut rank_worst = f64::INFINITY;
    let mut rank_loc = None;
    let mut annih_worst = 0.0f64;
    let mut annih_loc = None;
    if !sys.distribution.is_unconstrained() {
        for (s, q) in samples.iter().enumerate() {
            let mu = sys.distribution.mu(q);
            let svals = mu.clone().singular_values();
            let smax = svals.max();
            let smin = svals.min();
            let rel = if smax > 0.0 { smin / smax } else { 0.0 };
            if rel < rank_worst {
                rank_worst = rel;
                rank_loc = Some(s);
            }
            if smin <= RANK_TOL_REL * smax {
                rank_ok = false;
                continue;
            }
            let basis = null_space(&mu);
            let residual = (&mu * &basis).abs().max();
            if residual > annih_worst {
                annih_worst = residual;
                annih_loc = Some(s);
            }
        }
    }
    report.checks.push(GeometryCheck {
        name: "annihilator_rank".into(),
        passed: rank_ok,
        worst: if rank_worst.is_finite() {
            rank_worst
        } else {
            1.0
        },
        tol: RANK_TOL_REL,
        location: rank_loc,
    });
    report.checks.push(GeometryCheck {
        name: "basis_annihilation".into(),
        passed: annih_worst <= 1e-12,
        worst: annih_worst,
        tol: 1e-12,
        location: annih_loc,
    });

    report
}
