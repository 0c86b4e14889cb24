//! Boundary-crossing localization and elastic impact resolution.
//!
//! At a located contact point the post-impact velocity and jump multipliers
//! solve the square nonlinear system
//!
//! ```text
//! ∂L/∂v(q, v⁺) − ∂L/∂v(q, v⁻) = λ₀ db(q) + λᵀ μ(q)
//! E(q, v⁺) = E(q, v⁻)
//! μ(q) · v⁺ = 0
//! ```
//!
//! by Newton iteration started from the mass-metric reflection of `v⁻`. The
//! trivial root `v⁺ = v⁻` is rejected and retried from perturbed guesses.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{self, BoundarySpec, GeometryError};
use crate::integrator::HermiteSegment;
use crate::lagrangian::{energy, legendre};
use crate::system::SystemSpec;

#[derive(Debug, Error)]
pub enum ImpactError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("velocity does not approach the boundary: db·v = {0:.3e}")]
    NotApproaching(f64),
    #[error("pre-impact velocity violates the constraints: |mu v| = {0:.3e}")]
    InadmissiblePreImpactVelocity(f64),
    #[error("every Newton attempt converged to the trivial root v+ = v-")]
    TrivialRootOnly,
    #[error("impact solve did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate contact: db lies in the row span of mu")]
    DegenerateContact,
}

/// Record of one resolved elastic impact.
#[derive(Debug, Clone)]
pub struct ImpactRecord {
    pub t_impact: f64,
    pub q: DVector<f64>,
    pub v_minus: DVector<f64>,
    pub v_plus: DVector<f64>,
    pub p_minus: DVector<f64>,
    pub p_plus: DVector<f64>,
    /// Multiplier on the boundary conormal `db`.
    pub lambda0: f64,
    /// Multipliers on the constraint annihilator rows.
    pub lambda: DVector<f64>,
    pub e_minus: f64,
    pub e_plus: f64,
}

/// Safeguards against impact accumulation.
#[derive(Debug, Clone)]
pub struct ZenoPolicy {
    pub min_interimpact_time: f64,
    pub max_impacts: usize,
}

impl Default for ZenoPolicy {
    fn default() -> Self {
        Self {
            min_interimpact_time: 1e-6,
            max_impacts: 10_000,
        }
    }
}

/// Newton and acceptance parameters for the impact solve.
#[derive(Debug, Clone)]
pub struct ImpactParams {
    pub boundary_tol: f64,
    pub constraint_tol: f64,
    pub max_newton_iters: usize,
    pub newton_tol: f64,
    pub jump_tol: f64,
    pub energy_jump_tol: f64,
}

impl Default for ImpactParams {
    fn default() -> Self {
        Self {
            boundary_tol: geometry::BOUNDARY_TOL,
            constraint_tol: 1e-8,
            max_newton_iters: 50,
            newton_tol: 1e-11,
            jump_tol: 1e-9,
            energy_jump_tol: 1e-10,
        }
    }
}

#[derive(Debug, Error)]
#[error("Zeno behaviour suspected: {detail}")]
pub struct ZenoError {
    pub detail: String,
}

/// Scans a dense segment for the first inside-to-outside crossing of `b = 0`.
/// `armed` encodes whether the trajectory has been strictly interior since the
/// last impact; unarmed prefixes (post-impact states hovering at `b ≈ 0`) do
/// not trigger.
pub(crate) fn scan_crossing(
    segment: &HermiteSegment,
    bnd: &BoundarySpec,
    boundary_tol: f64,
    mut armed: bool,
) -> Option<f64> {
    const SUBDIV: usize = 16;
    let h = segment.span();
    let mut t_prev = segment.t0;
    let mut b_prev = bnd.value(&segment.eval_q(t_prev));
    let mut max_b = b_prev;
    for i in 1..=SUBDIV {
        let t = segment.t0 + h * (i as f64) / (SUBDIV as f64);
        let b = bnd.value(&segment.eval_q(t));
        max_b = max_b.max(b);
        if !armed && b_prev < -boundary_tol {
            armed = true;
        }
        if armed && b_prev <= 0.0 && b > 0.0 {
            // Root in [t_prev, t]; refine on the interpolant.
            return refine_on_segment(segment, bnd, boundary_tol, t_prev, t);
        }
        t_prev = t;
        b_prev = b;
    }
    if max_b > -boundary_tol && max_b <= boundary_tol {
        log::warn!(
            "segment [{:.6}, {:.6}] grazes the boundary without sign change (max b = {max_b:.3e})",
            segment.t0,
            segment.t1
        );
    }
    None
}

fn refine_on_segment(
    segment: &HermiteSegment,
    bnd: &BoundarySpec,
    boundary_tol: f64,
    mut lo: f64,
    mut hi: f64,
) -> Option<f64> {
    let mut b_lo = bnd.value(&segment.eval_q(lo));
    let mut b_hi = bnd.value(&segment.eval_q(hi));
    let mut best = hi;
    for _ in 0..80 {
        let denom = b_hi - b_lo;
        let mut t = if denom.abs() > 0.0 {
            hi - b_hi * (hi - lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let b = bnd.value(&segment.eval_q(t));
        best = t;
        if b.abs() <= boundary_tol {
            return Some(t);
        }
        if b > 0.0 {
            hi = t;
            b_hi = b;
        } else {
            lo = t;
            b_lo = b;
        }
        if hi - lo < f64::EPSILON * (1.0 + segment.t1.abs()) {
            break;
        }
    }
    Some(best)
}

/// Localizes a boundary crossing on a dense-output segment. Returns the
/// crossing time with `|b(q(t*))| ≤ boundary_tol`, or `None` when the segment
/// stays interior (tangential grazing without sign change logs a warning).
pub fn locate_crossing(
    segment: &HermiteSegment,
    bnd: &BoundarySpec,
    boundary_tol: f64,
) -> Option<f64> {
    scan_crossing(segment, bnd, boundary_tol, true)
}

/// Mass-matrix metric if positive definite, else the chart Euclidean metric.
fn contact_metric(sys: &SystemSpec, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let n = sys.dim();
    let mass = sys.lagrangian.mass_matrix(q, v);
    match mass.clone().cholesky() {
        Some(_) => mass,
        None => {
            log::debug!("mass matrix not positive definite at contact; using chart metric");
            DMatrix::identity(n, n)
        }
    }
}

/// Reflection of `v` through the boundary tangent plane in the metric `g`:
/// `v − 2 g(v, n̂) n̂` with `n̂` the g-unit outward normal raised from `db`.
fn reflect_in_metric(g: &DMatrix<f64>, db: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let ginv_db = g
        .clone()
        .cholesky()
        .map(|c| c.solve(db))
        .unwrap_or_else(|| db.clone());
    let denom = db.dot(&ginv_db);
    v - (2.0 * db.dot(v) / denom) * ginv_db
}

/// Separation of the reset map from the identity at `(q, v)`:
/// `‖R(v) − v‖_g = 2 ‖v^⊥‖_g` with `g` the kinetic metric when positive
/// definite. Strictly positive whenever the state lies in the guard set.
pub fn reset_separation(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v: &DVector<f64>,
    boundary_tol: f64,
) -> Result<f64, ImpactError> {
    let b = sys.boundary.value(q);
    if b.abs() > boundary_tol {
        return Err(GeometryError::NotOnBoundary {
            b: b.abs(),
            tol: boundary_tol,
        }
        .into());
    }
    let g = contact_metric(sys, q, v);
    let db = sys.boundary.gradient(q);
    let ginv_db = g
        .clone()
        .cholesky()
        .map(|c| c.solve(&db))
        .unwrap_or_else(|| db.clone());
    let norm_n = db.dot(&ginv_db).sqrt();
    if norm_n <= 0.0 {
        return Err(GeometryError::DegenerateBoundaryGradient { norm: norm_n }.into());
    }
    Ok(2.0 * db.dot(v).abs() / norm_n)
}

/// Time-ordered event log check against the Zeno policy.
pub fn zeno_guard(events: &[ImpactRecord], policy: &ZenoPolicy) -> Result<(), ZenoError> {
    if events.len() > policy.max_impacts {
        return Err(ZenoError {
            detail: format!(
                "{} impacts exceed the allowed maximum {}",
                events.len(),
                policy.max_impacts
            ),
        });
    }
    for w in events.windows(2) {
        let dt = w[1].t_impact - w[0].t_impact;
        if dt < policy.min_interimpact_time {
            return Err(ZenoError {
                detail: format!(
                    "impacts at t = {:.9} and t = {:.9} are separated by {dt:.3e}",
                    w[0].t_impact, w[1].t_impact
                ),
            });
        }
    }
    Ok(())
}

struct NewtonOutcome {
    v_plus: DVector<f64>,
    lambda0: f64,
    lambda: DVector<f64>,
    converged: bool,
}

/// Resolves one elastic impact at boundary point `q` with pre-impact velocity
/// `v_minus`. Enforces the approach condition, rejects the trivial root, and
/// filters for strictly inward post-impact motion.
pub fn impact_map(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v_minus: &DVector<f64>,
    t_impact: f64,
    params: &ImpactParams,
) -> Result<ImpactRecord, ImpactError> {
    let b = sys.boundary.value(q);
    if b.abs() > params.boundary_tol {
        return Err(GeometryError::NotOnBoundary {
            b: b.abs(),
            tol: params.boundary_tol,
        }
        .into());
    }
    let db = sys.boundary.gradient(q);
    if db.norm() <= geometry::RANK_TOL_REL {
        return Err(GeometryError::DegenerateBoundaryGradient { norm: db.norm() }.into());
    }
    let approach = db.dot(v_minus);
    if approach <= 0.0 {
        return Err(ImpactError::NotApproaching(approach));
    }
    let m = sys.constraint_count();
    let mu = sys.distribution.mu(q);
    if m > 0 {
        let cres = (&mu * v_minus).abs().max();
        if cres > params.constraint_tol {
            return Err(ImpactError::InadmissiblePreImpactVelocity(cres));
        }
        // db inside the row span of mu leaves the jump system underdetermined.
        let mut stacked = DMatrix::zeros(m + 1, sys.dim());
        stacked.view_mut((0, 0), (m, sys.dim())).copy_from(&mu);
        stacked.row_mut(m).copy_from(&db.transpose());
        let svals = stacked.singular_values();
        if svals.min() <= geometry::RANK_TOL_REL * svals.max() {
            return Err(ImpactError::DegenerateContact);
        }
    }

    // Reflection within the admissible subspace: reverse v⁻ along the
    // g-projection of the raised normal onto ker μ. For kinetic-quadratic
    // Lagrangians this is the exact elastic reflection.
    let g = contact_metric(sys, q, v_minus);
    let raised = g
        .clone()
        .cholesky()
        .map(|c| c.solve(&db))
        .unwrap_or_else(|| db.clone());
    let jump_dir = crate::integrator::project_velocity(sys, q, &raised)
        .map_err(|e| ImpactError::NoConvergence(e.to_string()))?;
    let dir_norm2 = (jump_dir.transpose() * &g * &jump_dir)[(0, 0)];
    let base_guess = if dir_norm2 > 1e-14 * (1.0 + raised.norm_squared()) {
        let coeff = (v_minus.transpose() * &g * &jump_dir)[(0, 0)] / dir_norm2;
        v_minus - 2.0 * coeff * &jump_dir
    } else {
        // Jump direction collapses inside the constraints: fall back to the
        // unconstrained reflection projected onto the admissible subspace.
        let reflected = reflect_in_metric(&g, &db, v_minus);
        crate::integrator::project_velocity(sys, q, &reflected)
            .map_err(|e| ImpactError::NoConvergence(e.to_string()))?
    };

    let v_scale = 1.0 + v_minus.abs().max();
    let trivial_threshold = 10.0 * params.constraint_tol;
    let mut guesses: Vec<DVector<f64>> = vec![base_guess.clone()];
    for c in [0.05, -0.05, 0.15, -0.15] {
        guesses.push(&base_guess + c * v_scale * &base_guess.normalize());
    }

    let mut saw_trivial = false;
    let mut accepted: Option<NewtonOutcome> = None;
    for guess in &guesses {
        let out = newton_impact(sys, q, v_minus, &db, &mu, guess, params);
        let Some(out) = out else { continue };
        if !out.converged {
            continue;
        }
        if (&out.v_plus - v_minus).abs().max() <= trivial_threshold {
            saw_trivial = true;
            continue;
        }
        if db.dot(&out.v_plus) >= 0.0 {
            continue;
        }
        accepted = Some(out);
        break;
    }

    let Some(found) = accepted else {
        if saw_trivial {
            return Err(ImpactError::TrivialRootOnly);
        }
        return Err(ImpactError::NoConvergence(format!(
            "no admissible root after {} guesses",
            guesses.len()
        )));
    };

    // Probe one perturbed guess for root multiplicity.
    let probe_guess = v_minus - 1.5 * (v_minus - &found.v_plus);
    if let Some(other) = newton_impact(sys, q, v_minus, &db, &mu, &probe_guess, params) {
        if other.converged
            && db.dot(&other.v_plus) < 0.0
            && (&other.v_plus - v_minus).abs().max() > trivial_threshold
            && (&other.v_plus - &found.v_plus).abs().max() > 1e-6 * v_scale
        {
            log::warn!(
                "impact at t = {t_impact:.6} admits multiple nontrivial roots; keeping the one \
                 reached from the reflection guess"
            );
        }
    }

    let p_minus = legendre(&sys.lagrangian, q, v_minus);
    let p_plus = legendre(&sys.lagrangian, q, &found.v_plus);
    let e_minus = energy(&sys.lagrangian, q, v_minus, &p_minus);
    let e_plus = energy(&sys.lagrangian, q, &found.v_plus, &p_plus);

    let record = ImpactRecord {
        t_impact,
        q: q.clone(),
        v_minus: v_minus.clone(),
        v_plus: found.v_plus,
        p_minus,
        p_plus,
        lambda0: found.lambda0,
        lambda: found.lambda,
        e_minus,
        e_plus,
    };
    validate_record(sys, &record, &db, &mu, params)?;
    Ok(record)
}

fn validate_record(
    sys: &SystemSpec,
    record: &ImpactRecord,
    db: &DVector<f64>,
    mu: &DMatrix<f64>,
    params: &ImpactParams,
) -> Result<(), ImpactError> {
    let de = (record.e_plus - record.e_minus).abs();
    if de > params.energy_jump_tol {
        return Err(ImpactError::NoConvergence(format!(
            "energy jump {de:.3e} above tolerance"
        )));
    }
    let dp = &record.p_plus - &record.p_minus;
    let residual = jump_containment_residual(&dp, db, mu);
    if residual > params.jump_tol * (1.0 + dp.abs().max()) {
        return Err(ImpactError::NoConvergence(format!(
            "jump containment residual {residual:.3e} above tolerance"
        )));
    }
    if sys.constraint_count() > 0 {
        let cres = (mu * &record.v_plus).abs().max();
        if cres > params.constraint_tol {
            return Err(ImpactError::NoConvergence(format!(
                "post-impact constraint residual {cres:.3e} above tolerance"
            )));
        }
    }
    Ok(())
}

/// Least-squares residual of fitting `dp` inside `span{db, mu rows}`.
pub fn jump_containment_residual(dp: &DVector<f64>, db: &DVector<f64>, mu: &DMatrix<f64>) -> f64 {
    let m = mu.nrows();
    let n = dp.len();
    let mut rows = DMatrix::zeros(m + 1, n);
    rows.row_mut(0).copy_from(&db.transpose());
    for a in 0..m {
        rows.row_mut(a + 1).copy_from(&mu.row(a));
    }
    let gram = &rows * rows.transpose();
    let rhs = &rows * dp;
    match gram.full_piv_lu().solve(&rhs) {
        Some(c) => (rows.transpose() * c - dp).abs().max(),
        None => {
            // Rank-deficient span: fall back to the SVD pseudo-inverse fit.
            let svd = rows.transpose().svd(true, true);
            match svd.solve(dp, 1e-12) {
                Ok(c) => (rows.transpose() * c - dp).abs().max(),
                Err(_) => f64::INFINITY,
            }
        }
    }
}

fn newton_impact(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v_minus: &DVector<f64>,
    db: &DVector<f64>,
    mu: &DMatrix<f64>,
    v_guess: &DVector<f64>,
    params: &ImpactParams,
) -> Option<NewtonOutcome> {
    let n = sys.dim();
    let m = mu.nrows();
    let dim = n + 1 + m;
    let lag = &sys.lagrangian;
    let p_minus = legendre(lag, q, v_minus);
    let e_minus = energy(lag, q, v_minus, &p_minus);
    let scale = 1.0 + e_minus.abs().max(p_minus.abs().max());

    // Initial multipliers from a least-squares fit of the predicted jump.
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, n).copy_from(v_guess);
    {
        let p_guess = legendre(lag, q, v_guess);
        let dp = &p_guess - &p_minus;
        let mut rows = DMatrix::zeros(m + 1, n);
        rows.row_mut(0).copy_from(&db.transpose());
        for a in 0..m {
            rows.row_mut(a + 1).copy_from(&mu.row(a));
        }
        let gram = &rows * rows.transpose();
        if let Some(c) = gram.full_piv_lu().solve(&(&rows * &dp)) {
            z[n] = c[0];
            for a in 0..m {
                z[n + 1 + a] = c[a + 1];
            }
        }
    }

    let residual = |z: &DVector<f64>| -> DVector<f64> {
        let v = z.rows(0, n).into_owned();
        let lambda0 = z[n];
        let lambda = z.rows(n + 1, m).into_owned();
        let p = legendre(lag, q, &v);
        let mut f = DVector::zeros(dim);
        let mut jump = &p - &p_minus - lambda0 * db;
        if m > 0 {
            jump -= mu.transpose() * &lambda;
        }
        f.rows_mut(0, n).copy_from(&jump);
        f[n] = energy(lag, q, &v, &p) - e_minus;
        if m > 0 {
            f.rows_mut(n + 1, m).copy_from(&(mu * &v));
        }
        f
    };

    let mut f = residual(&z);
    let mut fnorm = f.abs().max();
    for _ in 0..params.max_newton_iters {
        if fnorm <= params.newton_tol * scale {
            // One polishing step tightens the root toward machine precision.
            let v = z.rows(0, n).into_owned();
            let mass = lag.mass_matrix(q, &v);
            let jac = impact_jacobian(&mass, &v, db, mu);
            if let Some(dz) = jac.full_piv_lu().solve(&f) {
                let z_polished = &z - &dz;
                let f_polished = residual(&z_polished);
                if f_polished.abs().max() < fnorm {
                    z = z_polished;
                }
            }
            return Some(NewtonOutcome {
                v_plus: z.rows(0, n).into_owned(),
                lambda0: z[n],
                lambda: z.rows(n + 1, m).into_owned(),
                converged: true,
            });
        }
        let v = z.rows(0, n).into_owned();
        let mass = lag.mass_matrix(q, &v);
        let jac = impact_jacobian(&mass, &v, db, mu);
        let dz = jac.full_piv_lu().solve(&f)?;
        // Backtracking line search on the residual norm.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let z_trial = &z - alpha * &dz;
            let f_trial = residual(&z_trial);
            let fnorm_trial = f_trial.abs().max();
            if fnorm_trial < fnorm {
                z = z_trial;
                f = f_trial;
                fnorm = fnorm_trial;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return Some(NewtonOutcome {
                v_plus: z.rows(0, n).into_owned(),
                lambda0: z[n],
                lambda: z.rows(n + 1, m).into_owned(),
                converged: false,
            });
        }
    }
    Some(NewtonOutcome {
        v_plus: z.rows(0, n).into_owned(),
        lambda0: z[n],
        lambda: z.rows(n + 1, m).into_owned(),
        converged: fnorm <= params.newton_tol * scale,
    })
}

fn impact_jacobian(
    mass: &DMatrix<f64>,
    v: &DVector<f64>,
    db: &DVector<f64>,
    mu: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = v.len();
    let m = mu.nrows();
    let dim = n + 1 + m;
    let mut jac = DMatrix::zeros(dim, dim);
    jac.view_mut((0, 0), (n, n)).copy_from(mass);
    for i in 0..n {
        jac[(i, n)] = -db[i];
    }
    if m > 0 {
        jac.view_mut((0, n + 1), (n, m)).copy_from(&mu.transpose());
        jac.view_mut((0, n + 1), (n, m)).neg_mut();
    }
    let de_dv = mass * v;
    for j in 0..n {
        jac[(n, j)] = de_dv[j];
    }
    if m > 0 {
        jac.view_mut((n + 1, 0), (m, n)).copy_from(mu);
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{self, BilliardParams, PendulumParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn billiard() -> crate::system::SystemSpec {
        scenarios::build_free_billiard(&BilliardParams::default())
            .unwrap()
            .system
    }

    #[test]
    fn locate_crossing_on_linear_motion() {
        let sys = billiard();
        // q(t) = (t, 0) runs out of the unit disk at t = 1.
        let segment = HermiteSegment {
            t0: 0.9,
            t1: 1.1,
            q0: dvector![0.9, 0.0],
            v0: dvector![1.0, 0.0],
            q1: dvector![1.1, 0.0],
            v1: dvector![1.0, 0.0],
        };
        let t = locate_crossing(&segment, &sys.boundary, 1e-9).unwrap();
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-9);

        let interior = HermiteSegment {
            t0: 0.0,
            t1: 0.2,
            q0: dvector![0.0, 0.0],
            v0: dvector![1.0, 0.0],
            q1: dvector![0.2, 0.0],
            v1: dvector![1.0, 0.0],
        };
        assert!(locate_crossing(&interior, &sys.boundary, 1e-9).is_none());
    }

    #[test]
    fn locate_crossing_refines_monotonically() {
        let sys = billiard();
        let segment = HermiteSegment {
            t0: 0.95,
            t1: 1.05,
            q0: dvector![0.95, 0.1],
            v0: dvector![1.0, 0.0],
            q1: dvector![1.05, 0.1],
            v1: dvector![1.0, 0.0],
        };
        let loose = locate_crossing(&segment, &sys.boundary, 1e-6).unwrap();
        let tight = locate_crossing(&segment, &sys.boundary, 1e-12).unwrap();
        let b_loose = sys.boundary.value(&segment.eval_q(loose)).abs();
        let b_tight = sys.boundary.value(&segment.eval_q(tight)).abs();
        assert!(b_loose <= 1e-6);
        assert!(b_tight <= 1e-12);
        assert!(b_tight <= b_loose);
    }

    #[test]
    fn billiard_impact_is_specular() {
        let sys = billiard();
        let q = dvector![1.0, 0.0];
        let v_minus = dvector![1.0, 0.5];
        let record = impact_map(&sys, &q, &v_minus, 0.0, &ImpactParams::default()).unwrap();
        assert_abs_diff_eq!(record.v_plus[0], -1.0, epsilon = 1e-11);
        assert_abs_diff_eq!(record.v_plus[1], 0.5, epsilon = 1e-11);
        // Jump against db = (2, 0): p+ − p− = (−2, 0) = λ₀ (2, 0).
        assert_abs_diff_eq!(record.lambda0, -1.0, epsilon = 1e-11);
        assert!(record.e_plus - record.e_minus <= 1e-12);
    }

    #[test]
    fn billiard_impact_is_involutive() {
        let sys = billiard();
        let q = dvector![0.6, 0.8];
        let v_minus = dvector![0.9, 0.3];
        let params = ImpactParams::default();
        let first = impact_map(&sys, &q, &v_minus, 0.0, &params).unwrap();
        // Reversing the outgoing velocity and resolving again returns the
        // reversed incoming velocity (reflection is an involution).
        let second = impact_map(&sys, &q, &(-&first.v_plus), 0.0, &params).unwrap();
        assert!((&second.v_plus + &v_minus).abs().max() <= 1e-9);
    }

    #[test]
    fn pendulum_impact_jumps_along_impact_coannihilator() {
        let params = PendulumParams {
            cylinder_radius: 0.8,
            ..PendulumParams::default()
        };
        let built = scenarios::build_spherical_pendulum(&params).unwrap();
        let sys = &built.system;
        let theta = (params.cylinder_radius / params.length).asin();
        let q = dvector![theta, 0.4];
        let f = 1.0 + params.f_epsilon * theta.sin().powi(2);
        let v_minus = dvector![0.8, 0.8 * f];
        let record = impact_map(sys, &q, &v_minus, 0.0, &ImpactParams::default()).unwrap();
        // Paper structure: Δp_θ = λ₀ db_θ + λ₁ f, Δp_φ = −λ₁.
        let dp = &record.p_plus - &record.p_minus;
        let db = sys.boundary.gradient(&q);
        assert_abs_diff_eq!(
            dp[0],
            record.lambda0 * db[0] + record.lambda[0] * f,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(dp[1], -record.lambda[0], epsilon = 1e-10);
        assert!((record.e_plus - record.e_minus).abs() <= 1e-10);
        // Post-impact velocity is admissible and inward.
        assert!(sys.constraint_residual(&q, &record.v_plus) <= 1e-10);
        assert!(db.dot(&record.v_plus) < 0.0);
    }

    #[test]
    fn impact_rejects_receding_velocity() {
        let sys = billiard();
        let err = impact_map(
            &sys,
            &dvector![1.0, 0.0],
            &dvector![-1.0, 0.0],
            0.0,
            &ImpactParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ImpactError::NotApproaching(_)));
    }

    #[test]
    fn degenerate_contact_is_reported() {
        // Constraint row numerically parallel to the boundary conormal at the
        // contact point: the jump system is underdetermined.
        let sys = scenarios::build_free_billiard(&BilliardParams::default())
            .unwrap()
            .system;
        let degenerate = crate::system::SystemSpec {
            distribution: crate::geometry::DistributionSpec::constant(DMatrix::from_row_slice(
                1,
                2,
                &[2.0, 1e-12],
            )),
            ..sys
        };
        // Admissible (mu·v ≈ 0) and still approaching (db·v > 0).
        let err = impact_map(
            &degenerate,
            &dvector![1.0, 0.0],
            &dvector![5e-13, 1.0],
            0.0,
            &ImpactParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ImpactError::DegenerateContact), "{err:?}");
    }

    #[test]
    fn zeno_guard_flags_tight_spacing() {
        let mk = |t: f64| ImpactRecord {
            t_impact: t,
            q: dvector![1.0, 0.0],
            v_minus: dvector![1.0, 0.0],
            v_plus: dvector![-1.0, 0.0],
            p_minus: dvector![1.0, 0.0],
            p_plus: dvector![-1.0, 0.0],
            lambda0: -1.0,
            lambda: DVector::zeros(0),
            e_minus: 0.5,
            e_plus: 0.5,
        };
        let policy = ZenoPolicy::default();
        assert!(zeno_guard(&[], &policy).is_ok());
        let spaced: Vec<_> = (0..100).map(|i| mk(2.0 * i as f64)).collect();
        assert!(zeno_guard(&spaced, &policy).is_ok());
        let tight = vec![mk(1.0), mk(1.0 + 1e-9)];
        assert!(zeno_guard(&tight, &policy).is_err());
    }

    #[test]
    fn reset_separation_examples() {
        let sys = billiard();
        // Tangent velocity: zero separation.
        let sep = reset_separation(&sys, &dvector![1.0, 0.0], &dvector![0.0, 2.0], 1e-9).unwrap();
        assert_abs_diff_eq!(sep, 0.0, epsilon = 1e-14);
        // v = (1, 0.5) at q = (1, 0) with identity metric: 2‖v⊥‖ = 2.
        let sep = reset_separation(&sys, &dvector![1.0, 0.0], &dvector![1.0, 0.5], 1e-9).unwrap();
        assert_abs_diff_eq!(sep, 2.0, epsilon = 1e-13);
        // Off the boundary: error.
        assert!(reset_separation(&sys, &dvector![0.2, 0.0], &dvector![1.0, 0.0], 1e-9).is_err());
    }

    proptest! {
        #[test]
        fn reset_separation_matches_direct_formula(
            angle in 0.0..std::f64::consts::TAU,
            vx in -2.0f64..2.0,
            vy in -2.0f64..2.0,
        ) {
            let sys = billiard();
            let q = dvector![angle.cos(), angle.sin()];
            let v = dvector![vx, vy];
            let sep = reset_separation(&sys, &q, &v, 1e-9).unwrap();
            // Euclidean metric: v⊥ = (v·n̂) n̂ with n̂ = q on the unit circle.
            let vperp = v.dot(&q).abs();
            prop_assert!((sep - 2.0 * vperp).abs() <= 1e-12);
            // No-Zeno condition: separation strictly positive on the guard set.
            if sys.boundary.gradient(&q).dot(&v) > 1e-9 {
                prop_assert!(sep > 0.0);
            }
        }
    }
}
