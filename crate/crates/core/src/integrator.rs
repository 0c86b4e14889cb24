//! Constrained integration of the implicit Lagrange–d'Alembert equations
//! between impacts.
//!
//! The implicit DAE is index-reduced by differentiating the constraint once;
//! each Runge–Kutta stage solves the saddle-point system
//!
//! ```text
//! [ M(q,v)  μ(q)ᵀ ] [ v̇  ]   [ ∂L/∂q − (∂²L/∂v∂q)·v ]
//! [ μ(q)    0     ] [ −λ ] = [ −(Dμ(q)·v)·v          ]
//! ```
//!
//! and the momentum is reconstructed through the Legendre map. Constraint
//! drift is controlled by optional post-step velocity projection in the
//! mass-matrix metric.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::impact::{self, ImpactError, ImpactParams, ImpactRecord, ZenoPolicy};
use crate::lagrangian::{energy, legendre, PontryaginState};
use crate::system::SystemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classical 4-stage Runge–Kutta with a KKT solve per stage.
    KktRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilization {
    None,
    /// Project the velocity onto `ker μ(q)` in the mass-matrix metric after
    /// every accepted step.
    PostStepProjection,
}

#[derive(Clone)]
pub struct IntegratorOptions {
    pub h: f64,
    pub method: Method,
    pub stabilization: Stabilization,
    pub legendre_tol: f64,
    pub constraint_tol: f64,
    pub boundary_tol: f64,
    pub zeno: ZenoPolicy,
    pub impact: ImpactParams,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            method: Method::KktRk4,
            stabilization: Stabilization::PostStepProjection,
            legendre_tol: 1e-9,
            constraint_tol: 1e-8,
            boundary_tol: 1e-9,
            zeno: ZenoPolicy::default(),
            impact: ImpactParams::default(),
        }
    }
}

impl IntegratorOptions {
    pub fn with_step(h: f64) -> Self {
        Self {
            h,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("KKT saddle matrix is numerically singular: {0}")]
    SingularKkt(String),
    #[error("constraint residual {residual:.3e} exceeds tolerance {tol:.3e} after step")]
    ConstraintDriftExceeded { residual: f64, tol: f64 },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Impact(#[from] ImpactError),
    #[error("Zeno behaviour suspected: {0}")]
    ZenoSuspected(String),
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("domain guard violated at t = {t}: {message}")]
    GuardViolated { t: f64, message: String },
    #[error("state left the admissible region at t = {t}: b(q) = {b:.3e}")]
    BoundaryViolation { t: f64, b: f64 },
}

/// Per-sample diagnostics recorded along a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct SampleDiagnostics {
    pub energy: f64,
    pub constraint_residual: f64,
    pub legendre_residual: f64,
}

/// Ordered samples plus event log and per-sample diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<PontryaginState>,
    pub multipliers: Vec<DVector<f64>>,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub events: Vec<ImpactRecord>,
    pub grazing_count: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&PontryaginState> {
        self.samples.last()
    }
}

/// Solves a saddle-point system with one pass of iterative refinement and a
/// residual gate.
pub(crate) fn solve_saddle(
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>, StepError> {
    let lu = a.clone().full_piv_lu();
    let mut x = lu
        .solve(rhs)
        .ok_or_else(|| StepError::SingularKkt("LU solve failed".into()))?;
    let scale = 1.0 + rhs.abs().max();
    let mut residual = (a * &x - rhs).abs().max() / scale;
    if residual > 1e-12 {
        if let Some(dx) = lu.solve(&(rhs - a * &x)) {
            x += dx;
            residual = (a * &x - rhs).abs().max() / scale;
        }
    }
    if !residual.is_finite() || residual > 1e-10 {
        return Err(StepError::SingularKkt(format!(
            "solution residual {residual:.3e} exceeds 1e-10"
        )));
    }
    Ok(x)
}

/// Acceleration and constraint multipliers from the index-reduced KKT system.
pub fn constrained_rhs(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), StepError> {
    let n = sys.dim();
    let m = sys.constraint_count();
    let mass = sys.lagrangian.mass_matrix(q, v);
    let l_vq = sys.lagrangian.d2l_dvdq(q, v);
    let force = sys.lagrangian.dl_dq(q, v) - &l_vq * v;

    if m == 0 {
        let vdot = solve_saddle(&mass, &force)?;
        return Ok((vdot, DVector::zeros(0)));
    }

    let mu = sys.distribution.mu(q);
    let curvature = sys.distribution.dmu_vv(q, v);
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&mass);
    kkt.view_mut((0, n), (n, m)).copy_from(&mu.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&mu);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&force);
    rhs.rows_mut(n, m).copy_from(&(-&curvature));

    let x = solve_saddle(&kkt, &rhs)?;
    let vdot = x.rows(0, n).into_owned();
    let lambda = -x.rows(n, m).into_owned();
    Ok((vdot, lambda))
}

/// One raw RK4 step on `(q, v)`; no projection, no Legendre reconstruction.
fn rk4_raw(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>), StepError> {
    let (a1, _) = constrained_rhs(sys, q, v)?;
    let k1 = (v.clone(), a1);

    let q2 = q + 0.5 * h * &k1.0;
    let v2 = v + 0.5 * h * &k1.1;
    let (a2, _) = constrained_rhs(sys, &q2, &v2)?;
    let k2 = (v2, a2);

    let q3 = q + 0.5 * h * &k2.0;
    let v3 = v + 0.5 * h * &k2.1;
    let (a3, _) = constrained_rhs(sys, &q3, &v3)?;
    let k3 = (v3, a3);

    let q4 = q + h * &k3.0;
    let v4 = v + h * &k3.1;
    let (a4, _) = constrained_rhs(sys, &q4, &v4)?;
    let k4 = (v4, a4);

    let qn = q + (h / 6.0) * (&k1.0 + 2.0 * &k2.0 + 2.0 * &k3.0 + &k4.0);
    let vn = v + (h / 6.0) * (&k1.1 + 2.0 * &k2.1 + 2.0 * &k3.1 + &k4.1);
    Ok((qn, vn))
}

/// Projects `v` onto `ker μ(q)` in the metric `M(q, v)`.
pub(crate) fn project_velocity(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>, StepError> {
    let m = sys.constraint_count();
    if m == 0 {
        return Ok(v.clone());
    }
    let n = sys.dim();
    let mass = sys.lagrangian.mass_matrix(q, v);
    let mu = sys.distribution.mu(q);
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&mass);
    kkt.view_mut((0, n), (n, m)).copy_from(&mu.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&mu);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(&(&mu * v));
    let x = solve_saddle(&kkt, &rhs)?;
    Ok(v - x.rows(0, n).into_owned())
}

/// One accepted integrator step: RK4 advance, optional projection, Legendre
/// reconstruction and constraint-drift gate.
pub fn step(
    sys: &SystemSpec,
    state: &PontryaginState,
    opts: &IntegratorOptions,
) -> Result<PontryaginState, StepError> {
    if opts.h <= 0.0 {
        return Err(StepError::NonPositiveStep(opts.h));
    }
    let (qn, mut vn) = rk4_raw(sys, &state.q, &state.v, opts.h)?;
    if opts.stabilization == Stabilization::PostStepProjection {
        vn = project_velocity(sys, &qn, &vn)?;
    }
    let residual = sys.constraint_residual(&qn, &vn);
    if residual > opts.constraint_tol {
        return Err(StepError::ConstraintDriftExceeded {
            residual,
            tol: opts.constraint_tol,
        });
    }
    let pn = legendre(&sys.lagrangian, &qn, &vn);
    Ok(PontryaginState::new(state.t + opts.h, qn, vn, pn))
}

/// Cubic Hermite dense output for one step, interpolating `q` from endpoint
/// values and velocities. Matches the RK4 order for root localization.
#[derive(Debug, Clone)]
pub struct HermiteSegment {
    pub t0: f64,
    pub t1: f64,
    pub q0: DVector<f64>,
    pub v0: DVector<f64>,
    pub q1: DVector<f64>,
    pub v1: DVector<f64>,
}

impl HermiteSegment {
    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn eval_q(&self, t: f64) -> DVector<f64> {
        let h = self.span();
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * &self.q0 + (h10 * h) * &self.v0 + h01 * &self.q1 + (h11 * h) * &self.v1
    }

    pub fn eval_v(&self, t: f64) -> DVector<f64> {
        let h = self.span();
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (6.0 * s - 6.0 * s2) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        d00 * &self.q0 + d10 * &self.v0 + d01 * &self.q1 + d11 * &self.v1
    }
}

fn diagnostics_at(sys: &SystemSpec, state: &PontryaginState) -> SampleDiagnostics {
    SampleDiagnostics {
        energy: energy(&sys.lagrangian, &state.q, &state.v, &state.p),
        constraint_residual: sys.constraint_residual(&state.q, &state.v),
        legendre_residual: state.legendre_residual(&sys.lagrangian),
    }
}

/// Drives the constrained integrator from `state0` to `t_final`, delegating
/// boundary crossings to the impact solver and resuming from post-impact
/// states. Samples stay on the uniform grid `t0 + k·h`; impact times fall
/// strictly between samples and are recorded in the event log.
pub fn integrate(
    sys: &SystemSpec,
    state0: &PontryaginState,
    t_final: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory, SimError> {
    let b0 = sys.boundary.value(&state0.q);
    if b0 > opts.boundary_tol {
        return Err(SimError::InvalidInitialState(format!(
            "initial point is outside the admissible region (b = {b0:.3e})"
        )));
    }
    if b0.abs() <= opts.boundary_tol {
        let approach = sys.boundary.gradient(&state0.q).dot(&state0.v);
        if approach >= 0.0 {
            return Err(SimError::InvalidInitialState(
                "initial point lies on the boundary without inward velocity".into(),
            ));
        }
    }
    let cres = sys.constraint_residual(&state0.q, &state0.v);
    if cres > opts.constraint_tol {
        return Err(SimError::InvalidInitialState(format!(
            "initial velocity violates the constraints (|mu v| = {cres:.3e})"
        )));
    }
    sys.check_guard(&state0.q)
        .map_err(|message| SimError::GuardViolated {
            t: state0.t,
            message,
        })?;

    let mut traj = Trajectory::default();
    let p0 = legendre(&sys.lagrangian, &state0.q, &state0.v);
    let start = PontryaginState::new(state0.t, state0.q.clone(), state0.v.clone(), p0);
    let (_, lambda0) = constrained_rhs(sys, &start.q, &start.v).map_err(SimError::Step)?;
    traj.diagnostics.push(diagnostics_at(sys, &start));
    traj.multipliers.push(lambda0);
    traj.samples.push(start.clone());

    let mut q = start.q;
    let mut v = start.v;
    let mut armed = b0 < -opts.boundary_tol;
    let mut last_event_t = f64::NEG_INFINITY;
    let n_steps = ((t_final - state0.t) / opts.h).ceil() as usize;

    for k in 0..n_steps {
        let t_grid = state0.t + opts.h * k as f64;
        let t_target = (t_grid + opts.h).min(t_final);
        let mut t_cur = t_grid;

        // Advance to the end of the grid cell, resolving any impacts inside it.
        loop {
            let dt = t_target - t_cur;
            if dt <= f64::EPSILON * (1.0 + t_target.abs()) {
                break;
            }
            let (q1, v1) = rk4_raw(sys, &q, &v, dt).map_err(SimError::Step)?;
            let segment = HermiteSegment {
                t0: t_cur,
                t1: t_target,
                q0: q.clone(),
                v0: v.clone(),
                q1: q1.clone(),
                v1: v1.clone(),
            };
            let hit = impact::scan_crossing(&segment, &sys.boundary, opts.boundary_tol, armed);
            match hit {
                None => {
                    q = q1;
                    v = v1;
                    if !armed && sys.boundary.value(&q) < -opts.boundary_tol {
                        armed = true;
                    }
                    t_cur = t_target;
                }
                Some(t_star) => {
                    // Re-step to the crossing so the impact state carries full
                    // integrator accuracy, then polish the crossing time on the
                    // re-stepped flow.
                    let (s_star, q_star, mut v_star) = refine_crossing_by_restep(
                        sys,
                        &q,
                        &v,
                        dt,
                        t_star - t_cur,
                        opts.boundary_tol,
                    )?;
                    v_star = project_velocity(sys, &q_star, &v_star).map_err(SimError::Step)?;
                    let t_hit = t_cur + s_star;
                    let approach = sys.boundary.gradient(&q_star).dot(&v_star);
                    let speed_scale = 1.0 + v_star.abs().max();
                    if approach.abs() <= 1e-8 * speed_scale {
                        log::warn!(
                            "grazing contact at t = {t_hit:.6}: db·v = {approach:.3e}, continuing"
                        );
                        traj.grazing_count += 1;
                        q = q_star;
                        v = v_star;
                        t_cur = t_hit;
                        armed = false;
                        continue;
                    }
                    let record = impact::impact_map(sys, &q_star, &v_star, t_hit, &opts.impact)?;
                    if t_hit - last_event_t < opts.zeno.min_interimpact_time {
                        return Err(SimError::ZenoSuspected(format!(
                            "inter-impact time {:.3e} below threshold {:.3e} at t = {t_hit:.6}",
                            t_hit - last_event_t,
                            opts.zeno.min_interimpact_time
                        )));
                    }
                    q = record.q.clone();
                    v = record.v_plus.clone();
                    traj.events.push(record);
                    if traj.events.len() > opts.zeno.max_impacts {
                        return Err(SimError::ZenoSuspected(format!(
                            "impact count exceeded {}",
                            opts.zeno.max_impacts
                        )));
                    }
                    last_event_t = t_hit;
                    t_cur = t_hit;
                    armed = false;
                }
            }
        }

        if opts.stabilization == Stabilization::PostStepProjection {
            v = project_velocity(sys, &q, &v).map_err(SimError::Step)?;
        }
        let residual = sys.constraint_residual(&q, &v);
        if residual > opts.constraint_tol {
            return Err(SimError::Step(StepError::ConstraintDriftExceeded {
                residual,
                tol: opts.constraint_tol,
            }));
        }
        let b = sys.boundary.value(&q);
        if b > opts.boundary_tol {
            return Err(SimError::BoundaryViolation { t: t_target, b });
        }
        sys.check_guard(&q)
            .map_err(|message| SimError::GuardViolated {
                t: t_target,
                message,
            })?;

        let p = legendre(&sys.lagrangian, &q, &v);
        let state = PontryaginState::new(t_target, q.clone(), v.clone(), p);
        let (_, lambda) = constrained_rhs(sys, &q, &v).map_err(SimError::Step)?;
        traj.diagnostics.push(diagnostics_at(sys, &state));
        traj.multipliers.push(lambda);
        traj.samples.push(state);
    }

    Ok(traj)
}

/// Root-finds the boundary crossing on the re-stepped flow: `s ↦ b(q(s))`
/// where `q(s)` is a single RK4 step of length `s` from `(q, v)`. Seeded by
/// the dense-output estimate.
fn refine_crossing_by_restep(
    sys: &SystemSpec,
    q: &DVector<f64>,
    v: &DVector<f64>,
    dt: f64,
    s_guess: f64,
    boundary_tol: f64,
) -> Result<(f64, DVector<f64>, DVector<f64>), SimError> {
    let eval = |s: f64| -> Result<(f64, DVector<f64>, DVector<f64>), SimError> {
        if s <= 0.0 {
            let b = sys.boundary.value(q);
            return Ok((b, q.clone(), v.clone()));
        }
        let (qs, vs) = rk4_raw(sys, q, v, s).map_err(SimError::Step)?;
        let b = sys.boundary.value(&qs);
        Ok((b, qs, vs))
    };

    // Bracket the root around the dense-output seed.
    let mut lo = 0.0;
    let mut hi = s_guess.min(dt);
    let (b_lo_initial, ..) = eval(lo)?;
    let mut b_lo = b_lo_initial;
    let (mut b_hi, mut q_hi, mut v_hi) = eval(hi)?;
    let mut expand = 0;
    while b_hi <= 0.0 && hi < dt && expand < 60 {
        lo = hi;
        b_lo = b_hi;
        hi = (hi + 0.1 * dt).min(dt);
        let (b, qn, vn) = eval(hi)?;
        b_hi = b;
        q_hi = qn;
        v_hi = vn;
        expand += 1;
    }
    if b_hi <= 0.0 {
        // The re-stepped flow never leaves the region; accept the closest
        // approach at the segment end.
        return Ok((hi, q_hi, v_hi));
    }

    let mut s_best = hi;
    let mut out = (b_hi, q_hi, v_hi);
    for _ in 0..80 {
        if out.0.abs() <= 0.1 * boundary_tol {
            break;
        }
        // Secant proposal, clamped into the bracket; bisection fallback.
        let denom = out.0 - b_lo;
        let mut s_next = if denom.abs() > 0.0 {
            s_best - out.0 * (s_best - lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(s_next > lo && s_next < hi) {
            s_next = 0.5 * (lo + hi);
        }
        let (b, qn, vn) = eval(s_next)?;
        if b > 0.0 {
            hi = s_next;
        } else {
            lo = s_next;
            b_lo = b;
        }
        s_best = s_next;
        out = (b, qn, vn);
        if hi - lo < f64::EPSILON * (1.0 + dt) {
            break;
        }
    }
    Ok((s_best, out.1, out.2))
}
