//! Post-hoc verification harness: re-checks every conservation and
//! containment property on completed trajectories, independently of the
//! integrator's own diagnostics, and emits a machine-readable report.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::distribution_basis;
use crate::impact::{jump_containment_residual, zeno_guard, ZenoPolicy};
use crate::integrator::Trajectory;
use crate::lagrangian::energy;
use crate::reduction::{
    ad_star, reconstruct_abelian_with_events, reduce_state, reduced_energy, velocity_jumps,
    BundleLayout, ReducedSystemSpec, ReducedTrajectory,
};
use crate::system::SystemSpec;

/// Central tolerance table. Every audit check reads from here; none hard-codes
/// its own threshold.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub energy_drift_rel: f64,
    pub energy_jump: f64,
    pub constraint: f64,
    pub legendre: f64,
    pub force_containment: f64,
    pub jump_containment: f64,
    pub boundary: f64,
    pub rho_drift: f64,
    pub equivalence_sup: f64,
    pub min_interimpact_time: f64,
    pub max_impacts: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            energy_drift_rel: 1e-7,
            energy_jump: 1e-10,
            constraint: 1e-8,
            legendre: 1e-9,
            force_containment: 1e-6,
            jump_containment: 1e-9,
            boundary: 1e-9,
            rho_drift: 1e-8,
            equivalence_sup: 1e-5,
            min_interimpact_time: 1e-6,
            max_impacts: 10_000,
        }
    }
}

impl Tolerances {
    pub fn zeno_policy(&self) -> ZenoPolicy {
        ZenoPolicy {
            min_interimpact_time: self.min_interimpact_time,
            max_impacts: self.max_impacts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped { reason: String },
}

/// One audited property: worst residual against its tolerance, with the
/// sample/event indices where the worst case occurred.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    #[serde(flatten)]
    pub status: CheckStatus,
    pub worst: f64,
    pub tol: f64,
    pub locations: Vec<usize>,
}

impl AuditCheck {
    fn from_worst(name: &str, worst: f64, tol: f64, locations: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            status: if worst <= tol {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            worst,
            tol,
            locations,
        }
    }

    fn skipped(name: &str, reason: &str, tol: f64) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Skipped {
                reason: reason.into(),
            },
            worst: 0.0,
            tol,
            locations: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        !matches!(self.status, CheckStatus::Fail)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("trajectory grids do not overlap or are misaligned: {0}")]
    GridMismatch(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

/// Splits sample indices into maximal runs not interrupted by an event time.
fn arcs(times: &[f64], event_times: &[f64]) -> Vec<(usize, usize)> {
    let mut arcs = Vec::new();
    let mut start = 0;
    for (i, w) in times.windows(2).enumerate() {
        let crossed = event_times.iter().any(|&te| te > w[0] && te <= w[1]);
        if crossed {
            arcs.push((start, i));
            start = i + 1;
        }
    }
    arcs.push((start, times.len() - 1));
    arcs
}

/// Fourth-order central difference quotient of a sampled vector signal.
fn quotient_4th(samples: &[DVector<f64>], i: usize, h: f64) -> Option<DVector<f64>> {
    if i < 2 || i + 2 >= samples.len() {
        return None;
    }
    Some(
        (&samples[i - 2] - 8.0 * &samples[i - 1] + 8.0 * &samples[i + 1] - &samples[i + 2])
            / (12.0 * h),
    )
}

/// Audits a full-system trajectory: energy drift per smooth arc, constraint
/// and Legendre residuals, discrete force containment in the constraint
/// annihilator, impact jump containment and energy conservation, post-impact
/// inwardness, and the Zeno policy.
pub fn audit_trajectory(
    sys: &SystemSpec,
    traj: &Trajectory,
    tol: &Tolerances,
) -> Result<AuditReport, AuditError> {
    if traj.is_empty() {
        return Err(AuditError::EmptyTrajectory);
    }
    let mut report = AuditReport::default();
    let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let event_times: Vec<f64> = traj.events.iter().map(|e| e.t_impact).collect();
    let arcs = arcs(&times, &event_times);

    // Energy drift within each smooth arc, relative to the arc start.
    let energies: Vec<f64> = traj
        .samples
        .iter()
        .map(|s| energy(&sys.lagrangian, &s.q, &s.v, &s.p))
        .collect();
    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    for &(a, b) in &arcs {
        let e0 = energies[a];
        for (i, &e) in energies.iter().enumerate().take(b + 1).skip(a) {
            let drift = (e - e0).abs() / (1.0 + e0.abs());
            if drift > worst {
                worst = drift;
                loc = vec![i];
            }
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "energy_drift",
        worst,
        tol.energy_drift_rel,
        loc,
    ));

    // Constraint residual at every sample.
    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    for (i, s) in traj.samples.iter().enumerate() {
        let r = sys.constraint_residual(&s.q, &s.v);
        if r > worst {
            worst = r;
            loc = vec![i];
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "constraint_residual",
        worst,
        tol.constraint,
        loc,
    ));

    // Legendre residual at every sample.
    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    for (i, s) in traj.samples.iter().enumerate() {
        let r = s.legendre_residual(&sys.lagrangian);
        if r > worst {
            worst = r;
            loc = vec![i];
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "legendre_residual",
        worst,
        tol.legendre,
        loc,
    ));

    // Boundary containment at every sample.
    let mut worst = f64::NEG_INFINITY;
    let mut loc = Vec::new();
    for (i, s) in traj.samples.iter().enumerate() {
        let b = sys.boundary.value(&s.q);
        if b > worst {
            worst = b;
            loc = vec![i];
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "boundary_containment",
        worst,
        tol.boundary,
        loc,
    ));

    // Discrete force containment: the covariant momentum quotient minus the
    // horizontal Lagrangian derivative and the constraint force must
    // annihilate the admissible subspace. Projecting onto the distribution
    // basis also absorbs the multiplier term.
    report
        .checks
        .push(force_containment_check(sys, traj, &arcs, tol));

    // Energy-balance restatement: the same residual contracted with the
    // trajectory velocity itself.
    report
        .checks
        .push(energy_balance_check(sys, traj, &arcs, tol));

    // Event checks.
    if traj.events.is_empty() {
        report.checks.push(AuditCheck::skipped(
            "jump_containment",
            "no impacts on this trajectory",
            tol.jump_containment,
        ));
        report.checks.push(AuditCheck::skipped(
            "energy_jump",
            "no impacts on this trajectory",
            tol.energy_jump,
        ));
        report.checks.push(AuditCheck::skipped(
            "post_impact_inwardness",
            "no impacts on this trajectory",
            0.0,
        ));
    } else {
        let mut worst_jump = 0.0f64;
        let mut loc_jump = Vec::new();
        let mut worst_de = 0.0f64;
        let mut loc_de = Vec::new();
        let mut worst_inward = f64::NEG_INFINITY;
        let mut loc_inward = Vec::new();
        for (i, ev) in traj.events.iter().enumerate() {
            let db = sys.boundary.gradient(&ev.q);
            let mu = sys.distribution.mu(&ev.q);
            let dp = &ev.p_plus - &ev.p_minus;
            let r = jump_containment_residual(&dp, &db, &mu) / (1.0 + dp.abs().max());
            if r > worst_jump {
                worst_jump = r;
                loc_jump = vec![i];
            }
            let de = (ev.e_plus - ev.e_minus).abs();
            if de > worst_de {
                worst_de = de;
                loc_de = vec![i];
            }
            let inward = db.dot(&ev.v_plus);
            if inward > worst_inward {
                worst_inward = inward;
                loc_inward = vec![i];
            }
        }
        report.checks.push(AuditCheck::from_worst(
            "jump_containment",
            worst_jump,
            tol.jump_containment,
            loc_jump,
        ));
        report.checks.push(AuditCheck::from_worst(
            "energy_jump",
            worst_de,
            tol.energy_jump,
            loc_de,
        ));
        // Inwardness: db·v+ must be strictly negative.
        report.checks.push(AuditCheck::from_worst(
            "post_impact_inwardness",
            worst_inward,
            0.0,
            loc_inward,
        ));
    }

    // Zeno policy.
    let zeno = zeno_guard(&traj.events, &tol.zeno_policy());
    report.checks.push(AuditCheck {
        name: "zeno_guard".into(),
        status: match &zeno {
            Ok(()) => CheckStatus::Pass,
            Err(_) => CheckStatus::Fail,
        },
        worst: traj.events.len() as f64,
        tol: tol.max_impacts as f64,
        locations: Vec::new(),
    });

    Ok(report)
}

fn force_containment_check(
    sys: &SystemSpec,
    traj: &Trajectory,
    arcs: &[(usize, usize)],
    tol: &Tolerances,
) -> AuditCheck {
    let ps: Vec<DVector<f64>> = traj.samples.iter().map(|s| s.p.clone()).collect();
    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    let mut checked = false;
    for &(a, b) in arcs {
        if b < a + 4 {
            continue;
        }
        for i in (a + 2)..=(b - 2) {
            let h = traj.samples[i + 1].t - traj.samples[i].t;
            let Some(pdot) = quotient_4th(&ps[a..=b], i - a, h) else {
                continue;
            };
            checked = true;
            let s = &traj.samples[i];
            // Covariant quotient and horizontal derivative; both corrections
            // vanish for the flat default connection.
            let transport = sys.connection.covector_transport(&s.q, &s.v, &s.p);
            let horizontal = sys.lagrangian.dl_dq(&s.q, &s.v)
                - sys.connection.horizontal_correction(&s.q, &s.v, &s.p);
            let mut residual = pdot - transport - horizontal;
            if sys.constraint_count() > 0 {
                let mu = sys.distribution.mu(&s.q);
                residual -= mu.transpose() * &traj.multipliers[i];
            }
            let Ok(basis) = distribution_basis(&sys.distribution, &s.q) else {
                continue;
            };
            let projected = basis.transpose() * &residual;
            let r = projected.abs().max();
            if r > worst {
                worst = r;
                loc = vec![i];
            }
        }
    }
    if !checked {
        return AuditCheck::skipped(
            "force_containment",
            "no smooth arc long enough for the difference stencil",
            tol.force_containment,
        );
    }
    AuditCheck::from_worst("force_containment", worst, tol.force_containment, loc)
}

fn energy_balance_check(
    sys: &SystemSpec,
    traj: &Trajectory,
    arcs: &[(usize, usize)],
    tol: &Tolerances,
) -> AuditCheck {
    let ps: Vec<DVector<f64>> = traj.samples.iter().map(|s| s.p.clone()).collect();
    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    let mut checked = false;
    for &(a, b) in arcs {
        if b < a + 4 {
            continue;
        }
        for i in (a + 2)..=(b - 2) {
            let h = traj.samples[i + 1].t - traj.samples[i].t;
            let Some(pdot) = quotient_4th(&ps[a..=b], i - a, h) else {
                continue;
            };
            checked = true;
            let s = &traj.samples[i];
            let transport = sys.connection.covector_transport(&s.q, &s.v, &s.p);
            let horizontal = sys.lagrangian.dl_dq(&s.q, &s.v)
                - sys.connection.horizontal_correction(&s.q, &s.v, &s.p);
            let residual = (pdot - transport - horizontal).dot(&s.v);
            let e = energy(&sys.lagrangian, &s.q, &s.v, &s.p);
            let r = residual.abs() / (1.0 + e.abs());
            if r > worst {
                worst = r;
                loc = vec![i];
            }
        }
    }
    if !checked {
        return AuditCheck::skipped(
            "energy_balance",
            "no smooth arc long enough for the difference stencil",
            1e-8,
        );
    }
    AuditCheck::from_worst(
        "energy_balance",
        worst,
        1e-8_f64.max(tol.force_containment),
        loc,
    )
}

/// Audits a reduced trajectory: reduced energy drift, reduced constraint and
/// Legendre residuals, impact checks, vertical momentum law when the
/// coadjoint term vanishes identically, and the Zeno policy.
pub fn audit_reduced_trajectory(
    spec: &ReducedSystemSpec,
    traj: &ReducedTrajectory,
    tol: &Tolerances,
) -> Result<AuditReport, AuditError> {
    if traj.is_empty() {
        return Err(AuditError::EmptyTrajectory);
    }
    let mut report = AuditReport::default();
    let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let event_times: Vec<f64> = traj.events.iter().map(|e| e.t_impact).collect();
    let arcs = arcs(&times, &event_times);

    let energies: Vec<f64> = traj
        .samples
        .iter()
        .map(|s| reduced_energy(spec, &s.sigma, &s.u, &s.xi, &s.y, &s.rho))
        .collect();
    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    for &(a, b) in &arcs {
        let e0 = energies[a];
        for (i, &e) in energies.iter().enumerate().take(b + 1).skip(a) {
            let drift = (e - e0).abs() / (1.0 + e0.abs());
            if drift > worst {
                worst = drift;
                loc = vec![i];
            }
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "energy_drift",
        worst,
        tol.energy_drift_rel,
        loc,
    ));

    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    for (i, s) in traj.samples.iter().enumerate() {
        let r = spec.constraint_residual(&s.sigma, &s.u, &s.xi);
        if r > worst {
            worst = r;
            loc = vec![i];
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "constraint_residual",
        worst,
        tol.constraint,
        loc,
    ));

    let mut worst = 0.0f64;
    let mut loc = Vec::new();
    for (i, s) in traj.samples.iter().enumerate() {
        let r = s.legendre_residual(&spec.ell);
        if r > worst {
            worst = r;
            loc = vec![i];
        }
    }
    report.checks.push(AuditCheck::from_worst(
        "legendre_residual",
        worst,
        tol.legendre,
        loc,
    ));

    // Vertical momentum law ρ̇ = 0, applicable when the coadjoint and
    // transport terms vanish identically and there is no vertical forcing.
    let vertical_trivial =
        spec.algebra.is_abelian() && spec.conn_a.is_none() && spec.delta_g.rows == 0;
    if vertical_trivial {
        let mut worst = 0.0f64;
        let mut loc = Vec::new();
        for &(a, b) in &arcs {
            let rho0 = traj.samples[a].rho.clone();
            for i in a..=b {
                let d = (&traj.samples[i].rho - &rho0).abs().max();
                if d > worst {
                    worst = d;
                    loc = vec![i];
                }
            }
        }
        report.checks.push(AuditCheck::from_worst(
            "vertical_momentum_drift",
            worst,
            tol.rho_drift,
            loc,
        ));
    } else {
        // General vertical law: discrete ∇ρ/dt − ad*_ξ ρ fitted against the
        // vertical annihilator rows.
        let rhos: Vec<DVector<f64>> = traj.samples.iter().map(|s| s.rho.clone()).collect();
        let mut worst = 0.0f64;
        let mut loc = Vec::new();
        let mut checked = false;
        for &(a, b) in &arcs {
            if b < a + 4 {
                continue;
            }
            for i in (a + 2)..=(b - 2) {
                let h = traj.samples[i + 1].t - traj.samples[i].t;
                let Some(rdot) = quotient_4th(&rhos[a..=b], i - a, h) else {
                    continue;
                };
                checked = true;
                let s = &traj.samples[i];
                let a_mat = spec.a_at(&s.sigma);
                let transport = ad_star(&spec.algebra, &(&a_mat * &s.u), &s.rho);
                let residual = rdot + transport - ad_star(&spec.algebra, &s.xi, &s.rho);
                let r = if spec.delta_g.rows > 0 {
                    let rows = spec.delta_g.mu(&s.sigma);
                    let gram = &rows * rows.transpose();
                    match gram.full_piv_lu().solve(&(&rows * &residual)) {
                        Some(c) => (rows.transpose() * c - &residual).abs().max(),
                        None => residual.abs().max(),
                    }
                } else {
                    residual.abs().max()
                };
                if r > worst {
                    worst = r;
                    loc = vec![i];
                }
            }
        }
        if checked {
            report.checks.push(AuditCheck::from_worst(
                "vertical_law_containment",
                worst,
                tol.force_containment,
                loc,
            ));
        } else {
            report.checks.push(AuditCheck::skipped(
                "vertical_law_containment",
                "no smooth arc long enough for the difference stencil",
                tol.force_containment,
            ));
        }
    }

    if traj.events.is_empty() {
        report.checks.push(AuditCheck::skipped(
            "energy_jump",
            "no impacts on this trajectory",
            tol.energy_jump,
        ));
        report.checks.push(AuditCheck::skipped(
            "jump_containment",
            "no impacts on this trajectory",
            tol.jump_containment,
        ));
    } else {
        let mut worst_de = 0.0f64;
        let mut loc_de = Vec::new();
        let mut worst_jump = 0.0f64;
        let mut loc_jump = Vec::new();
        for (i, ev) in traj.events.iter().enumerate() {
            let de = (ev.e_plus - ev.e_minus).abs();
            if de > worst_de {
                worst_de = de;
                loc_de = vec![i];
            }
            // Shape-momentum jump containment in span{db} + Δ_Σ° rows.
            let db = spec.boundary.gradient(&ev.sigma);
            let rows = spec.delta_sigma.mu(&ev.sigma);
            let dy = &ev.y_plus - &ev.y_minus;
            let r = jump_containment_residual(&dy, &db, &rows) / (1.0 + dy.abs().max());
            // Vertical jump containment in Δ_g̃° rows.
            let drho = &ev.rho_plus - &ev.rho_minus;
            let rv = if spec.delta_g.rows > 0 {
                let vrows = spec.delta_g.mu(&ev.sigma);
                let gram = &vrows * vrows.transpose();
                match gram.full_piv_lu().solve(&(&vrows * &drho)) {
                    Some(c) => (vrows.transpose() * c - &drho).abs().max(),
                    None => drho.abs().max(),
                }
            } else {
                drho.abs().max()
            } / (1.0 + drho.abs().max());
            let r = r.max(rv);
            if r > worst_jump {
                worst_jump = r;
                loc_jump = vec![i];
            }
        }
        report.checks.push(AuditCheck::from_worst(
            "energy_jump",
            worst_de,
            tol.energy_jump,
            loc_de,
        ));
        report.checks.push(AuditCheck::from_worst(
            "jump_containment",
            worst_jump,
            tol.jump_containment,
            loc_jump,
        ));
    }

    let zeno_ok = traj.events.len() <= tol.max_impacts
        && traj
            .events
            .windows(2)
            .all(|w| w[1].t_impact - w[0].t_impact >= tol.min_interimpact_time);
    report.checks.push(AuditCheck {
        name: "zeno_guard".into(),
        status: if zeno_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        worst: traj.events.len() as f64,
        tol: tol.max_impacts as f64,
        locations: Vec::new(),
    });

    Ok(report)
}

/// Sup-norm deviations between a full trajectory dropped through the layout
/// and a reduced trajectory on the same grid, plus the reconstruction error
/// of the group coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceMetrics {
    pub shared_samples: usize,
    pub sup_sigma: f64,
    pub sup_u: f64,
    pub sup_xi: f64,
    pub sup_rho: f64,
    pub sup_group: f64,
    pub first_divergence: Option<usize>,
}

/// Compares the projection of a full trajectory against a reduced trajectory
/// from matching initial data, time-aligned on the shared step grid, and
/// checks group reconstruction against the full group coordinate.
pub fn audit_equivalence(
    layout: &BundleLayout,
    full: &Trajectory,
    reduced: &ReducedTrajectory,
    tol: &Tolerances,
) -> Result<(AuditReport, EquivalenceMetrics), AuditError> {
    if full.is_empty() || reduced.is_empty() {
        return Err(AuditError::EmptyTrajectory);
    }
    let n = full.samples.len().min(reduced.samples.len());
    if n < 2 {
        return Err(AuditError::GridMismatch(
            "fewer than two shared samples".into(),
        ));
    }
    for i in 0..n {
        let dt = (full.samples[i].t - reduced.samples[i].t).abs();
        if dt > 1e-12 * (1.0 + full.samples[i].t.abs()) {
            return Err(AuditError::GridMismatch(format!(
                "sample {i}: full t = {}, reduced t = {}",
                full.samples[i].t, reduced.samples[i].t
            )));
        }
    }

    let mut metrics = EquivalenceMetrics {
        shared_samples: n,
        sup_sigma: 0.0,
        sup_u: 0.0,
        sup_xi: 0.0,
        sup_rho: 0.0,
        sup_group: 0.0,
        first_divergence: None,
    };
    for i in 0..n {
        let dropped = reduce_state(layout, &full.samples[i])
            .map_err(|e| AuditError::GridMismatch(e.to_string()))?;
        let red = &reduced.samples[i];
        let ds = (&dropped.sigma - &red.sigma).abs().max();
        let du = (&dropped.u - &red.u).abs().max();
        let dxi = (&dropped.xi - &red.xi).abs().max();
        let drho = (&dropped.rho - &red.rho).abs().max();
        metrics.sup_sigma = metrics.sup_sigma.max(ds);
        metrics.sup_u = metrics.sup_u.max(du);
        metrics.sup_xi = metrics.sup_xi.max(dxi);
        metrics.sup_rho = metrics.sup_rho.max(drho);
        let state_dev = ds.max(du).max(dxi).max(drho);
        if state_dev > tol.equivalence_sup && metrics.first_divergence.is_none() {
            metrics.first_divergence = Some(i);
        }
    }

    // Reconstruction of the abelian group coordinate against the full one.
    let r = layout.shape_dim;
    let k = layout.group_dim;
    let ts: Vec<f64> = reduced.samples[..n].iter().map(|s| s.t).collect();
    let ws: Vec<DVector<f64>> = reduced.samples[..n]
        .iter()
        .map(|s| match &layout.conn_a {
            Some(a) => &s.xi + a(&s.sigma) * &s.u,
            None => s.xi.clone(),
        })
        .collect();
    let g0 = full.samples[0].q.rows(r, k).into_owned();
    let jumps = velocity_jumps(layout.conn_a.as_ref(), &reduced.events);
    let path = reconstruct_abelian_with_events(&ts, &ws, &jumps, &g0);
    for (i, g) in path.iter().enumerate() {
        let dev = (g - full.samples[i].q.rows(r, k).into_owned()).abs().max();
        metrics.sup_group = metrics.sup_group.max(dev);
        if dev > tol.equivalence_sup && metrics.first_divergence.is_none() {
            metrics.first_divergence = Some(i);
        }
    }

    let mut report = AuditReport::default();
    let state_sup = metrics
        .sup_sigma
        .max(metrics.sup_u)
        .max(metrics.sup_xi)
        .max(metrics.sup_rho);
    report.checks.push(AuditCheck::from_worst(
        "equivalence_state_supnorm",
        state_sup,
        tol.equivalence_sup,
        metrics.first_divergence.into_iter().collect(),
    ));
    report.checks.push(AuditCheck::from_worst(
        "equivalence_reconstruction",
        metrics.sup_group,
        tol.equivalence_sup,
        Vec::new(),
    ));
    Ok((report, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, IntegratorOptions};
    use crate::reduction::{integrate_reduced, LpMode};
    use crate::scenarios::{self, BilliardParams, PendulumParams};

    fn billiard_run() -> (crate::system::SystemSpec, Trajectory) {
        let b = scenarios::build_free_billiard(&BilliardParams::default()).unwrap();
        let traj = integrate(
            &b.system,
            &b.initial_state(),
            5.0,
            &IntegratorOptions::with_step(1e-3),
        )
        .unwrap();
        (b.system, traj)
    }

    #[test]
    fn billiard_audit_passes_and_is_deterministic() {
        let (sys, traj) = billiard_run();
        assert!(!traj.events.is_empty());
        let tol = Tolerances::default();
        let report = audit_trajectory(&sys, &traj, &tol).unwrap();
        assert!(report.passed(), "{report:?}");
        let again = audit_trajectory(&sys, &traj, &tol).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn corrupted_momentum_fails_legendre_check() {
        let (sys, mut traj) = billiard_run();
        let idx = traj.samples.len() / 2;
        traj.samples[idx].p[0] += 0.3;
        let report = audit_trajectory(&sys, &traj, &Tolerances::default()).unwrap();
        let check = report.check("legendre_residual").unwrap();
        assert!(!check.passed());
        assert_eq!(check.locations, vec![idx]);
    }

    #[test]
    fn corrupted_event_energy_fails_jump_check() {
        let (sys, mut traj) = billiard_run();
        assert!(!traj.events.is_empty());
        traj.events[0].e_plus += 1e-6;
        let report = audit_trajectory(&sys, &traj, &Tolerances::default()).unwrap();
        assert!(!report.check("energy_jump").unwrap().passed());
    }

    #[test]
    fn equivalence_detects_mismatched_initial_xi() {
        let params = PendulumParams {
            cylinder_radius: 1.0, // no reachable wall: smooth short run
            t_final: 0.3,
            ..PendulumParams::default()
        };
        // Unconstrained pendulum scenario for a clean equivalence pair.
        let full = scenarios::build_spherical_pendulum(&params).unwrap();
        let unconstrained = crate::system::SystemSpec {
            distribution: crate::geometry::DistributionSpec::unconstrained(2),
            ..full.system.clone()
        };
        let mut state0 = full.initial_state();
        state0.v[0] = 0.4;
        state0.v[1] = 0.9;
        state0.p = crate::lagrangian::legendre(&unconstrained.lagrangian, &state0.q, &state0.v);
        let opts = IntegratorOptions::with_step(1e-3);
        let traj = integrate(&unconstrained, &state0, 0.3, &opts).unwrap();

        let red = scenarios::build_reduced_pendulum(&params).unwrap();
        let layout = full.layout.clone().unwrap();
        let matched = integrate_reduced(
            &red.spec,
            0.0,
            &red.sigma0,
            &nalgebra::dvector![0.4],
            &nalgebra::dvector![0.9],
            0.3,
            &opts,
            LpMode::WellPosed,
        )
        .unwrap();
        let (report, metrics) =
            audit_equivalence(&layout, &traj, &matched, &Tolerances::default()).unwrap();
        assert!(report.passed(), "{metrics:?}");

        // Mismatched initial algebra velocity must be flagged with an index.
        let wrong = integrate_reduced(
            &red.spec,
            0.0,
            &red.sigma0,
            &nalgebra::dvector![0.4],
            &nalgebra::dvector![1.2],
            0.3,
            &opts,
            LpMode::WellPosed,
        )
        .unwrap();
        let (report, metrics) =
            audit_equivalence(&layout, &traj, &wrong, &Tolerances::default()).unwrap();
        assert!(!report.passed());
        assert!(metrics.first_divergence.is_some());
    }

    #[test]
    fn symmetric_connection_leaves_force_containment_invariant() {
        // For a torsion-free connection the covariant-quotient and
        // horizontal-derivative corrections cancel in the force residual, so
        // the audit must agree with the flat-chart audit to roundoff. This
        // pins the index conventions of both corrections against each other.
        use crate::geometry::ConnectionSpec;
        use std::sync::Arc;
        let params = PendulumParams::default();
        let built = scenarios::build_spherical_pendulum(&params).unwrap();
        let traj = integrate(
            &built.system,
            &built.initial_state(),
            0.3,
            &IntegratorOptions::with_step(1e-3),
        )
        .unwrap();
        let tol = Tolerances::default();
        let flat_report = audit_trajectory(&built.system, &traj, &tol).unwrap();

        // Levi-Civita symbols of the sphere metric diag(1, sin^2 theta).
        let gamma = Arc::new(|q: &nalgebra::DVector<f64>| {
            let (s, c) = (q[0].sin(), q[0].cos());
            let mut g_theta = nalgebra::DMatrix::zeros(2, 2);
            g_theta[(1, 1)] = -s * c;
            let mut g_phi = nalgebra::DMatrix::zeros(2, 2);
            let cot = c / s;
            g_phi[(0, 1)] = cot;
            g_phi[(1, 0)] = cot;
            vec![g_theta, g_phi]
        });
        let curved = crate::system::SystemSpec {
            connection: ConnectionSpec::with_christoffel(gamma),
            ..built.system.clone()
        };
        let curved_report = audit_trajectory(&curved, &traj, &tol).unwrap();
        let flat = flat_report.check("force_containment").unwrap();
        let curved_check = curved_report.check("force_containment").unwrap();
        assert!(curved_check.passed(), "{curved_check:?}");
        assert!(
            (flat.worst - curved_check.worst).abs() <= 1e-12 * (1.0 + flat.worst.abs()),
            "flat {:.3e} vs curved {:.3e}",
            flat.worst,
            curved_check.worst
        );
    }

    #[test]
    fn zero_overlap_is_a_grid_mismatch() {
        let (_, traj) = billiard_run();
        let empty = ReducedTrajectory::default();
        let layout = crate::reduction::BundleLayout::trivial(1, 1);
        let err = audit_equivalence(&layout, &traj, &empty, &Tolerances::default()).unwrap_err();
        assert!(matches!(
            err,
            AuditError::EmptyTrajectory | AuditError::GridMismatch(_)
        ));
    }
}
