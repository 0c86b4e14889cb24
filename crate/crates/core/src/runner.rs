//! Drives one configured run end to end: build scenario, integrate, write
//! artifacts, optionally audit. Given the same config and seed, the written
//! artifacts are byte-identical.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::audit::{
    audit_equivalence, audit_reduced_trajectory, audit_trajectory, AuditCheck, AuditReport,
    CheckStatus, EquivalenceMetrics, Tolerances,
};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::geometry::validate_geometry;
use crate::impact::ImpactParams;
use crate::integrator::{integrate, IntegratorOptions, Trajectory};
use crate::lagrangian::fd_audit;
use crate::output;
use crate::reduction::{
    integrate_reduced, reconstruct, EpsTrajectory, GroupPath, LpMode, ReducedTrajectory,
};
use crate::scenarios::{self, EpsScenario, FullScenario, ReducedScenario, ScenarioBuild};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] scenarios::ScenarioError),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Result of a completed run: exit code per the CLI contract (0 pass, 1 any
/// audit failure) and the artifact paths written.
pub struct RunOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Serialize)]
struct AuditArtifact {
    scenario: String,
    mode: String,
    seed: u64,
    geometry: Option<Vec<GeometryCheckRow>>,
    lagrangian_fd: Option<FdRow>,
    trajectory: AuditReport,
    reduced_trajectory: Option<AuditReport>,
    equivalence: Option<EquivalenceMetrics>,
}

#[derive(Serialize)]
struct GeometryCheckRow {
    name: String,
    passed: bool,
    worst: f64,
    tol: f64,
}

#[derive(Serialize)]
struct FdRow {
    dl_dv_max_rel: f64,
    dl_dq_max_rel: f64,
    d2l_dvdv_max_rel: f64,
    d2l_dvdq_max_rel: f64,
}

fn integrator_options(cfg: &RunConfig, h: f64) -> IntegratorOptions {
    IntegratorOptions {
        h,
        constraint_tol: cfg.tolerances.constraint,
        legendre_tol: cfg.tolerances.legendre,
        boundary_tol: cfg.tolerances.boundary,
        zeno: cfg.tolerances.zeno_policy(),
        impact: ImpactParams {
            boundary_tol: cfg.tolerances.boundary,
            constraint_tol: cfg.tolerances.constraint,
            jump_tol: cfg.tolerances.jump_containment,
            energy_jump_tol: cfg.tolerances.energy_jump,
            ..ImpactParams::default()
        },
        ..IntegratorOptions::default()
    }
}

#[allow(clippy::type_complexity)]
fn sample_states(
    traj: &Trajectory,
    seed: u64,
) -> (Vec<DVector<f64>>, Vec<(DVector<f64>, DVector<f64>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = traj.samples.len();
    let take = 12.min(n);
    let mut qs = Vec::with_capacity(take);
    let mut qvs = Vec::with_capacity(take);
    for i in 0..take {
        let idx = i * (n - 1) / take.max(1);
        let s = &traj.samples[idx];
        let jitter =
            |x: f64, rng: &mut ChaCha8Rng| x + 1e-3 * (1.0 + x.abs()) * (rng.random::<f64>() - 0.5);
        let q = DVector::from_iterator(s.q.len(), s.q.iter().map(|&x| jitter(x, &mut rng)));
        let v = DVector::from_iterator(s.v.len(), s.v.iter().map(|&x| jitter(x, &mut rng)));
        qs.push(q.clone());
        qvs.push((q, v));
    }
    (qs, qvs)
}

fn full_run(
    cfg: &RunConfig,
    scenario: &FullScenario,
    out_dir: &Path,
) -> Result<RunOutcome, RunnerError> {
    let t_final = cfg.t_final.unwrap_or(scenario.t_final);
    let h = cfg.h.unwrap_or(scenario.h);
    let opts = integrator_options(cfg, h);
    let state0 = scenario.initial_state();
    let traj = integrate(&scenario.system, &state0, t_final, &opts)
        .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    println!(
        "[integrate] scenario={} samples={} events={} grazings={} t_final={}",
        scenario.name,
        traj.samples.len(),
        traj.events.len(),
        traj.grazing_count,
        t_final
    );

    let csv = out_dir.join("trajectory.csv");
    output::write_trajectory_csv(&csv, &traj)?;
    let events = out_dir.join("events.jsonl");
    output::write_events_jsonl(&events, &traj.events)?;
    let mut artifacts = vec![csv, events];
    let mut exit_code = 0;

    if cfg.audit {
        let (qs, qvs) = sample_states(&traj, cfg.seed);
        let geometry = validate_geometry(&scenario.system, &qs);
        let fd = fd_audit(&scenario.system.lagrangian, &qvs);
        let report = audit_trajectory(&scenario.system, &traj, &cfg.tolerances)
            .map_err(|e| RunnerError::Simulation(e.to_string()))?;
        let failures = report.checks.iter().filter(|c| !c.passed()).count();
        println!(
            "[audit] checks={} failures={} geometry_ok={} fd_ok={}",
            report.checks.len(),
            failures,
            geometry.all_passed(),
            fd.first_derivatives_ok(1e-6)
        );
        if failures > 0 || !geometry.all_passed() || !fd.first_derivatives_ok(1e-6) {
            exit_code = 1;
        }
        let artifact = AuditArtifact {
            scenario: scenario.name.into(),
            mode: "full".into(),
            seed: cfg.seed,
            geometry: Some(geometry_rows(&geometry)),
            lagrangian_fd: Some(FdRow {
                dl_dv_max_rel: fd.dl_dv_max_rel,
                dl_dq_max_rel: fd.dl_dq_max_rel,
                d2l_dvdv_max_rel: fd.d2l_dvdv_max_rel,
                d2l_dvdq_max_rel: fd.d2l_dvdq_max_rel,
            }),
            trajectory: report,
            reduced_trajectory: None,
            equivalence: None,
        };
        let audit_path = out_dir.join("audit.json");
        output::write_json(&audit_path, &artifact)?;
        artifacts.push(audit_path);
    }
    Ok(RunOutcome {
        exit_code,
        artifacts,
    })
}

fn geometry_rows(report: &crate::geometry::GeometryReport) -> Vec<GeometryCheckRow> {
    report
        .checks
        .iter()
        .map(|c| GeometryCheckRow {
            name: c.name.clone(),
            passed: c.passed,
            worst: c.worst,
            tol: c.tol,
        })
        .collect()
}

fn reduced_run_inner(
    cfg: &RunConfig,
    scenario: &ReducedScenario,
    t_final: f64,
    h: f64,
) -> Result<(ReducedTrajectory, GroupPath), RunnerError> {
    let opts = integrator_options(cfg, h);
    let mode = if cfg.paper_literal_vertical {
        LpMode::PaperLiteralVertical
    } else {
        LpMode::WellPosed
    };
    scenario
        .spec
        .validate(std::slice::from_ref(&scenario.sigma0))
        .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    let traj = integrate_reduced(
        &scenario.spec,
        0.0,
        &scenario.sigma0,
        &scenario.u0,
        &scenario.xi0,
        t_final,
        &opts,
        mode,
    )
    .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    let ts: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let ws = crate::reduction::body_velocities(scenario.spec.conn_a.as_ref(), &traj.samples);
    let jumps = crate::reduction::velocity_jumps(scenario.spec.conn_a.as_ref(), &traj.events);
    let path = reconstruct(
        &scenario.spec.algebra,
        &ts,
        &ws,
        &jumps,
        Some(&scenario.group0),
        None,
    )
    .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    Ok((traj, path))
}

fn reduced_run(
    cfg: &RunConfig,
    scenario: &ReducedScenario,
    out_dir: &Path,
) -> Result<RunOutcome, RunnerError> {
    let t_final = cfg.t_final.unwrap_or(scenario.t_final);
    let h = cfg.h.unwrap_or(scenario.h);
    let (traj, path) = reduced_run_inner(cfg, scenario, t_final, h)?;
    println!(
        "[integrate] scenario={} mode=reduced samples={} events={} vertical_mode={}",
        scenario.name,
        traj.samples.len(),
        traj.events.len(),
        if cfg.paper_literal_vertical {
            "paper-literal"
        } else {
            "well-posed"
        }
    );
    if cfg.paper_literal_vertical && traj.worst_vertical_consistency > 0.0 {
        println!(
            "[integrate] vertical consistency defect={:.3e}",
            traj.worst_vertical_consistency
        );
    }

    let csv = out_dir.join("trajectory.csv");
    output::write_reduced_trajectory_csv(&csv, &traj, Some(&path))?;
    let events = out_dir.join("events.jsonl");
    output::write_reduced_events_jsonl(&events, &traj.events)?;
    let mut artifacts = vec![csv, events];
    let mut exit_code = 0;

    if cfg.audit {
        let report = audit_reduced_trajectory(&scenario.spec, &traj, &cfg.tolerances)
            .map_err(|e| RunnerError::Simulation(e.to_string()))?;
        let failures = report.checks.iter().filter(|c| !c.passed()).count();
        println!(
            "[audit] checks={} failures={}",
            report.checks.len(),
            failures
        );
        if failures > 0 {
            exit_code = 1;
        }
        let artifact = AuditArtifact {
            scenario: scenario.name.into(),
            mode: "reduced".into(),
            seed: cfg.seed,
            geometry: None,
            lagrangian_fd: None,
            trajectory: report,
            reduced_trajectory: None,
            equivalence: None,
        };
        let audit_path = out_dir.join("audit.json");
        output::write_json(&audit_path, &artifact)?;
        artifacts.push(audit_path);
    }
    Ok(RunOutcome {
        exit_code,
        artifacts,
    })
}

fn eps_run(
    cfg: &RunConfig,
    scenario: &EpsScenario,
    out_dir: &Path,
) -> Result<RunOutcome, RunnerError> {
    let t_final = cfg.t_final.unwrap_or(scenario.t_final);
    let h = cfg.h.unwrap_or(scenario.h);
    let traj = crate::reduction::integrate_eps(
        &scenario.algebra,
        &scenario.lagrangian,
        &scenario.constraint,
        &scenario.xi0,
        t_final,
        h,
    )
    .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    println!(
        "[integrate] scenario={} mode=eps samples={}",
        scenario.name,
        traj.ts.len()
    );
    let csv = out_dir.join("trajectory.csv");
    output::write_eps_trajectory_csv(&csv, &traj)?;
    let events = out_dir.join("events.jsonl");
    output::write_events_jsonl(&events, &[])?;
    let mut artifacts = vec![csv, events];
    let mut exit_code = 0;

    if cfg.audit {
        let report = eps_audit(&traj, &cfg.tolerances);
        let failures = report.checks.iter().filter(|c| !c.passed()).count();
        println!(
            "[audit] checks={} failures={}",
            report.checks.len(),
            failures
        );
        if failures > 0 {
            exit_code = 1;
        }
        let artifact = AuditArtifact {
            scenario: scenario.name.into(),
            mode: "eps".into(),
            seed: cfg.seed,
            geometry: None,
            lagrangian_fd: None,
            trajectory: report,
            reduced_trajectory: None,
            equivalence: None,
        };
        let audit_path = out_dir.join("audit.json");
        output::write_json(&audit_path, &artifact)?;
        artifacts.push(audit_path);
    }
    Ok(RunOutcome {
        exit_code,
        artifacts,
    })
}

fn eps_audit(traj: &EpsTrajectory, tol: &Tolerances) -> AuditReport {
    let mut report = AuditReport::default();
    let e0 = traj.diagnostics.first().map_or(0.0, |d| d.energy);
    let mut worst_e = 0.0f64;
    let mut worst_c = 0.0f64;
    for d in &traj.diagnostics {
        worst_e = worst_e.max((d.energy - e0).abs() / (1.0 + e0.abs()));
        worst_c = worst_c.max(d.constraint_residual);
    }
    report.checks.push(AuditCheck {
        name: "energy_drift".into(),
        status: if worst_e <= tol.energy_drift_rel {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        worst: worst_e,
        tol: tol.energy_drift_rel,
        locations: Vec::new(),
    });
    report.checks.push(AuditCheck {
        name: "constraint_residual".into(),
        status: if worst_c <= tol.constraint {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        worst: worst_c,
        tol: tol.constraint,
        locations: Vec::new(),
    });
    report
}

fn compare_run(
    cfg: &RunConfig,
    scenario: &FullScenario,
    out_dir: &Path,
) -> Result<RunOutcome, RunnerError> {
    let t_final = cfg.t_final.unwrap_or(scenario.t_final);
    let h = cfg.h.unwrap_or(scenario.h);
    let opts = integrator_options(cfg, h);
    let state0 = scenario.initial_state();
    let full_traj = integrate(&scenario.system, &state0, t_final, &opts)
        .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    println!(
        "[integrate] scenario={} mode=full samples={} events={}",
        scenario.name,
        full_traj.samples.len(),
        full_traj.events.len()
    );

    let reduced_scenario = build_reduced_counterpart(cfg, scenario)?;
    let (reduced_traj, path) = reduced_run_inner(cfg, &reduced_scenario, t_final, h)?;
    println!(
        "[integrate] scenario={} mode=reduced samples={} events={}",
        reduced_scenario.name,
        reduced_traj.samples.len(),
        reduced_traj.events.len()
    );

    let full_csv = out_dir.join("trajectory_full.csv");
    output::write_trajectory_csv(&full_csv, &full_traj)?;
    let reduced_csv = out_dir.join("trajectory_reduced.csv");
    output::write_reduced_trajectory_csv(&reduced_csv, &reduced_traj, Some(&path))?;
    let events = out_dir.join("events.jsonl");
    output::write_events_jsonl(&events, &full_traj.events)?;

    let layout = scenario
        .layout
        .clone()
        .ok_or_else(|| RunnerError::Simulation("scenario has no reduction layout".into()))?;
    let equivalence = audit_equivalence(&layout, &full_traj, &reduced_traj, &cfg.tolerances)
        .map_err(|e| RunnerError::Simulation(e.to_string()))?;
    let (eq_report, metrics) = equivalence;
    println!(
        "[equivalence] shared={} sup_state={:.3e} sup_group={:.3e} pass={}",
        metrics.shared_samples,
        metrics
            .sup_sigma
            .max(metrics.sup_u)
            .max(metrics.sup_xi)
            .max(metrics.sup_rho),
        metrics.sup_group,
        eq_report.passed()
    );
    let eq_path = out_dir.join("equivalence.json");
    output::write_json(&eq_path, &metrics)?;
    let mut artifacts = vec![full_csv, reduced_csv, events, eq_path];
    let mut exit_code = 0;

    if cfg.audit {
        let full_report = audit_trajectory(&scenario.system, &full_traj, &cfg.tolerances)
            .map_err(|e| RunnerError::Simulation(e.to_string()))?;
        let reduced_report =
            audit_reduced_trajectory(&reduced_scenario.spec, &reduced_traj, &cfg.tolerances)
                .map_err(|e| RunnerError::Simulation(e.to_string()))?;
        let mut all = full_report.clone();
        all.checks.extend(reduced_report.checks.clone());
        all.checks.extend(eq_report.checks.clone());
        let failures = all.checks.iter().filter(|c| !c.passed()).count();
        println!("[audit] checks={} failures={}", all.checks.len(), failures);
        if failures > 0 {
            exit_code = 1;
        }
        let artifact = AuditArtifact {
            scenario: scenario.name.into(),
            mode: "compare".into(),
            seed: cfg.seed,
            geometry: None,
            lagrangian_fd: None,
            trajectory: full_report,
            reduced_trajectory: Some(reduced_report),
            equivalence: Some(metrics),
        };
        let audit_path = out_dir.join("audit.json");
        output::write_json(&audit_path, &artifact)?;
        artifacts.push(audit_path);
    }
    Ok(RunOutcome {
        exit_code,
        artifacts,
    })
}

fn build_reduced_counterpart(
    cfg: &RunConfig,
    scenario: &FullScenario,
) -> Result<ReducedScenario, RunnerError> {
    let name = scenario
        .reduced_counterpart
        .ok_or_else(|| RunnerError::Simulation("scenario has no reduced counterpart".into()))?;
    match scenarios::build(name, &cfg.scenario.params)? {
        ScenarioBuild::Reduced(r) => Ok(r),
        _ => Err(RunnerError::Simulation(
            "reduced counterpart is not a reduced scenario".into(),
        )),
    }
}

/// Executes a validated run configuration, writing all artifacts under
/// `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunnerError> {
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let built = scenarios::build(&cfg.scenario.name, &cfg.scenario.params)?;
    let outcome = match (&built, cfg.mode) {
        (ScenarioBuild::Full(s), Mode::Full) => full_run(cfg, s, &out_dir)?,
        (ScenarioBuild::Full(s), Mode::Compare) => compare_run(cfg, s, &out_dir)?,
        (ScenarioBuild::Reduced(s), Mode::Reduced) => reduced_run(cfg, s, &out_dir)?,
        (ScenarioBuild::Eps(s), Mode::Eps) => eps_run(cfg, s, &out_dir)?,
        _ => {
            return Err(RunnerError::Config(ConfigError::Invalid(
                "scenario does not support the requested mode".into(),
            )))
        }
    };
    for path in &outcome.artifacts {
        println!("[write] {}", path.display());
    }
    Ok(outcome)
}
