//! Python bindings: scenario registry, simulation with impact resolution, and
//! the verification harness, returned as plain lists and records.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nonsmooth_nh::audit::{audit_reduced_trajectory, audit_trajectory, Tolerances};
use nonsmooth_nh::integrator::{integrate, IntegratorOptions};
use nonsmooth_nh::reduction::{
    integrate_eps, integrate_reduced, reconstruct, velocity_jumps, GroupPath, LpMode,
};
use nonsmooth_nh::scenarios::{self, ScenarioBuild};

/// One resolved elastic impact.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct ImpactEvent {
    pub t_impact: f64,
    pub q: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub lambda0: f64,
    pub lambda: Vec<f64>,
    pub e_minus: f64,
    pub e_plus: f64,
}

/// Completed simulation: sample columns, event log and optional audit report
/// (JSON text plus pass flag).
#[pyclass(get_all, frozen)]
pub struct Simulation {
    pub scenario: String,
    pub mode: String,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub constraint_residual: Vec<f64>,
    pub events: Vec<ImpactEvent>,
    pub audit_passed: Option<bool>,
    pub audit_json: Option<String>,
}

fn vec_of(v: &nalgebra::DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Registered scenario names with execution mode and default parameters
/// (JSON text), in registry order.
#[pyfunction]
fn list_scenarios() -> Vec<(String, String, String)> {
    scenarios::list_scenarios()
        .into_iter()
        .map(|info| {
            (
                info.name.to_string(),
                info.mode.to_string(),
                info.defaults.to_string(),
            )
        })
        .collect()
}

/// Runs a registered scenario and returns the trajectory, events and
/// (optionally) the verification report.
#[pyfunction]
#[pyo3(signature = (name, params=None, t_final=None, dt=None, paper_literal_vertical=false, audit=false))]
fn simulate(
    name: &str,
    params: Option<&str>,
    t_final: Option<f64>,
    dt: Option<f64>,
    paper_literal_vertical: bool,
    audit: bool,
) -> PyResult<Simulation> {
    let params_value: serde_json::Value = match params {
        Some(text) => serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("params must be a JSON object: {e}")))?,
        None => serde_json::json!({}),
    };
    let built =
        scenarios::build(name, &params_value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let tol = Tolerances::default();
    match built {
        ScenarioBuild::Full(s) => {
            let horizon = t_final.unwrap_or(s.t_final);
            let opts = IntegratorOptions::with_step(dt.unwrap_or(s.h));
            let traj = integrate(&s.system, &s.initial_state(), horizon, &opts)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            let (audit_passed, audit_json) = if audit {
                let report = audit_trajectory(&s.system, &traj, &tol)
                    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
                (
                    Some(report.passed()),
                    Some(serde_json::to_string_pretty(&report).unwrap()),
                )
            } else {
                (None, None)
            };
            Ok(Simulation {
                scenario: name.into(),
                mode: "full".into(),
                t: traj.samples.iter().map(|x| x.t).collect(),
                q: traj.samples.iter().map(|x| vec_of(&x.q)).collect(),
                v: traj.samples.iter().map(|x| vec_of(&x.v)).collect(),
                p: traj.samples.iter().map(|x| vec_of(&x.p)).collect(),
                energy: traj.diagnostics.iter().map(|d| d.energy).collect(),
                constraint_residual: traj
                    .diagnostics
                    .iter()
                    .map(|d| d.constraint_residual)
                    .collect(),
                events: traj
                    .events
                    .iter()
                    .map(|ev| ImpactEvent {
                        t_impact: ev.t_impact,
                        q: vec_of(&ev.q),
                        v_minus: vec_of(&ev.v_minus),
                        v_plus: vec_of(&ev.v_plus),
                        p_minus: vec_of(&ev.p_minus),
                        p_plus: vec_of(&ev.p_plus),
                        lambda0: ev.lambda0,
                        lambda: vec_of(&ev.lambda),
                        e_minus: ev.e_minus,
                        e_plus: ev.e_plus,
                    })
                    .collect(),
                audit_passed,
                audit_json,
            })
        }
        ScenarioBuild::Reduced(s) => {
            let horizon = t_final.unwrap_or(s.t_final);
            let opts = IntegratorOptions::with_step(dt.unwrap_or(s.h));
            let mode = if paper_literal_vertical {
                LpMode::PaperLiteralVertical
            } else {
                LpMode::WellPosed
            };
            let traj =
                integrate_reduced(&s.spec, 0.0, &s.sigma0, &s.u0, &s.xi0, horizon, &opts, mode)
                    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            let ts: Vec<f64> = traj.samples.iter().map(|x| x.t).collect();
            let ws =
                nonsmooth_nh::reduction::body_velocities(s.spec.conn_a.as_ref(), &traj.samples);
            let jumps = velocity_jumps(s.spec.conn_a.as_ref(), &traj.events);
            let group = reconstruct(&s.spec.algebra, &ts, &ws, &jumps, Some(&s.group0), None)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            let (audit_passed, audit_json) = if audit {
                let report = audit_reduced_trajectory(&s.spec, &traj, &tol)
                    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
                (
                    Some(report.passed()),
                    Some(serde_json::to_string_pretty(&report).unwrap()),
                )
            } else {
                (None, None)
            };
            let q: Vec<Vec<f64>> = traj
                .samples
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut row = vec_of(&x.sigma);
                    if let GroupPath::Abelian(path) = &group {
                        row.extend(path[i].iter().copied());
                    }
                    row
                })
                .collect();
            let stack = |a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>| {
                a.iter().chain(b.iter()).copied().collect::<Vec<f64>>()
            };
            Ok(Simulation {
                scenario: name.into(),
                mode: "reduced".into(),
                t: ts,
                q,
                v: traj.samples.iter().map(|x| stack(&x.u, &x.xi)).collect(),
                p: traj.samples.iter().map(|x| stack(&x.y, &x.rho)).collect(),
                energy: traj.diagnostics.iter().map(|d| d.energy).collect(),
                constraint_residual: traj
                    .diagnostics
                    .iter()
                    .map(|d| d.constraint_residual)
                    .collect(),
                events: traj
                    .events
                    .iter()
                    .map(|ev| ImpactEvent {
                        t_impact: ev.t_impact,
                        q: vec_of(&ev.sigma),
                        v_minus: stack(&ev.u_minus, &ev.xi_minus),
                        v_plus: stack(&ev.u_plus, &ev.xi_plus),
                        p_minus: stack(&ev.y_minus, &ev.rho_minus),
                        p_plus: stack(&ev.y_plus, &ev.rho_plus),
                        lambda0: ev.lambda0,
                        lambda: stack(&ev.lambda_h, &ev.lambda_v),
                        e_minus: ev.e_minus,
                        e_plus: ev.e_plus,
                    })
                    .collect(),
                audit_passed,
                audit_json,
            })
        }
        ScenarioBuild::Eps(s) => {
            let horizon = t_final.unwrap_or(s.t_final);
            let h = dt.unwrap_or(s.h);
            let traj = integrate_eps(&s.algebra, &s.lagrangian, &s.constraint, &s.xi0, horizon, h)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            Ok(Simulation {
                scenario: name.into(),
                mode: "eps".into(),
                t: traj.ts.clone(),
                q: vec![Vec::new(); traj.ts.len()],
                v: traj.xis.iter().map(vec_of).collect(),
                p: traj.mus.iter().map(vec_of).collect(),
                energy: traj.diagnostics.iter().map(|d| d.energy).collect(),
                constraint_residual: traj
                    .diagnostics
                    .iter()
                    .map(|d| d.constraint_residual)
                    .collect(),
                events: Vec::new(),
                audit_passed: None,
                audit_json: None,
            })
        }
    }
}

/// Separation of the elastic reset map from the identity, `2 |v_perp|_g`, at a
/// boundary point of a registered full scenario.
#[pyfunction]
#[pyo3(signature = (name, q, v, params=None))]
fn reset_separation(name: &str, q: Vec<f64>, v: Vec<f64>, params: Option<&str>) -> PyResult<f64> {
    let params_value: serde_json::Value = match params {
        Some(text) => serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("params must be a JSON object: {e}")))?,
        None => serde_json::json!({}),
    };
    let built =
        scenarios::build(name, &params_value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let ScenarioBuild::Full(s) = built else {
        return Err(PyValueError::new_err(
            "reset_separation applies to full scenarios",
        ));
    };
    let q = nalgebra::DVector::from_row_slice(&q);
    let v = nalgebra::DVector::from_row_slice(&v);
    nonsmooth_nh::impact::reset_separation(&s.system, &q, &v, 1e-9)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn nonsmooth_nh_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_class::<ImpactEvent>()?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reset_separation, m)?)?;
    Ok(())
}
