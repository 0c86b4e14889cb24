//! Trajectory, event and report serialization: CSV sample tables with
//! bit-faithful floats, JSONL event logs, JSON audit reports.

use serde::Serialize;
use std::io::{self, Write};
use std::path::Path;

use crate::impact::ImpactRecord;
use crate::integrator::Trajectory;
use crate::reduction::{EpsTrajectory, GroupPath, ReducedImpactRecord, ReducedTrajectory};

/// Formats a double with 17 significant digits so that parsing the text
/// recovers the exact bit pattern.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row<W: Write>(out: &mut W, fields: &[f64]) -> io::Result<()> {
    let mut first = true;
    for x in fields {
        if !first {
            write!(out, ",")?;
        }
        write!(out, "{}", fmt_f64(*x))?;
        first = false;
    }
    writeln!(out)
}

/// Writes a full-system trajectory as CSV with columns
/// `t, q_1..q_n, v_1..v_n, p_1..p_n, energy, constraint_residual`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    let n = traj.samples.first().map_or(0, |s| s.q.len());
    let mut header = vec!["t".to_string()];
    for prefix in ["q", "v", "p"] {
        for i in 1..=n {
            header.push(format!("{prefix}_{i}"));
        }
    }
    header.push("energy".into());
    header.push("constraint_residual".into());
    writeln!(out, "{}", header.join(","))?;
    for (s, d) in traj.samples.iter().zip(&traj.diagnostics) {
        let mut row = Vec::with_capacity(3 * n + 3);
        row.push(s.t);
        row.extend(s.q.iter().copied());
        row.extend(s.v.iter().copied());
        row.extend(s.p.iter().copied());
        row.push(d.energy);
        row.push(d.constraint_residual);
        write_row(&mut out, &row)?;
    }
    out.flush()
}

/// Writes a reduced trajectory through the same schema: the group coordinate
/// obtained by reconstruction fills the remaining `q` block, velocities are
/// `(u, ξ)` and momenta `(y, ρ)`.
pub fn write_reduced_trajectory_csv(
    path: &Path,
    traj: &ReducedTrajectory,
    group: Option<&GroupPath>,
) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    let r = traj.samples.first().map_or(0, |s| s.sigma.len());
    let k = traj.samples.first().map_or(0, |s| s.xi.len());
    let group_cols = match group {
        Some(GroupPath::Abelian(_)) => k,
        _ => 0,
    };
    let n = r + group_cols;
    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        header.push(format!("q_{i}"));
    }
    for i in 1..=(r + k) {
        header.push(format!("v_{i}"));
    }
    for i in 1..=(r + k) {
        header.push(format!("p_{i}"));
    }
    header.push("energy".into());
    header.push("constraint_residual".into());
    writeln!(out, "{}", header.join(","))?;
    for (idx, (s, d)) in traj.samples.iter().zip(&traj.diagnostics).enumerate() {
        let mut row = Vec::new();
        row.push(s.t);
        row.extend(s.sigma.iter().copied());
        if let Some(GroupPath::Abelian(path)) = group {
            row.extend(path[idx].iter().copied());
        }
        row.extend(s.u.iter().copied());
        row.extend(s.xi.iter().copied());
        row.extend(s.y.iter().copied());
        row.extend(s.rho.iter().copied());
        row.push(d.energy);
        row.push(d.constraint_residual);
        write_row(&mut out, &row)?;
    }
    out.flush()
}

/// Writes an Euler–Poincaré–Suslov trajectory: `t, xi_1..k, mu_1..k, energy,
/// constraint_residual`.
pub fn write_eps_trajectory_csv(path: &Path, traj: &EpsTrajectory) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    let k = traj.xis.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    for prefix in ["xi", "mu"] {
        for i in 1..=k {
            header.push(format!("{prefix}_{i}"));
        }
    }
    header.push("energy".into());
    header.push("constraint_residual".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..traj.ts.len() {
        let mut row = Vec::new();
        row.push(traj.ts[i]);
        row.extend(traj.xis[i].iter().copied());
        row.extend(traj.mus[i].iter().copied());
        row.push(traj.diagnostics[i].energy);
        row.push(traj.diagnostics[i].constraint_residual);
        write_row(&mut out, &row)?;
    }
    out.flush()
}

#[derive(Serialize)]
struct ImpactRow<'a> {
    t_impact: f64,
    q: Vec<f64>,
    v_minus: Vec<f64>,
    v_plus: Vec<f64>,
    p_minus: Vec<f64>,
    p_plus: Vec<f64>,
    lambda0: f64,
    lambda: Vec<f64>,
    e_minus: f64,
    e_plus: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<&'a str>,
}

/// Writes the event log as JSONL, one object per impact, times strictly
/// increasing.
pub fn write_events_jsonl(path: &Path, events: &[ImpactRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    for ev in events {
        let row = ImpactRow {
            t_impact: ev.t_impact,
            q: ev.q.iter().copied().collect(),
            v_minus: ev.v_minus.iter().copied().collect(),
            v_plus: ev.v_plus.iter().copied().collect(),
            p_minus: ev.p_minus.iter().copied().collect(),
            p_plus: ev.p_plus.iter().copied().collect(),
            lambda0: ev.lambda0,
            lambda: ev.lambda.iter().copied().collect(),
            e_minus: ev.e_minus,
            e_plus: ev.e_plus,
            mode: None,
        };
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    out.flush()
}

/// Reduced event log through the same record shape, tagged with the mode:
/// `q` carries σ, velocities stack `(u, ξ)`, momenta stack `(y, ρ)` and the
/// constraint multipliers stack `(λ_h, λ_v)`.
pub fn write_reduced_events_jsonl(path: &Path, events: &[ReducedImpactRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    for ev in events {
        let stack = |a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>| {
            a.iter().chain(b.iter()).copied().collect::<Vec<_>>()
        };
        let row = ImpactRow {
            t_impact: ev.t_impact,
            q: ev.sigma.iter().copied().collect(),
            v_minus: stack(&ev.u_minus, &ev.xi_minus),
            v_plus: stack(&ev.u_plus, &ev.xi_plus),
            p_minus: stack(&ev.y_minus, &ev.rho_minus),
            p_plus: stack(&ev.y_plus, &ev.rho_plus),
            lambda0: ev.lambda0,
            lambda: stack(&ev.lambda_h, &ev.lambda_v),
            e_minus: ev.e_minus,
            e_plus: ev.e_plus,
            mode: Some("reduced"),
        };
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    out.flush()
}

/// Writes any serializable report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_faithfully() {
        for &x in &[
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            -2.2250738585072014e-308,
            123456.789,
        ] {
            let text = fmt_f64(x);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{text}");
        }
    }
}
