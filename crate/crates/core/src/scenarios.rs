//! Registry of ready-to-run systems: the rolling disk and spherical pendulum
//! with their boundaries and constraints, the reduced pendulum, a free
//! billiard sanity fixture and a rigid-body/Suslov fixture on `so(3)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::{BoundarySpec, ChartSpec, ConnectionSpec, DistributionSpec};
use crate::lagrangian::{legendre, LagrangianSpec, PontryaginState};
use crate::reduction::{
    BundleLayout, EpsLagrangian, LieAlgebraSpec, ReducedLagrangian, ReducedSystemSpec,
};
use crate::system::{StateGuard, SystemSpec};

/// Reject configurations closer than this to the poles of the pendulum chart,
/// where the symmetry action stops being free.
pub const ANGLE_GUARD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
}

/// Parameters of the free billiard in the unit disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BilliardParams {
    pub x0: f64,
    pub y0: f64,
    pub vx0: f64,
    pub vy0: f64,
    pub t_final: f64,
    pub h: f64,
}

impl Default for BilliardParams {
    fn default() -> Self {
        Self {
            x0: 0.1,
            y0: -0.2,
            vx0: 0.8,
            vy0: 0.35,
            t_final: 10.0,
            h: 1e-3,
        }
    }
}

/// Parameters of the rolling disk confined to the unit circle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DiskParams {
    pub mass: f64,
    /// Rolling inertia `I` (conjugate to θ).
    pub inertia_rolling: f64,
    /// Heading inertia `J` (conjugate to φ).
    pub inertia_heading: f64,
    pub radius: f64,
    pub x0: f64,
    pub y0: f64,
    pub theta0: f64,
    pub phi0: f64,
    pub vtheta0: f64,
    pub vphi0: f64,
    pub t_final: f64,
    pub h: f64,
}

impl Default for DiskParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia_rolling: 2.0,
            inertia_heading: 3.0,
            radius: 0.5,
            x0: 0.0,
            y0: 0.0,
            theta0: 0.0,
            phi0: 0.3,
            vtheta0: 1.2,
            vphi0: 0.7,
            t_final: 10.0,
            h: 1e-3,
        }
    }
}

/// Parameters of the constrained spherical pendulum inside a cylinder, shared
/// by the full and the reduced scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    /// Radius of the cylindrical wall: the boundary is `L sinθ = r_cyl`.
    pub cylinder_radius: f64,
    /// Constraint function `f(θ) = 1 + ε sin²θ`.
    pub f_epsilon: f64,
    pub theta0: f64,
    pub vtheta0: f64,
    pub phi0: f64,
    /// Initial algebra velocity for the reduced scenario; defaults to the
    /// value matched to the full constraint, `f(θ0)·v_θ0`.
    pub xi0: Option<f64>,
    pub t_final: f64,
    pub h: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 0.9,
            gravity: 9.8,
            cylinder_radius: 0.8,
            f_epsilon: 0.25,
            theta0: 0.7,
            vtheta0: 0.0,
            phi0: 0.0,
            xi0: None,
            t_final: 10.0,
            h: 1e-3,
        }
    }
}

impl PendulumParams {
    pub fn f(&self, theta: f64) -> f64 {
        1.0 + self.f_epsilon * theta.sin().powi(2)
    }

    fn f_prime(&self, theta: f64) -> f64 {
        2.0 * self.f_epsilon * theta.sin() * theta.cos()
    }

    pub fn matched_xi0(&self) -> f64 {
        self.xi0.unwrap_or(self.f(self.theta0) * self.vtheta0)
    }
}

/// Parameters of the rigid-body benchmark on `so(3)`, optionally with the
/// Suslov constraint `ξ³ = 0`. A classical solver benchmark, independent of
/// the boundary/impact machinery.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SuslovParams {
    pub inertia: [f64; 3],
    pub xi0: [f64; 3],
    pub suslov: bool,
    pub t_final: f64,
    pub h: f64,
}

impl Default for SuslovParams {
    fn default() -> Self {
        Self {
            inertia: [2.0, 3.0, 4.0],
            xi0: [0.7, -0.4, 0.0],
            suslov: true,
            t_final: 10.0,
            h: 1e-3,
        }
    }
}

/// Built full-system scenario.
#[derive(Clone)]
pub struct FullScenario {
    pub name: &'static str,
    pub system: SystemSpec,
    pub q0: DVector<f64>,
    pub v0: DVector<f64>,
    pub t_final: f64,
    pub h: f64,
    pub layout: Option<BundleLayout>,
    pub reduced_counterpart: Option<&'static str>,
}

impl FullScenario {
    pub fn initial_state(&self) -> PontryaginState {
        let p = legendre(&self.system.lagrangian, &self.q0, &self.v0);
        PontryaginState::new(0.0, self.q0.clone(), self.v0.clone(), p)
    }
}

/// Built reduced-system scenario.
#[derive(Clone)]
pub struct ReducedScenario {
    pub name: &'static str,
    pub spec: ReducedSystemSpec,
    pub sigma0: DVector<f64>,
    pub u0: DVector<f64>,
    pub xi0: DVector<f64>,
    /// Initial group coordinate for reconstruction.
    pub group0: DVector<f64>,
    pub t_final: f64,
    pub h: f64,
}

/// Built Lie-algebra scenario for the Euler–Poincaré–Suslov solver.
#[derive(Clone)]
pub struct EpsScenario {
    pub name: &'static str,
    pub algebra: LieAlgebraSpec,
    pub lagrangian: EpsLagrangian,
    pub constraint: DistributionSpec,
    pub xi0: DVector<f64>,
    pub t_final: f64,
    pub h: f64,
}

#[derive(Clone)]
pub enum ScenarioBuild {
    Full(FullScenario),
    Reduced(ReducedScenario),
    Eps(EpsScenario),
}

fn require(cond: bool, msg: &str) -> Result<(), ScenarioError> {
    if cond {
        Ok(())
    } else {
        Err(ScenarioError::InvalidParams(msg.into()))
    }
}

fn check_horizon(t_final: f64, h: f64) -> Result<(), ScenarioError> {
    require(t_final > 0.0, "t_final must be positive")?;
    require(h > 0.0, "h must be positive")
}

/// `L = |v|²/2` billiard in the unit disk (sanity fixture, no constraints).
pub fn build_free_billiard(params: &BilliardParams) -> Result<FullScenario, ScenarioError> {
    check_horizon(params.t_final, params.h)?;
    let system = SystemSpec {
        chart: ChartSpec::new(&["x", "y"], &[false, false]).unwrap(),
        lagrangian: LagrangianSpec::free_particle(2),
        distribution: DistributionSpec::unconstrained(2),
        boundary: BoundarySpec::new(
            Arc::new(|q: &DVector<f64>| q[0] * q[0] + q[1] * q[1] - 1.0),
            Arc::new(|q: &DVector<f64>| DVector::from_row_slice(&[2.0 * q[0], 2.0 * q[1]])),
        ),
        connection: ConnectionSpec::flat(),
        guard: None,
    };
    Ok(FullScenario {
        name: "free_billiard",
        system,
        q0: DVector::from_row_slice(&[params.x0, params.y0]),
        v0: DVector::from_row_slice(&[params.vx0, params.vy0]),
        t_final: params.t_final,
        h: params.h,
        layout: None,
        reduced_counterpart: None,
    })
}

pub fn disk_lagrangian(params: &DiskParams) -> LagrangianSpec {
    let (m, i, j) = (params.mass, params.inertia_rolling, params.inertia_heading);
    let mass_diag = move || DMatrix::from_diagonal(&DVector::from_row_slice(&[m, m, i, j]));
    LagrangianSpec::new(
        Arc::new(move |_q: &DVector<f64>, v: &DVector<f64>| {
            0.5 * m * (v[0] * v[0] + v[1] * v[1]) + 0.5 * (i * v[2] * v[2] + j * v[3] * v[3])
        }),
        Arc::new(move |_q: &DVector<f64>, v: &DVector<f64>| {
            DVector::from_row_slice(&[m * v[0], m * v[1], i * v[2], j * v[3]])
        }),
        Arc::new(|_q: &DVector<f64>, _v: &DVector<f64>| DVector::zeros(4)),
    )
    .with_second_derivatives(
        Arc::new(move |_q, _v| mass_diag()),
        Arc::new(|_q, _v| DMatrix::zeros(4, 4)),
    )
}

/// Rolling disk without slipping, confined so that the disk centre stays in
/// the unit circle. Coordinates `(x, y, θ, φ)`.
pub fn build_rolling_disk(params: &DiskParams) -> Result<FullScenario, ScenarioError> {
    check_horizon(params.t_final, params.h)?;
    require(params.mass > 0.0, "mass must be positive")?;
    require(
        params.inertia_rolling > 0.0 && params.inertia_heading > 0.0,
        "inertias must be positive",
    )?;
    require(params.radius > 0.0, "radius must be positive")?;
    require(
        params.radius < 1.0,
        "radius must be below the arena radius 1",
    )?;

    let r = params.radius;
    let mu = Arc::new(move |q: &DVector<f64>| {
        let phi = q[3];
        DMatrix::from_row_slice(
            2,
            4,
            &[1.0, 0.0, -r * phi.cos(), 0.0, 0.0, 1.0, -r * phi.sin(), 0.0],
        )
    });
    let dmu = Arc::new(move |q: &DVector<f64>| {
        let phi = q[3];
        let mut d0 = DMatrix::zeros(4, 4);
        let mut d1 = DMatrix::zeros(4, 4);
        // ∂μ¹_θ/∂φ = R sinφ, ∂μ²_θ/∂φ = −R cosφ.
        d0[(3, 2)] = r * phi.sin();
        d1[(3, 2)] = -r * phi.cos();
        vec![d0, d1]
    });
    let boundary = BoundarySpec::new(
        Arc::new(move |q: &DVector<f64>| {
            let cx = q[0] + r * q[3].cos();
            let cy = q[1] + r * q[3].sin();
            cx * cx + cy * cy - 1.0
        }),
        Arc::new(move |q: &DVector<f64>| {
            let (x, y, phi) = (q[0], q[1], q[3]);
            let cx = x + r * phi.cos();
            let cy = y + r * phi.sin();
            DVector::from_row_slice(&[
                2.0 * cx,
                2.0 * cy,
                0.0,
                2.0 * r * (-x * phi.sin() + y * phi.cos()),
            ])
        }),
    );

    let system = SystemSpec {
        chart: ChartSpec::new(&["x", "y", "theta", "phi"], &[false, false, true, true]).unwrap(),
        lagrangian: disk_lagrangian(params),
        distribution: DistributionSpec::new(2, 4, mu, Some(dmu)),
        boundary,
        connection: ConnectionSpec::flat(),
        guard: None,
    };
    let v0 = DVector::from_row_slice(&[
        params.radius * params.vtheta0 * params.phi0.cos(),
        params.radius * params.vtheta0 * params.phi0.sin(),
        params.vtheta0,
        params.vphi0,
    ]);
    Ok(FullScenario {
        name: "rolling_disk",
        system,
        q0: DVector::from_row_slice(&[params.x0, params.y0, params.theta0, params.phi0]),
        v0,
        t_final: params.t_final,
        h: params.h,
        layout: None,
        reduced_counterpart: None,
    })
}

pub fn pendulum_lagrangian(params: &PendulumParams) -> LagrangianSpec {
    let (m, l, g) = (params.mass, params.length, params.gravity);
    let ml2 = m * l * l;
    LagrangianSpec::new(
        Arc::new(move |q: &DVector<f64>, v: &DVector<f64>| {
            let s = q[0].sin();
            0.5 * ml2 * (v[0] * v[0] + v[1] * v[1] * s * s) - m * g * l * q[0].cos()
        }),
        Arc::new(move |q: &DVector<f64>, v: &DVector<f64>| {
            let s = q[0].sin();
            DVector::from_row_slice(&[ml2 * v[0], ml2 * v[1] * s * s])
        }),
        Arc::new(move |q: &DVector<f64>, v: &DVector<f64>| {
            let (s, c) = (q[0].sin(), q[0].cos());
            DVector::from_row_slice(&[ml2 * v[1] * v[1] * s * c + m * g * l * s, 0.0])
        }),
    )
    .with_second_derivatives(
        Arc::new(move |q: &DVector<f64>, _v: &DVector<f64>| {
            let s = q[0].sin();
            DMatrix::from_diagonal(&DVector::from_row_slice(&[ml2, ml2 * s * s]))
        }),
        Arc::new(move |q: &DVector<f64>, v: &DVector<f64>| {
            let (s, c) = (q[0].sin(), q[0].cos());
            let mut out = DMatrix::zeros(2, 2);
            out[(1, 0)] = 2.0 * ml2 * v[1] * s * c;
            out
        }),
    )
}

fn pendulum_boundary(params: &PendulumParams, on_shape: bool) -> BoundarySpec {
    let l = params.length;
    let r_cyl = params.cylinder_radius;
    let dim = if on_shape { 1 } else { 2 };
    BoundarySpec::new(
        Arc::new(move |q: &DVector<f64>| l * q[0].sin() - r_cyl),
        Arc::new(move |q: &DVector<f64>| {
            let mut db = DVector::zeros(dim);
            db[0] = l * q[0].cos();
            db
        }),
    )
}

fn pendulum_guard() -> StateGuard {
    Arc::new(|q: &DVector<f64>| {
        let theta = q[0];
        let nearest_pole = (theta / PI).round() * PI;
        if (theta - nearest_pole).abs() < ANGLE_GUARD {
            Err(format!(
                "theta = {theta:.6} is within {ANGLE_GUARD:.0e} of a pole where the rotation \
                 action is not free"
            ))
        } else {
            Ok(())
        }
    })
}

fn validate_pendulum(params: &PendulumParams) -> Result<(), ScenarioError> {
    check_horizon(params.t_final, params.h)?;
    require(params.mass > 0.0, "mass must be positive")?;
    require(
        params.length > 0.0 && params.length < 1.0,
        "pendulum length must lie in (0, 1)",
    )?;
    require(params.gravity > 0.0, "gravity must be positive")?;
    require(
        params.cylinder_radius > 0.0,
        "cylinder radius must be positive",
    )?;
    require(params.f_epsilon > -1.0, "f_epsilon must keep f positive")?;
    let nearest_pole = (params.theta0 / PI).round() * PI;
    require(
        (params.theta0 - nearest_pole).abs() >= ANGLE_GUARD,
        "theta0 is too close to a pole of the chart",
    )
}

/// Spherical pendulum with the nonholonomic coupling `v_φ = f(θ) v_θ`,
/// hitting the cylinder `L sinθ = r_cyl`. Coordinates `(θ, φ)`.
pub fn build_spherical_pendulum(params: &PendulumParams) -> Result<FullScenario, ScenarioError> {
    validate_pendulum(params)?;
    let p = params.clone();
    let mu = Arc::new(move |q: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[p.f(q[0]), -1.0]));
    let p2 = params.clone();
    let dmu = Arc::new(move |q: &DVector<f64>| {
        let mut d = DMatrix::zeros(2, 2);
        d[(0, 0)] = p2.f_prime(q[0]);
        vec![d]
    });
    let system = SystemSpec {
        chart: ChartSpec::new(&["theta", "phi"], &[true, true]).unwrap(),
        lagrangian: pendulum_lagrangian(params),
        distribution: DistributionSpec::new(1, 2, mu, Some(dmu)),
        boundary: pendulum_boundary(params, false),
        connection: ConnectionSpec::flat(),
        guard: Some(pendulum_guard()),
    };
    let v0 = DVector::from_row_slice(&[params.vtheta0, params.f(params.theta0) * params.vtheta0]);
    Ok(FullScenario {
        name: "spherical_pendulum",
        system,
        q0: DVector::from_row_slice(&[params.theta0, params.phi0]),
        v0,
        t_final: params.t_final,
        h: params.h,
        layout: Some(BundleLayout::trivial(1, 1)),
        reduced_counterpart: Some("reduced_pendulum"),
    })
}

fn pendulum_reduced_lagrangian(params: &PendulumParams) -> ReducedLagrangian {
    let (m, l, g) = (params.mass, params.length, params.gravity);
    let ml2 = m * l * l;
    ReducedLagrangian {
        l: Arc::new(
            move |s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>| {
                let sn = s[0].sin();
                0.5 * ml2 * (u[0] * u[0] + xi[0] * xi[0] * sn * sn) - m * g * l * s[0].cos()
            },
        ),
        dl_dsigma: Arc::new(
            move |s: &DVector<f64>, _u: &DVector<f64>, xi: &DVector<f64>| {
                let (sn, cs) = (s[0].sin(), s[0].cos());
                DVector::from_row_slice(&[ml2 * xi[0] * xi[0] * sn * cs + m * g * l * sn])
            },
        ),
        dl_du: Arc::new(
            move |_s: &DVector<f64>, u: &DVector<f64>, _xi: &DVector<f64>| {
                DVector::from_row_slice(&[ml2 * u[0]])
            },
        ),
        dl_dxi: Arc::new(
            move |s: &DVector<f64>, _u: &DVector<f64>, xi: &DVector<f64>| {
                let sn = s[0].sin();
                DVector::from_row_slice(&[ml2 * xi[0] * sn * sn])
            },
        ),
    }
}

/// Reduced pendulum on `Σ = {θ}` with the trivial connection: the shape
/// equation carries the full potential and centrifugal terms, the vertical
/// momentum is conserved. Both reduced constraint distributions are full, so
/// their annihilators are empty.
pub fn build_reduced_pendulum(params: &PendulumParams) -> Result<ReducedScenario, ScenarioError> {
    validate_pendulum(params)?;
    let spec = ReducedSystemSpec {
        sigma_dim: 1,
        algebra: LieAlgebraSpec::abelian(1),
        ell: pendulum_reduced_lagrangian(params),
        delta_sigma: DistributionSpec::unconstrained(1),
        delta_g: DistributionSpec::unconstrained(1),
        conn_a: None,
        curvature_b: None,
        boundary: pendulum_boundary(params, true),
        guard: Some(pendulum_guard()),
    };
    Ok(ReducedScenario {
        name: "reduced_pendulum",
        spec,
        sigma0: DVector::from_row_slice(&[params.theta0]),
        u0: DVector::from_row_slice(&[params.vtheta0]),
        xi0: DVector::from_row_slice(&[params.matched_xi0()]),
        group0: DVector::from_row_slice(&[params.phi0]),
        t_final: params.t_final,
        h: params.h,
    })
}

/// Reduced pendulum in constraint-adapted form: the principal connection is
/// chosen with `A(θ) = f(θ)` so that the nonholonomic constraint becomes the
/// vertical condition `ξ̄ = 0`. In these variables the reduced constraint
/// splits exactly and the reduced flow mirrors the full constrained dynamics.
pub fn build_reduced_pendulum_adapted(
    params: &PendulumParams,
) -> Result<ReducedScenario, ScenarioError> {
    validate_pendulum(params)?;
    let (m, l, g) = (params.mass, params.length, params.gravity);
    let ml2 = m * l * l;
    let pf = params.clone();
    let body = move |s: f64, u: f64, xi: f64| xi + pf.f(s) * u;
    let pd = params.clone();
    let ell = ReducedLagrangian {
        l: Arc::new({
            let body = body.clone();
            move |s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>| {
                let sn = s[0].sin();
                let w = body(s[0], u[0], xi[0]);
                0.5 * ml2 * (u[0] * u[0] + w * w * sn * sn) - m * g * l * s[0].cos()
            }
        }),
        dl_dsigma: Arc::new({
            let body = body.clone();
            let pd = pd.clone();
            move |s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>| {
                let (sn, cs) = (s[0].sin(), s[0].cos());
                let w = body(s[0], u[0], xi[0]);
                DVector::from_row_slice(&[ml2 * w * w * sn * cs
                    + ml2 * w * pd.f_prime(s[0]) * u[0] * sn * sn
                    + m * g * l * sn])
            }
        }),
        dl_du: Arc::new({
            let body = body.clone();
            let pd = pd.clone();
            move |s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>| {
                let sn = s[0].sin();
                let w = body(s[0], u[0], xi[0]);
                DVector::from_row_slice(&[ml2 * u[0] + ml2 * w * sn * sn * pd.f(s[0])])
            }
        }),
        dl_dxi: Arc::new({
            let body = body.clone();
            move |s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>| {
                let sn = s[0].sin();
                DVector::from_row_slice(&[ml2 * body(s[0], u[0], xi[0]) * sn * sn])
            }
        }),
    };
    let pa = params.clone();
    let spec = ReducedSystemSpec {
        sigma_dim: 1,
        algebra: LieAlgebraSpec::abelian(1),
        ell,
        delta_sigma: DistributionSpec::unconstrained(1),
        delta_g: DistributionSpec::constant(DMatrix::from_row_slice(1, 1, &[1.0])),
        conn_a: Some(Arc::new(move |s: &DVector<f64>| {
            DMatrix::from_row_slice(1, 1, &[pa.f(s[0])])
        })),
        curvature_b: None,
        boundary: pendulum_boundary(params, true),
        guard: Some(pendulum_guard()),
    };
    Ok(ReducedScenario {
        name: "reduced_pendulum_adapted",
        spec,
        sigma0: DVector::from_row_slice(&[params.theta0]),
        u0: DVector::from_row_slice(&[params.vtheta0]),
        xi0: DVector::zeros(1),
        group0: DVector::from_row_slice(&[params.phi0]),
        t_final: params.t_final,
        h: params.h,
    })
}

/// The adapted layout pairing [`build_reduced_pendulum_adapted`]: drops full
/// pendulum states with `ξ = v_φ − f(θ) v_θ`.
pub fn pendulum_adapted_layout(params: &PendulumParams) -> BundleLayout {
    let p = params.clone();
    BundleLayout {
        shape_dim: 1,
        group_dim: 1,
        conn_a: Some(Arc::new(move |s: &DVector<f64>| {
            DMatrix::from_row_slice(1, 1, &[p.f(s[0])])
        })),
    }
}

/// Rigid body on `so(3)` with diagonal inertia, optionally carrying the
/// Suslov constraint `ξ³ = 0`.
pub fn build_rigid_body_suslov(params: &SuslovParams) -> Result<EpsScenario, ScenarioError> {
    check_horizon(params.t_final, params.h)?;
    require(
        params.inertia.iter().all(|&i| i > 0.0),
        "inertia entries must be positive",
    )?;
    if params.suslov {
        require(
            params.xi0[2] == 0.0,
            "Suslov initial velocity must satisfy xi3 = 0",
        )?;
    }
    let inertia = DVector::from_row_slice(&params.inertia);
    let imat = DMatrix::from_diagonal(&inertia);
    let imat2 = imat.clone();
    let lagrangian = EpsLagrangian {
        l: {
            let imat = imat.clone();
            Arc::new(move |xi: &DVector<f64>| 0.5 * (xi.transpose() * &imat * xi)[(0, 0)])
        },
        dl: Arc::new(move |xi: &DVector<f64>| &imat * xi),
        hess: Some(Arc::new(move |_| imat2.clone())),
    };
    let constraint = if params.suslov {
        DistributionSpec::constant(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]))
    } else {
        DistributionSpec::unconstrained(3)
    };
    Ok(EpsScenario {
        name: "rigid_body_suslov",
        algebra: LieAlgebraSpec::so3(),
        lagrangian,
        constraint,
        xi0: DVector::from_row_slice(&params.xi0),
        t_final: params.t_final,
        h: params.h,
    })
}

/// Abelian reduced fixture with full constraints: the vertical equation
/// degenerates to conservation of δℓ/δξ.
pub fn synthetic_abelian_reduced() -> ReducedSystemSpec {
    ReducedSystemSpec {
        sigma_dim: 1,
        algebra: LieAlgebraSpec::abelian(1),
        ell: ReducedLagrangian {
            l: Arc::new(|s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>| {
                0.5 * u[0] * u[0] + 0.5 * xi[0] * xi[0] - s[0].cos()
            }),
            dl_dsigma: Arc::new(|s: &DVector<f64>, _u, _xi| DVector::from_row_slice(&[s[0].sin()])),
            dl_du: Arc::new(|_s, u: &DVector<f64>, _xi| u.clone()),
            dl_dxi: Arc::new(|_s, _u, xi: &DVector<f64>| xi.clone()),
        },
        delta_sigma: DistributionSpec::unconstrained(1),
        delta_g: DistributionSpec::unconstrained(1),
        conn_a: None,
        curvature_b: None,
        boundary: BoundarySpec::new(
            Arc::new(|s: &DVector<f64>| s[0] - 100.0),
            Arc::new(|_s: &DVector<f64>| DVector::from_row_slice(&[1.0])),
        ),
        guard: None,
    }
}

/// Two-dimensional shape space with a σ-independent Lagrangian and constant
/// curvature: isolates the magnetic-type coupling term in the horizontal
/// equation.
pub fn synthetic_curved_reduced() -> ReducedSystemSpec {
    let b = 0.7;
    ReducedSystemSpec {
        sigma_dim: 2,
        algebra: LieAlgebraSpec::abelian(1),
        ell: ReducedLagrangian {
            l: Arc::new(|_s, u: &DVector<f64>, xi: &DVector<f64>| {
                0.5 * u.dot(u) + 0.5 * xi[0] * xi[0]
            }),
            dl_dsigma: Arc::new(|_s, _u, _xi| DVector::zeros(2)),
            dl_du: Arc::new(|_s, u: &DVector<f64>, _xi| u.clone()),
            dl_dxi: Arc::new(|_s, _u, xi: &DVector<f64>| xi.clone()),
        },
        delta_sigma: DistributionSpec::unconstrained(2),
        delta_g: DistributionSpec::unconstrained(1),
        conn_a: Some(Arc::new(|_s: &DVector<f64>| {
            DMatrix::from_row_slice(1, 2, &[0.3, 0.0])
        })),
        curvature_b: Some(Arc::new(move |_s: &DVector<f64>| {
            vec![DMatrix::from_row_slice(2, 2, &[0.0, b, -b, 0.0])]
        })),
        boundary: BoundarySpec::new(
            Arc::new(|s: &DVector<f64>| s[0] - 100.0),
            Arc::new(|_s: &DVector<f64>| DVector::from_row_slice(&[1.0, 0.0])),
        ),
        guard: None,
    }
}

/// Scenario registry entry: name, execution mode, default parameter schema.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub mode: &'static str,
    pub defaults: serde_json::Value,
}

/// All registered scenarios in a fixed order.
pub fn list_scenarios() -> Vec<ScenarioInfo> {
    vec![
        ScenarioInfo {
            name: "rolling_disk",
            mode: "full",
            defaults: serde_json::to_value(DiskParams::default()).unwrap(),
        },
        ScenarioInfo {
            name: "spherical_pendulum",
            mode: "full",
            defaults: serde_json::to_value(PendulumParams::default()).unwrap(),
        },
        ScenarioInfo {
            name: "reduced_pendulum",
            mode: "reduced",
            defaults: serde_json::to_value(PendulumParams::default()).unwrap(),
        },
        ScenarioInfo {
            name: "free_billiard",
            mode: "full",
            defaults: serde_json::to_value(BilliardParams::default()).unwrap(),
        },
        ScenarioInfo {
            name: "rigid_body_suslov",
            mode: "eps",
            defaults: serde_json::to_value(SuslovParams::default()).unwrap(),
        },
    ]
}

fn parse<T: for<'de> Deserialize<'de>>(params: &serde_json::Value) -> Result<T, ScenarioError> {
    serde_json::from_value(params.clone()).map_err(|e| ScenarioError::InvalidParams(e.to_string()))
}

/// Builds a scenario by registry name from a JSON parameter object.
pub fn build(name: &str, params: &serde_json::Value) -> Result<ScenarioBuild, ScenarioError> {
    match name {
        "rolling_disk" => Ok(ScenarioBuild::Full(build_rolling_disk(&parse(params)?)?)),
        "spherical_pendulum" => Ok(ScenarioBuild::Full(build_spherical_pendulum(&parse(
            params,
        )?)?)),
        "reduced_pendulum" => Ok(ScenarioBuild::Reduced(build_reduced_pendulum(&parse(
            params,
        )?)?)),
        "free_billiard" => Ok(ScenarioBuild::Full(build_free_billiard(&parse(params)?)?)),
        "rigid_body_suslov" => Ok(ScenarioBuild::Eps(build_rigid_body_suslov(&parse(
            params,
        )?)?)),
        other => Err(ScenarioError::UnknownScenario(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::validate_geometry;
    use crate::lagrangian::fd_audit;

    #[test]
    fn registry_lists_five_scenarios_and_rejects_unknown_names() {
        let infos = list_scenarios();
        assert_eq!(infos.len(), 5);
        assert_eq!(infos[0].name, "rolling_disk");
        let err = build("no_such_system", &serde_json::json!({}))
            .err()
            .unwrap();
        assert!(matches!(err, ScenarioError::UnknownScenario(_)));
    }

    #[test]
    fn schemas_round_trip_through_json() {
        for info in list_scenarios() {
            let rebuilt = build(info.name, &info.defaults);
            assert!(rebuilt.is_ok(), "{} failed to rebuild", info.name);
            // Round-trip identity on the parameter payload.
            match info.name {
                "rolling_disk" => {
                    let p: DiskParams = serde_json::from_value(info.defaults.clone()).unwrap();
                    assert_eq!(serde_json::to_value(&p).unwrap(), info.defaults);
                }
                "spherical_pendulum" | "reduced_pendulum" => {
                    let p: PendulumParams = serde_json::from_value(info.defaults.clone()).unwrap();
                    assert_eq!(serde_json::to_value(&p).unwrap(), info.defaults);
                }
                "free_billiard" => {
                    let p: BilliardParams = serde_json::from_value(info.defaults.clone()).unwrap();
                    assert_eq!(serde_json::to_value(&p).unwrap(), info.defaults);
                }
                "rigid_body_suslov" => {
                    let p: SuslovParams = serde_json::from_value(info.defaults.clone()).unwrap();
                    assert_eq!(serde_json::to_value(&p).unwrap(), info.defaults);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = build(
            "free_billiard",
            &serde_json::json!({"x0": 0.0, "bogus": 1.0}),
        )
        .err()
        .unwrap();
        assert!(matches!(err, ScenarioError::InvalidParams(_)));
    }

    #[test]
    fn built_scenarios_pass_geometry_and_derivative_audits() {
        let disk = build_rolling_disk(&DiskParams::default()).unwrap();
        let pend = build_spherical_pendulum(&PendulumParams::default()).unwrap();
        for scenario in [&disk, &pend] {
            let mut samples = Vec::new();
            let mut lag_samples = Vec::new();
            for i in 0..6 {
                let shift = 0.05 * i as f64;
                let q = &scenario.q0 + DVector::from_element(scenario.q0.len(), shift);
                let v = &scenario.v0 + DVector::from_element(scenario.v0.len(), 0.3 * shift);
                samples.push(q.clone());
                lag_samples.push((q, v));
            }
            let report = validate_geometry(&scenario.system, &samples);
            assert!(report.all_passed(), "{}: {report:?}", scenario.name);
            let fd = fd_audit(&scenario.system.lagrangian, &lag_samples);
            assert!(fd.first_derivatives_ok(1e-6), "{}: {fd:?}", scenario.name);
        }
    }

    #[test]
    fn disk_annihilator_matches_paper_rows() {
        let params = DiskParams::default();
        let disk = build_rolling_disk(&params).unwrap();
        let q = DVector::from_row_slice(&[0.1, 0.2, 0.5, 0.9]);
        let mu = disk.system.distribution.mu(&q);
        assert_eq!(mu[(0, 0)], 1.0);
        assert_eq!(mu[(0, 2)], -params.radius * 0.9f64.cos());
        assert_eq!(mu[(1, 1)], 1.0);
        assert_eq!(mu[(1, 2)], -params.radius * 0.9f64.sin());
    }

    #[test]
    fn pendulum_rejects_bad_parameters() {
        let bad_length = PendulumParams {
            length: 1.5,
            ..PendulumParams::default()
        };
        assert!(build_spherical_pendulum(&bad_length).is_err());
        let polar_start = PendulumParams {
            theta0: 1e-5,
            ..PendulumParams::default()
        };
        assert!(build_spherical_pendulum(&polar_start).is_err());
        let bad_h = PendulumParams {
            h: -1.0,
            ..PendulumParams::default()
        };
        assert!(build_reduced_pendulum(&bad_h).is_err());
    }

    #[test]
    fn reduced_and_full_pendulum_specs_commute_with_reduction() {
        use crate::reduction::{reduce_state, reduced_energy};
        let params = PendulumParams::default();
        let full = build_spherical_pendulum(&params).unwrap();
        let red = build_reduced_pendulum(&params).unwrap();
        let layout = full.layout.clone().unwrap();
        for (theta, vt) in [(0.8, 0.5), (1.3, -0.9), (2.0, 0.2)] {
            let q = DVector::from_row_slice(&[theta, 0.4]);
            let v = DVector::from_row_slice(&[vt, params.f(theta) * vt]);
            let p = legendre(&full.system.lagrangian, &q, &v);
            let full_state = PontryaginState::new(0.0, q.clone(), v.clone(), p.clone());
            let rs = reduce_state(&layout, &full_state).unwrap();
            let l_full = full.system.lagrangian.value(&q, &v);
            let l_red = red.spec.ell.value(&rs.sigma, &rs.u, &rs.xi);
            assert!((l_full - l_red).abs() <= 1e-12);
            let e_full = crate::lagrangian::energy(&full.system.lagrangian, &q, &v, &p);
            let e_red = reduced_energy(&red.spec, &rs.sigma, &rs.u, &rs.xi, &rs.y, &rs.rho);
            assert!((e_full - e_red).abs() <= 1e-12);
        }
    }
}
