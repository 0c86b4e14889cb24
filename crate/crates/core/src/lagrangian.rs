//! Lagrangian, its fiber and horizontal derivatives, the Legendre map and the
//! Pontryagin-bundle energy, plus finite-difference audit utilities.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use crate::geometry::fd_step;

pub type LagrangianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type LagrangianGradFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type LagrangianHessFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Lagrangian `L(q, v)` with its first derivatives and optional second
/// derivatives. Missing second derivatives are finite-differenced from the
/// supplied first derivatives.
#[derive(Clone)]
pub struct LagrangianSpec {
    pub l: LagrangianFn,
    pub dl_dv: LagrangianGradFn,
    pub dl_dq: LagrangianGradFn,
    pub d2l_dvdv: Option<LagrangianHessFn>,
    pub d2l_dvdq: Option<LagrangianHessFn>,
}

impl LagrangianSpec {
    pub fn new(l: LagrangianFn, dl_dv: LagrangianGradFn, dl_dq: LagrangianGradFn) -> Self {
        Self {
            l,
            dl_dv,
            dl_dq,
            d2l_dvdv: None,
            d2l_dvdq: None,
        }
    }

    pub fn with_second_derivatives(
        mut self,
        d2l_dvdv: LagrangianHessFn,
        d2l_dvdq: LagrangianHessFn,
    ) -> Self {
        self.d2l_dvdv = Some(d2l_dvdv);
        self.d2l_dvdq = Some(d2l_dvdq);
        self
    }

    /// `L = |v|²/2` in `dim` chart coordinates.
    pub fn free_particle(dim: usize) -> Self {
        Self {
            l: Arc::new(|_q, v: &DVector<f64>| 0.5 * v.dot(v)),
            dl_dv: Arc::new(|_q, v: &DVector<f64>| v.clone()),
            dl_dq: Arc::new(move |_q, _v| DVector::zeros(dim)),
            d2l_dvdv: Some(Arc::new(move |_q, _v| DMatrix::identity(dim, dim))),
            d2l_dvdq: Some(Arc::new(move |_q, _v| DMatrix::zeros(dim, dim))),
        }
    }

    pub fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.l)(q, v)
    }

    pub fn dl_dv(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.dl_dv)(q, v)
    }

    pub fn dl_dq(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.dl_dq)(q, v)
    }

    /// Velocity Hessian `M(q, v) = ∂²L/∂v∂v`, the kinetic-metric candidate.
    pub fn mass_matrix(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.d2l_dvdv {
            return f(q, v);
        }
        let n = v.len();
        let mut m = DMatrix::zeros(n, n);
        let mut vp = v.clone();
        let mut vm = v.clone();
        for j in 0..n {
            let h = fd_step(v[j]);
            vp[j] = v[j] + h;
            vm[j] = v[j] - h;
            let gp = self.dl_dv(q, &vp);
            let gm = self.dl_dv(q, &vm);
            for i in 0..n {
                m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
            vp[j] = v[j];
            vm[j] = v[j];
        }
        // Symmetrize: the exact Hessian is symmetric, finite differences are not.
        0.5 * (&m + m.transpose())
    }

    /// Mixed Hessian `∂²L/∂v∂q`, entry `(i, j) = ∂(∂L/∂v_i)/∂q_j`.
    pub fn d2l_dvdq(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.d2l_dvdq {
            return f(q, v);
        }
        let n = v.len();
        let mut m = DMatrix::zeros(n, n);
        let mut qp = q.clone();
        let mut qm = q.clone();
        for j in 0..n {
            let h = fd_step(q[j]);
            qp[j] = q[j] + h;
            qm[j] = q[j] - h;
            let gp = self.dl_dv(&qp, v);
            let gm = self.dl_dv(&qm, v);
            for i in 0..n {
                m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
            qp[j] = q[j];
            qm[j] = q[j];
        }
        m
    }
}

/// Snapshot `(t, q, v, p)` on the Pontryagin bundle `TQ ⊕ T*Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PontryaginState {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub p: DVector<f64>,
}

impl PontryaginState {
    pub fn new(t: f64, q: DVector<f64>, v: DVector<f64>, p: DVector<f64>) -> Self {
        Self { t, q, v, p }
    }

    /// Scaled Legendre-consistency residual `|p − ∂L/∂v|∞ / (1 + |p|∞)`.
    pub fn legendre_residual(&self, lag: &LagrangianSpec) -> f64 {
        let p_ref = lag.dl_dv(&self.q, &self.v);
        let num = (&self.p - &p_ref).abs().max();
        num / (1.0 + self.p.abs().max())
    }
}

/// Energy on the Pontryagin bundle: `E(q, v, p) = p·v − L(q, v)`.
pub fn energy(lag: &LagrangianSpec, q: &DVector<f64>, v: &DVector<f64>, p: &DVector<f64>) -> f64 {
    p.dot(v) - lag.value(q, v)
}

/// Legendre map `p = ∂L/∂v (q, v)`. No invertibility is assumed.
pub fn legendre(lag: &LagrangianSpec, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    lag.dl_dv(q, v)
}

/// Worst-case relative finite-difference errors of the supplied derivatives.
#[derive(Debug, Clone, Default)]
pub struct FdAuditReport {
    pub dl_dv_max_rel: f64,
    pub dl_dq_max_rel: f64,
    pub d2l_dvdv_max_rel: f64,
    pub d2l_dvdq_max_rel: f64,
    pub d2l_dvdv_asymmetry: f64,
}

impl FdAuditReport {
    pub fn first_derivatives_ok(&self, tol: f64) -> bool {
        self.dl_dv_max_rel <= tol && self.dl_dq_max_rel <= tol
    }
}

/// Audits the supplied derivative callbacks against central finite differences
/// of `L` (and of the first derivatives, for the second derivatives) at the
/// given `(q, v)` samples.
pub fn fd_audit(lag: &LagrangianSpec, samples: &[(DVector<f64>, DVector<f64>)]) -> FdAuditReport {
    let mut report = FdAuditReport::default();
    for (q, v) in samples {
        let n = q.len();
        let dl_dv = lag.dl_dv(q, v);
        let dl_dq = lag.dl_dq(q, v);
        let mut vp = v.clone();
        let mut vm = v.clone();
        let mut qp = q.clone();
        let mut qm = q.clone();
        for i in 0..n {
            let hv = fd_step(v[i]);
            vp[i] = v[i] + hv;
            vm[i] = v[i] - hv;
            let fd_v = (lag.value(q, &vp) - lag.value(q, &vm)) / (2.0 * hv);
            let rel_v = (fd_v - dl_dv[i]).abs() / (1.0 + dl_dv[i].abs());
            report.dl_dv_max_rel = report.dl_dv_max_rel.max(rel_v);
            vp[i] = v[i];
            vm[i] = v[i];

            let hq = fd_step(q[i]);
            qp[i] = q[i] + hq;
            qm[i] = q[i] - hq;
            let fd_q = (lag.value(&qp, v) - lag.value(&qm, v)) / (2.0 * hq);
            let rel_q = (fd_q - dl_dq[i]).abs() / (1.0 + dl_dq[i].abs());
            report.dl_dq_max_rel = report.dl_dq_max_rel.max(rel_q);
            qp[i] = q[i];
            qm[i] = q[i];
        }

        if lag.d2l_dvdv.is_some() {
            let supplied = lag.mass_matrix(q, v);
            let fd = LagrangianSpec {
                d2l_dvdv: None,
                ..lag.clone()
            }
            .mass_matrix(q, v);
            let rel = (&supplied - &fd).abs().max() / (1.0 + supplied.abs().max());
            report.d2l_dvdv_max_rel = report.d2l_dvdv_max_rel.max(rel);
            let asym = (&supplied - supplied.transpose()).abs().max();
            report.d2l_dvdv_asymmetry = report.d2l_dvdv_asymmetry.max(asym);
        }
        if lag.d2l_dvdq.is_some() {
            let supplied = lag.d2l_dvdq(q, v);
            let fd = LagrangianSpec {
                d2l_dvdq: None,
                ..lag.clone()
            }
            .d2l_dvdq(q, v);
            let rel = (&supplied - &fd).abs().max() / (1.0 + supplied.abs().max());
            report.d2l_dvdq_max_rel = report.d2l_dvdq_max_rel.max(rel);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{self, PendulumParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn pendulum() -> LagrangianSpec {
        let p = PendulumParams {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            ..PendulumParams::default()
        };
        scenarios::pendulum_lagrangian(&p)
    }

    #[test]
    fn energy_matches_hand_evaluations() {
        // Pendulum at θ = π/2 with v = (1, 0): E = p·v − L = 1 − 0.5.
        let lag = pendulum();
        let q = dvector![std::f64::consts::FRAC_PI_2, 0.0];
        let v = dvector![1.0, 0.0];
        let p = legendre(&lag, &q, &v);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(energy(&lag, &q, &v, &p), 0.5, epsilon = 1e-12);

        // Disk with m = 1, I = 2, J = 3: E = 8 − 3.5.
        let disk = scenarios::disk_lagrangian(&scenarios::DiskParams {
            mass: 1.0,
            inertia_rolling: 2.0,
            inertia_heading: 3.0,
            ..scenarios::DiskParams::default()
        });
        let q4 = dvector![0.1, 0.2, 0.3, 0.4];
        let v4 = dvector![1.0, 1.0, 1.0, 1.0];
        let p4 = dvector![2.0, 2.0, 2.0, 2.0];
        assert_abs_diff_eq!(energy(&disk, &q4, &v4, &p4), 4.5, epsilon = 1e-12);

        // Kinetic Lagrangian at v = 0: E = −L(q, 0) = 0.
        let v0 = DVector::zeros(4);
        let p_any = dvector![0.4, -0.3, 0.2, 0.9];
        assert_abs_diff_eq!(energy(&disk, &q4, &v0, &p_any), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn legendre_matches_paper_momenta() {
        let m = 1.3;
        let len = 0.8;
        let lag = scenarios::pendulum_lagrangian(&PendulumParams {
            mass: m,
            length: len,
            gravity: 9.8,
            ..PendulumParams::default()
        });
        let q = dvector![0.7, 0.2];
        let v = dvector![1.1, -0.4];
        let p = legendre(&lag, &q, &v);
        assert_abs_diff_eq!(p[0], m * len * len * v[0], epsilon = 1e-14);
        assert_abs_diff_eq!(
            p[1],
            m * len * len * v[1] * q[0].sin().powi(2),
            epsilon = 1e-14
        );

        let zero = legendre(&lag, &q, &DVector::zeros(2));
        assert_abs_diff_eq!(zero.abs().max(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn energy_equals_classical_form() {
        let lag = pendulum();
        for (qs, vs) in [(0.5, 0.9), (1.2, -0.3), (2.1, 0.0)] {
            let q = dvector![qs, 0.1];
            let v = dvector![vs, 0.5 * vs];
            let p = legendre(&lag, &q, &v);
            let classical = lag.dl_dv(&q, &v).dot(&v) - lag.value(&q, &v);
            assert_abs_diff_eq!(energy(&lag, &q, &v, &p), classical, epsilon = 1e-12);
        }
    }

    #[test]
    fn fd_audit_accepts_correct_spec_and_catches_faults() {
        let lag = pendulum();
        let samples = vec![
            (dvector![0.8, 0.1], dvector![0.5, 0.2]),
            (dvector![2.2, -0.4], dvector![-1.0, 0.7]),
        ];
        let report = fd_audit(&lag, &samples);
        assert!(report.first_derivatives_ok(1e-6), "{report:?}");
        assert!(report.d2l_dvdv_asymmetry <= 1e-9);

        // Zeroed dL/dq loses the gravity term mgL sinθ.
        let broken = LagrangianSpec {
            dl_dq: Arc::new(|_q, _v| DVector::zeros(2)),
            d2l_dvdv: None,
            d2l_dvdq: None,
            ..lag.clone()
        };
        let report = fd_audit(&broken, &samples);
        assert!(report.dl_dq_max_rel > 1.0);

        // Free particle: dL/dq error is exactly zero.
        let free = LagrangianSpec::free_particle(2);
        let report = fd_audit(&free, &samples);
        assert_eq!(report.dl_dq_max_rel, 0.0);
    }

    #[test]
    fn mass_matrix_falls_back_to_finite_differences() {
        let lag = pendulum();
        let q = dvector![1.1, 0.0];
        let v = dvector![0.4, -0.2];
        let supplied = lag.mass_matrix(&q, &v);
        let fd = LagrangianSpec {
            d2l_dvdv: None,
            ..lag.clone()
        }
        .mass_matrix(&q, &v);
        assert!((supplied - fd).abs().max() < 1e-7);
    }
}
