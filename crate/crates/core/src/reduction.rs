//! Symmetry reduction on trivialized principal bundles `Q ≅ Σ × G`.
//!
//! Carries the Lie algebra data, the reduced Lagrangian with its split
//! constraints, the nonholonomic implicit Lagrange–Poincaré flow with
//! curvature coupling, reduced elastic impacts, Euler–Poincaré–Suslov flows on
//! the bare algebra, and group reconstruction from the reduced solution.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::{BoundarySpec, DistributionSpec, MatrixFn, TensorFn};
use crate::impact::{ImpactError, ImpactParams};
use crate::integrator::{solve_saddle, IntegratorOptions, SampleDiagnostics, SimError, StepError};
use crate::lagrangian::PontryaginState;
use crate::system::StateGuard;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("bundle layout mismatch: expected dimension {expected}, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("matrix generators are required to reconstruct a nonabelian group")]
    MissingGenerators,
    #[error("invalid Lie algebra data: {0}")]
    InvalidAlgebra(String),
    #[error("invalid reduced system: {0}")]
    InvalidSpec(String),
}

/// Lie algebra of dimension `k` given by structure constants
/// `[e_a, e_b] = c^c_{ab} e_c`, with optional matrix generators for group
/// reconstruction.
#[derive(Clone)]
pub struct LieAlgebraSpec {
    pub k: usize,
    /// `c[c]` is the `k × k` matrix over `(a, b)`.
    c: Vec<DMatrix<f64>>,
    pub generators: Option<Vec<DMatrix<f64>>>,
}

impl LieAlgebraSpec {
    pub fn new(
        k: usize,
        c: Vec<DMatrix<f64>>,
        generators: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self, ReductionError> {
        if c.len() != k || c.iter().any(|m| m.nrows() != k || m.ncols() != k) {
            return Err(ReductionError::InvalidAlgebra(
                "structure constants must be k matrices of size k x k".into(),
            ));
        }
        for (ci, mat) in c.iter().enumerate() {
            for a in 0..k {
                for b in 0..k {
                    if mat[(a, b)] + mat[(b, a)] != 0.0 {
                        return Err(ReductionError::InvalidAlgebra(format!(
                            "antisymmetry violated at c^{ci}_{{{a}{b}}}"
                        )));
                    }
                }
            }
        }
        // Jacobi identity.
        for a in 0..k {
            for b in 0..k {
                for cc in 0..k {
                    for d in 0..k {
                        let mut total = 0.0;
                        for e in 0..k {
                            total += c[e][(a, b)] * c[d][(e, cc)]
                                + c[e][(b, cc)] * c[d][(e, a)]
                                + c[e][(cc, a)] * c[d][(e, b)];
                        }
                        if total.abs() > 1e-12 {
                            return Err(ReductionError::InvalidAlgebra(format!(
                                "Jacobi identity violated (residual {total:.3e})"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(gens) = &generators {
            if gens.len() != k {
                return Err(ReductionError::InvalidAlgebra(
                    "generator count must equal the algebra dimension".into(),
                ));
            }
        }
        Ok(Self { k, c, generators })
    }

    pub fn abelian(k: usize) -> Self {
        Self {
            k,
            c: vec![DMatrix::zeros(k, k); k],
            generators: None,
        }
    }

    /// `so(3)` with `c^c_{ab} = ε_{abc}` and the standard hat generators.
    pub fn so3() -> Self {
        let mut c = vec![DMatrix::zeros(3, 3); 3];
        let eps = [(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)];
        for (a, b, cc, s) in eps {
            c[cc][(a, b)] = s;
            c[cc][(b, a)] = -s;
        }
        let g1 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        let g2 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        let g3 = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        Self {
            k: 3,
            c,
            generators: Some(vec![g1, g2, g3]),
        }
    }

    pub fn is_abelian(&self) -> bool {
        self.c.iter().all(|m| m.iter().all(|&x| x == 0.0))
    }

    /// `[ξ, η]^c = c^c_{ab} ξ^a η^b`.
    pub fn bracket(&self, xi: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        for cc in 0..self.k {
            out[cc] = (xi.transpose() * &self.c[cc] * eta)[(0, 0)];
        }
        out
    }

    /// Matrix representation `ξ̂ = Σ_a ξ^a G_a`.
    pub fn hat(&self, xi: &DVector<f64>) -> Result<DMatrix<f64>, ReductionError> {
        let gens = self
            .generators
            .as_ref()
            .ok_or(ReductionError::MissingGenerators)?;
        let d = gens[0].nrows();
        let mut out = DMatrix::zeros(d, d);
        for (a, g) in gens.iter().enumerate() {
            out += xi[a] * g;
        }
        Ok(out)
    }
}

/// Coadjoint action with the pairing convention `⟨ad*_ξ μ, η⟩ = ⟨μ, ad_ξ η⟩`:
/// `(ad*_ξ ρ)_b = c^c_{ab} ξ^a ρ_c`.
pub fn ad_star(alg: &LieAlgebraSpec, xi: &DVector<f64>, rho: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(alg.k);
    for b in 0..alg.k {
        let mut acc = 0.0;
        for a in 0..alg.k {
            for cc in 0..alg.k {
                acc += alg.c[cc][(a, b)] * xi[a] * rho[cc];
            }
        }
        out[b] = acc;
    }
    out
}

pub type ReducedLagrangianFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type ReducedLagrangianGradFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Reduced Lagrangian `ℓ(σ, u, ξ)` with its partial derivatives. Second
/// derivatives are finite-differenced from the partials when not supplied.
#[derive(Clone)]
pub struct ReducedLagrangian {
    pub l: ReducedLagrangianFn,
    pub dl_dsigma: ReducedLagrangianGradFn,
    pub dl_du: ReducedLagrangianGradFn,
    pub dl_dxi: ReducedLagrangianGradFn,
}

impl ReducedLagrangian {
    pub fn value(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        (self.l)(s, u, xi)
    }

    pub fn d_sigma(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        (self.dl_dsigma)(s, u, xi)
    }

    pub fn d_u(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        (self.dl_du)(s, u, xi)
    }

    pub fn d_xi(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        (self.dl_dxi)(s, u, xi)
    }

    fn jac_fd(
        grad: &ReducedLagrangianGradFn,
        s: &DVector<f64>,
        u: &DVector<f64>,
        xi: &DVector<f64>,
        wrt: Wrt,
        out_dim: usize,
    ) -> DMatrix<f64> {
        let target = match wrt {
            Wrt::Sigma => s,
            Wrt::U => u,
            Wrt::Xi => xi,
        };
        let n = target.len();
        let mut jac = DMatrix::zeros(out_dim, n);
        let mut tp = target.clone();
        let mut tm = target.clone();
        for j in 0..n {
            let h = crate::geometry::fd_step(target[j]);
            tp[j] = target[j] + h;
            tm[j] = target[j] - h;
            let (gp, gm) = match wrt {
                Wrt::Sigma => (grad(&tp, u, xi), grad(&tm, u, xi)),
                Wrt::U => (grad(s, &tp, xi), grad(s, &tm, xi)),
                Wrt::Xi => (grad(s, u, &tp), grad(s, u, &tm)),
            };
            for i in 0..out_dim {
                jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
            tp[j] = target[j];
            tm[j] = target[j];
        }
        jac
    }

    pub fn l_uu(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
        let m = Self::jac_fd(&self.dl_du, s, u, xi, Wrt::U, u.len());
        0.5 * (&m + m.transpose())
    }

    pub fn l_uxi(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
        Self::jac_fd(&self.dl_du, s, u, xi, Wrt::Xi, u.len())
    }

    pub fn l_xiu(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
        Self::jac_fd(&self.dl_dxi, s, u, xi, Wrt::U, xi.len())
    }

    pub fn l_xixi(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
        let m = Self::jac_fd(&self.dl_dxi, s, u, xi, Wrt::Xi, xi.len());
        0.5 * (&m + m.transpose())
    }

    pub fn l_usigma(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
        Self::jac_fd(&self.dl_du, s, u, xi, Wrt::Sigma, u.len())
    }

    pub fn l_xisigma(&self, s: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
        Self::jac_fd(&self.dl_dxi, s, u, xi, Wrt::Sigma, xi.len())
    }
}

enum Wrt {
    Sigma,
    U,
    Xi,
}

/// Reduced problem definition on `TΣ ⊕ g̃` with split constraints, connection
/// coefficients and curvature, and a boundary on shape space.
#[derive(Clone)]
pub struct ReducedSystemSpec {
    pub sigma_dim: usize,
    pub algebra: LieAlgebraSpec,
    pub ell: ReducedLagrangian,
    /// Horizontal constraints: annihilator rows on `TΣ` (may be empty).
    pub delta_sigma: DistributionSpec,
    /// Vertical constraints: annihilator rows in `g̃*`, possibly σ-dependent.
    pub delta_g: DistributionSpec,
    /// Principal connection coefficients `A(σ): k × r`; `None` is trivial.
    pub conn_a: Option<MatrixFn>,
    /// Reduced curvature `B(σ)`: one `r × r` antisymmetric matrix per algebra
    /// index. `None` is flat.
    pub curvature_b: Option<TensorFn>,
    pub boundary: BoundarySpec,
    pub guard: Option<StateGuard>,
}

impl ReducedSystemSpec {
    pub fn a_at(&self, sigma: &DVector<f64>) -> DMatrix<f64> {
        match &self.conn_a {
            Some(f) => f(sigma),
            None => DMatrix::zeros(self.algebra.k, self.sigma_dim),
        }
    }

    pub fn b_at(&self, sigma: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match &self.curvature_b {
            Some(f) => f(sigma),
            None => vec![DMatrix::zeros(self.sigma_dim, self.sigma_dim); self.algebra.k],
        }
    }

    /// Checks curvature antisymmetry and the flat-connection consistency rule
    /// (`A ≡ 0` forces `B ≡ 0`) at the given shape samples.
    pub fn validate(&self, samples: &[DVector<f64>]) -> Result<(), ReductionError> {
        for sigma in samples {
            let b = self.b_at(sigma);
            for (ci, mat) in b.iter().enumerate() {
                let asym = (mat + mat.transpose()).abs().max();
                if asym > 1e-12 {
                    return Err(ReductionError::InvalidSpec(format!(
                        "curvature component {ci} not antisymmetric (residual {asym:.3e})"
                    )));
                }
            }
            if self.conn_a.is_some() {
                continue;
            }
            let worst = b.iter().map(|m| m.abs().max()).fold(0.0f64, f64::max);
            if worst > 0.0 {
                return Err(ReductionError::InvalidSpec(
                    "trivial connection must have zero curvature".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn check_guard(&self, sigma: &DVector<f64>) -> Result<(), String> {
        match &self.guard {
            Some(g) => g(sigma),
            None => Ok(()),
        }
    }

    pub fn constraint_residual(
        &self,
        sigma: &DVector<f64>,
        u: &DVector<f64>,
        xi: &DVector<f64>,
    ) -> f64 {
        let mut worst = 0.0f64;
        if self.delta_sigma.rows > 0 {
            worst = worst.max((self.delta_sigma.mu(sigma) * u).abs().max());
        }
        if self.delta_g.rows > 0 {
            worst = worst.max((self.delta_g.mu(sigma) * xi).abs().max());
        }
        worst
    }
}

/// Snapshot of the reduced flow: shape point, shape velocity and momentum,
/// algebra velocity and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub t: f64,
    pub sigma: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub xi: DVector<f64>,
    pub rho: DVector<f64>,
}

impl ReducedState {
    pub fn legendre_residual(&self, ell: &ReducedLagrangian) -> f64 {
        let y_ref = ell.d_u(&self.sigma, &self.u, &self.xi);
        let rho_ref = ell.d_xi(&self.sigma, &self.u, &self.xi);
        let ry = (&self.y - y_ref).abs().max() / (1.0 + self.y.abs().max());
        let rr = (&self.rho - rho_ref).abs().max() / (1.0 + self.rho.abs().max());
        ry.max(rr)
    }
}

/// Reduced energy `e = y·u + ρ·ξ − ℓ(σ, u, ξ)`.
pub fn reduced_energy(
    spec: &ReducedSystemSpec,
    sigma: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    y: &DVector<f64>,
    rho: &DVector<f64>,
) -> f64 {
    y.dot(u) + rho.dot(xi) - spec.ell.value(sigma, u, xi)
}

/// Which vertical equation to solve: the well-posed variant carries a
/// multiplier along the vertical annihilator rows; the paper-literal variant
/// forces that multiplier to zero and reports the consistency defect of the
/// differentiated vertical constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LpMode {
    #[default]
    WellPosed,
    PaperLiteralVertical,
}

#[derive(Debug, Clone)]
pub struct LpDerivatives {
    pub udot: DVector<f64>,
    pub xidot: DVector<f64>,
    pub lambda_h: DVector<f64>,
    pub lambda_v: DVector<f64>,
    /// Residual of the differentiated vertical constraint in paper-literal
    /// mode (`None` in well-posed mode or with no vertical constraints).
    pub vertical_consistency: Option<f64>,
}

/// Index-reduced joint solve of the nonholonomic implicit Lagrange–Poincaré
/// equations: horizontal block with curvature coupling, vertical block with
/// coadjoint and connection transport, differentiated constraints closing the
/// system.
pub fn lp_rhs(
    spec: &ReducedSystemSpec,
    sigma: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    mode: LpMode,
) -> Result<LpDerivatives, ReductionError> {
    let r = spec.sigma_dim;
    let k = spec.algebra.k;
    let mh = spec.delta_sigma.rows;
    let mv = spec.delta_g.rows;
    let ell = &spec.ell;

    let rho = ell.d_xi(sigma, u, xi);
    let l_uu = ell.l_uu(sigma, u, xi);
    let l_uxi = ell.l_uxi(sigma, u, xi);
    let l_xiu = ell.l_xiu(sigma, u, xi);
    let l_xixi = ell.l_xixi(sigma, u, xi);

    // Horizontal force: δℓ/δσ − (∂_σ δℓ/δu)·u − ρ·(i_u B).
    let mut f_h = ell.d_sigma(sigma, u, xi) - ell.l_usigma(sigma, u, xi) * u;
    let b = spec.b_at(sigma);
    for (cc, bmat) in b.iter().enumerate() {
        // (ρ·(i_u B))_j = ρ_c B^c_{ij} u^i
        for j in 0..r {
            let mut acc = 0.0;
            for i in 0..r {
                acc += bmat[(i, j)] * u[i];
            }
            f_h[j] -= rho[cc] * acc;
        }
    }

    // Vertical force: ad*_ξ ρ − ad*_{A u} ρ − (∂_σ δℓ/δξ)·u.
    let a = spec.a_at(sigma);
    let transport = ad_star(&spec.algebra, &(&a * u), &rho);
    let f_v = ad_star(&spec.algebra, xi, &rho) - transport - ell.l_xisigma(sigma, u, xi) * u;

    let r_sigma = spec.delta_sigma.mu(sigma);
    let r_g = spec.delta_g.mu(sigma);
    let ch = -spec.delta_sigma.dmu_uv(sigma, u, u);
    let cv = -spec.delta_g.dmu_uv(sigma, u, xi);

    let mv_active = match mode {
        LpMode::WellPosed => mv,
        LpMode::PaperLiteralVertical => 0,
    };
    let dim = r + k + mh + mv_active;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (r, r)).copy_from(&l_uu);
    kkt.view_mut((0, r), (r, k)).copy_from(&l_uxi);
    kkt.view_mut((r, 0), (k, r)).copy_from(&l_xiu);
    kkt.view_mut((r, r), (k, k)).copy_from(&l_xixi);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, r).copy_from(&f_h);
    rhs.rows_mut(r, k).copy_from(&f_v);
    if mh > 0 {
        kkt.view_mut((0, r + k), (r, mh))
            .copy_from(&r_sigma.transpose());
        kkt.view_mut((r + k, 0), (mh, r)).copy_from(&r_sigma);
        rhs.rows_mut(r + k, mh).copy_from(&ch);
    }
    if mv_active > 0 {
        kkt.view_mut((r, r + k + mh), (k, mv))
            .copy_from(&r_g.transpose());
        kkt.view_mut((r + k + mh, r), (mv, k)).copy_from(&r_g);
        rhs.rows_mut(r + k + mh, mv).copy_from(&cv);
    }

    let x = solve_saddle(&kkt, &rhs)?;
    let udot = x.rows(0, r).into_owned();
    let xidot = x.rows(r, k).into_owned();
    let lambda_h = if mh > 0 {
        -x.rows(r + k, mh).into_owned()
    } else {
        DVector::zeros(0)
    };
    let lambda_v = if mv_active > 0 {
        -x.rows(r + k + mh, mv).into_owned()
    } else {
        // Paper-literal mode forces the vertical multiplier to zero.
        DVector::zeros(mv)
    };
    let vertical_consistency = if mode == LpMode::PaperLiteralVertical && mv > 0 {
        Some((&r_g * &xidot - &cv).abs().max())
    } else {
        None
    };
    Ok(LpDerivatives {
        udot,
        xidot,
        lambda_h,
        lambda_v,
        vertical_consistency,
    })
}

pub type AlgebraScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type AlgebraGradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type AlgebraHessFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Reduced Lagrangian on the bare algebra for Euler–Poincaré–Suslov flows.
#[derive(Clone)]
pub struct EpsLagrangian {
    pub l: AlgebraScalarFn,
    pub dl: AlgebraGradFn,
    pub hess: Option<AlgebraHessFn>,
}

impl EpsLagrangian {
    pub fn momentum(&self, xi: &DVector<f64>) -> DVector<f64> {
        (self.dl)(xi)
    }

    pub fn hess_at(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        if let Some(f) = &self.hess {
            return f(xi);
        }
        let k = xi.len();
        let mut h = DMatrix::zeros(k, k);
        let mut xp = xi.clone();
        let mut xm = xi.clone();
        for j in 0..k {
            let step = crate::geometry::fd_step(xi[j]);
            xp[j] = xi[j] + step;
            xm[j] = xi[j] - step;
            let gp = (self.dl)(&xp);
            let gm = (self.dl)(&xm);
            for i in 0..k {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
            xp[j] = xi[j];
            xm[j] = xi[j];
        }
        0.5 * (&h + h.transpose())
    }
}

/// Implicit Euler–Poincaré–Suslov right-hand side: solves
/// `μ̇ − ad*_ξ μ = λᵀ·(d° rows)`, `ξ ∈ d` via the saddle system with the
/// differentiated constraint.
#[allow(clippy::type_complexity)]
pub fn eps_rhs<'a>(
    alg: &'a LieAlgebraSpec,
    ell: &'a EpsLagrangian,
    d: &'a DistributionSpec,
) -> impl Fn(&DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), ReductionError> + 'a {
    move |xi: &DVector<f64>| {
        let k = alg.k;
        let m = d.rows;
        let mu = ell.momentum(xi);
        let h = ell.hess_at(xi);
        let force = ad_star(alg, xi, &mu);
        if m == 0 {
            let xidot = solve_saddle(&h, &force)?;
            return Ok((xidot, DVector::zeros(0)));
        }
        let rows = d.mu(xi);
        let mut kkt = DMatrix::zeros(k + m, k + m);
        kkt.view_mut((0, 0), (k, k)).copy_from(&h);
        kkt.view_mut((0, k), (k, m)).copy_from(&rows.transpose());
        kkt.view_mut((k, 0), (m, k)).copy_from(&rows);
        let mut rhs = DVector::zeros(k + m);
        rhs.rows_mut(0, k).copy_from(&force);
        let x = solve_saddle(&kkt, &rhs)?;
        Ok((x.rows(0, k).into_owned(), -x.rows(k, m).into_owned()))
    }
}

/// Trajectory of an Euler–Poincaré–Suslov flow.
#[derive(Clone, Default)]
pub struct EpsTrajectory {
    pub ts: Vec<f64>,
    pub xis: Vec<DVector<f64>>,
    pub mus: Vec<DVector<f64>>,
    pub lambdas: Vec<DVector<f64>>,
    pub diagnostics: Vec<SampleDiagnostics>,
}

/// Integrates the Euler–Poincaré–Suslov equations with RK4 and post-step
/// projection of `ξ` onto the reduced constraint subspace.
pub fn integrate_eps(
    alg: &LieAlgebraSpec,
    ell: &EpsLagrangian,
    d: &DistributionSpec,
    xi0: &DVector<f64>,
    t_final: f64,
    h: f64,
) -> Result<EpsTrajectory, SimError> {
    let rhs = eps_rhs(alg, ell, d);
    let f = |xi: &DVector<f64>| -> Result<DVector<f64>, SimError> {
        Ok(rhs(xi).map_err(reduction_to_sim)?.0)
    };
    let mut traj = EpsTrajectory::default();
    let mut xi = xi0.clone();
    let n_steps = (t_final / h).ceil() as usize;
    let push = |traj: &mut EpsTrajectory, t: f64, xi: &DVector<f64>| -> Result<(), SimError> {
        let mu = ell.momentum(xi);
        let lambda = rhs(xi).map_err(reduction_to_sim)?.1;
        let res = if d.rows > 0 {
            (d.mu(xi) * xi).abs().max()
        } else {
            0.0
        };
        traj.diagnostics.push(SampleDiagnostics {
            energy: mu.dot(xi) - (ell.l)(xi),
            constraint_residual: res,
            legendre_residual: 0.0,
        });
        traj.ts.push(t);
        traj.mus.push(mu);
        traj.lambdas.push(lambda);
        traj.xis.push(xi.clone());
        Ok(())
    };
    push(&mut traj, 0.0, &xi)?;
    for step_idx in 0..n_steps {
        let dt = h.min(t_final - step_idx as f64 * h);
        let k1 = f(&xi)?;
        let k2 = f(&(&xi + 0.5 * dt * &k1))?;
        let k3 = f(&(&xi + 0.5 * dt * &k2))?;
        let k4 = f(&(&xi + dt * &k3))?;
        xi += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if d.rows > 0 {
            // Project back onto ker(d°) in the Hessian metric.
            let hmat = ell.hess_at(&xi);
            let rows = d.mu(&xi);
            let k = alg.k;
            let m = d.rows;
            let mut kkt = DMatrix::zeros(k + m, k + m);
            kkt.view_mut((0, 0), (k, k)).copy_from(&hmat);
            kkt.view_mut((0, k), (k, m)).copy_from(&rows.transpose());
            kkt.view_mut((k, 0), (m, k)).copy_from(&rows);
            let mut rhs_p = DVector::zeros(k + m);
            rhs_p.rows_mut(k, m).copy_from(&(&rows * &xi));
            let x = solve_saddle(&kkt, &rhs_p).map_err(SimError::Step)?;
            xi -= x.rows(0, k).into_owned();
        }
        push(&mut traj, (step_idx as f64 + 1.0) * h.min(t_final), &xi)?;
    }
    Ok(traj)
}

fn reduction_to_sim(e: ReductionError) -> SimError {
    match e {
        ReductionError::Step(s) => SimError::Step(s),
        other => SimError::InvalidInitialState(other.to_string()),
    }
}

/// Record of one resolved reduced elastic impact.
#[derive(Debug, Clone)]
pub struct ReducedImpactRecord {
    pub t_impact: f64,
    pub sigma: DVector<f64>,
    pub u_minus: DVector<f64>,
    pub u_plus: DVector<f64>,
    pub xi_minus: DVector<f64>,
    pub xi_plus: DVector<f64>,
    pub y_minus: DVector<f64>,
    pub y_plus: DVector<f64>,
    pub rho_minus: DVector<f64>,
    pub rho_plus: DVector<f64>,
    pub lambda0: f64,
    pub lambda_h: DVector<f64>,
    pub lambda_v: DVector<f64>,
    pub e_minus: f64,
    pub e_plus: f64,
}

/// Resolves a reduced elastic impact: the shape-momentum jump lies in
/// `span{db} + Δ_Σ°`, the vertical momentum jump lies in `Δ_g̃°`, energy is
/// conserved and the post-impact velocities satisfy both reduced constraints.
pub fn reduced_impact_map(
    spec: &ReducedSystemSpec,
    sigma: &DVector<f64>,
    u_minus: &DVector<f64>,
    xi_minus: &DVector<f64>,
    t_impact: f64,
    params: &ImpactParams,
) -> Result<ReducedImpactRecord, ImpactError> {
    let b = spec.boundary.value(sigma);
    if b.abs() > params.boundary_tol {
        return Err(crate::geometry::GeometryError::NotOnBoundary {
            b: b.abs(),
            tol: params.boundary_tol,
        }
        .into());
    }
    let db = spec.boundary.gradient(sigma);
    let approach = db.dot(u_minus);
    if approach <= 0.0 {
        return Err(ImpactError::NotApproaching(approach));
    }
    let r = spec.sigma_dim;
    let k = spec.algebra.k;
    let mh = spec.delta_sigma.rows;
    let mv = spec.delta_g.rows;
    let r_sigma = spec.delta_sigma.mu(sigma);
    let r_g = spec.delta_g.mu(sigma);
    let ell = &spec.ell;

    let y_minus = ell.d_u(sigma, u_minus, xi_minus);
    let rho_minus = ell.d_xi(sigma, u_minus, xi_minus);
    let e_minus = reduced_energy(spec, sigma, u_minus, xi_minus, &y_minus, &rho_minus);
    let scale = 1.0 + e_minus.abs().max(y_minus.abs().max());

    // Reflection guess within the constrained block space: reverse the state
    // along the block-metric projection of the raised conormal onto the
    // admissible subspace.
    let mut mass = DMatrix::zeros(r + k, r + k);
    mass.view_mut((0, 0), (r, r))
        .copy_from(&ell.l_uu(sigma, u_minus, xi_minus));
    mass.view_mut((0, r), (r, k))
        .copy_from(&ell.l_uxi(sigma, u_minus, xi_minus));
    mass.view_mut((r, 0), (k, r))
        .copy_from(&ell.l_xiu(sigma, u_minus, xi_minus));
    mass.view_mut((r, r), (k, k))
        .copy_from(&ell.l_xixi(sigma, u_minus, xi_minus));
    let metric = match mass.clone().cholesky() {
        Some(_) => mass,
        None => DMatrix::identity(r + k, r + k),
    };
    let mut db_block = DVector::zeros(r + k);
    db_block.rows_mut(0, r).copy_from(&db);
    let raised = metric
        .clone()
        .cholesky()
        .map(|c| c.solve(&db_block))
        .unwrap_or_else(|| db_block.clone());
    let jump_dir = {
        // Project onto {R_Σ u = 0, R_g ξ = 0} in the block metric.
        if mh + mv == 0 {
            raised.clone()
        } else {
            let mut c = DMatrix::zeros(mh + mv, r + k);
            if mh > 0 {
                c.view_mut((0, 0), (mh, r)).copy_from(&r_sigma);
            }
            if mv > 0 {
                c.view_mut((mh, r), (mv, k)).copy_from(&r_g);
            }
            let dim = r + k + mh + mv;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (r + k, r + k)).copy_from(&metric);
            kkt.view_mut((0, r + k), (r + k, mh + mv))
                .copy_from(&c.transpose());
            kkt.view_mut((r + k, 0), (mh + mv, r + k)).copy_from(&c);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(r + k, mh + mv).copy_from(&(&c * &raised));
            match solve_saddle(&kkt, &rhs) {
                Ok(x) => &raised - x.rows(0, r + k).into_owned(),
                Err(_) => raised.clone(),
            }
        }
    };
    let mut w_minus = DVector::zeros(r + k);
    w_minus.rows_mut(0, r).copy_from(u_minus);
    w_minus.rows_mut(r, k).copy_from(xi_minus);
    let dir_norm2 = (jump_dir.transpose() * &metric * &jump_dir)[(0, 0)];
    let w_guess = if dir_norm2 > 1e-14 * (1.0 + raised.norm_squared()) {
        let coeff = (w_minus.transpose() * &metric * &jump_dir)[(0, 0)] / dir_norm2;
        &w_minus - 2.0 * coeff * &jump_dir
    } else {
        w_minus.clone()
    };
    let u_guess = w_guess.rows(0, r).into_owned();
    let xi_guess = w_guess.rows(r, k).into_owned();

    let dim = r + k + 1 + mh + mv;
    let residual = |z: &DVector<f64>| -> DVector<f64> {
        let u = z.rows(0, r).into_owned();
        let xi = z.rows(r, k).into_owned();
        let lambda0 = z[r + k];
        let lambda_h = z.rows(r + k + 1, mh).into_owned();
        let lambda_v = z.rows(r + k + 1 + mh, mv).into_owned();
        let y = ell.d_u(sigma, &u, &xi);
        let rho = ell.d_xi(sigma, &u, &xi);
        let mut f = DVector::zeros(dim);
        let mut jump_y = &y - &y_minus - lambda0 * &db;
        if mh > 0 {
            jump_y -= r_sigma.transpose() * &lambda_h;
        }
        f.rows_mut(0, r).copy_from(&jump_y);
        let mut jump_rho = &rho - &rho_minus;
        if mv > 0 {
            jump_rho -= r_g.transpose() * &lambda_v;
        }
        f.rows_mut(r, k).copy_from(&jump_rho);
        f[r + k] = reduced_energy(spec, sigma, &u, &xi, &y, &rho) - e_minus;
        if mh > 0 {
            f.rows_mut(r + k + 1, mh).copy_from(&(&r_sigma * &u));
        }
        if mv > 0 {
            f.rows_mut(r + k + 1 + mh, mv).copy_from(&(&r_g * &xi));
        }
        f
    };
    let jacobian = |z: &DVector<f64>| -> DMatrix<f64> {
        let u = z.rows(0, r).into_owned();
        let xi = z.rows(r, k).into_owned();
        let l_uu = ell.l_uu(sigma, &u, &xi);
        let l_uxi = ell.l_uxi(sigma, &u, &xi);
        let l_xiu = ell.l_xiu(sigma, &u, &xi);
        let l_xixi = ell.l_xixi(sigma, &u, &xi);
        let mut jac = DMatrix::zeros(dim, dim);
        jac.view_mut((0, 0), (r, r)).copy_from(&l_uu);
        jac.view_mut((0, r), (r, k)).copy_from(&l_uxi);
        jac.view_mut((r, 0), (k, r)).copy_from(&l_xiu);
        jac.view_mut((r, r), (k, k)).copy_from(&l_xixi);
        for i in 0..r {
            jac[(i, r + k)] = -db[i];
        }
        if mh > 0 {
            jac.view_mut((0, r + k + 1), (r, mh))
                .copy_from(&(-r_sigma.transpose()));
        }
        if mv > 0 {
            jac.view_mut((r, r + k + 1 + mh), (k, mv))
                .copy_from(&(-r_g.transpose()));
        }
        let de_du = l_uu.transpose() * &u + l_xiu.transpose() * &xi;
        let de_dxi = l_uxi.transpose() * &u + l_xixi.transpose() * &xi;
        for j in 0..r {
            jac[(r + k, j)] = de_du[j];
        }
        for j in 0..k {
            jac[(r + k, r + j)] = de_dxi[j];
        }
        if mh > 0 {
            jac.view_mut((r + k + 1, 0), (mh, r)).copy_from(&r_sigma);
        }
        if mv > 0 {
            jac.view_mut((r + k + 1 + mh, r), (mv, k)).copy_from(&r_g);
        }
        jac
    };

    let v_scale = 1.0 + u_minus.abs().max().max(xi_minus.abs().max());
    let trivial_threshold = 10.0 * params.constraint_tol;
    let mut guesses = vec![(u_guess.clone(), xi_guess.clone())];
    for c in [0.05, -0.05, 0.15] {
        guesses.push((
            &u_guess + DVector::from_element(r, c * v_scale),
            xi_guess.clone(),
        ));
    }

    let mut saw_trivial = false;
    for (guess_u, guess_xi) in &guesses {
        let mut z = DVector::zeros(dim);
        z.rows_mut(0, r).copy_from(guess_u);
        z.rows_mut(r, k).copy_from(guess_xi);
        let mut f = residual(&z);
        let mut fnorm = f.abs().max();
        let mut converged = false;
        for _ in 0..params.max_newton_iters {
            if fnorm <= params.newton_tol * scale {
                converged = true;
                break;
            }
            let jac = jacobian(&z);
            let Some(dz) = jac.full_piv_lu().solve(&f) else {
                break;
            };
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..20 {
                let z_trial = &z - alpha * &dz;
                let f_trial = residual(&z_trial);
                if f_trial.abs().max() < fnorm {
                    z = z_trial;
                    f = f_trial;
                    fnorm = f.abs().max();
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if !converged {
            continue;
        }
        let u_plus = z.rows(0, r).into_owned();
        let xi_plus = z.rows(r, k).into_owned();
        let delta = (&u_plus - u_minus)
            .abs()
            .max()
            .max((&xi_plus - xi_minus).abs().max());
        if delta <= trivial_threshold {
            saw_trivial = true;
            continue;
        }
        if db.dot(&u_plus) >= 0.0 {
            continue;
        }
        let y_plus = ell.d_u(sigma, &u_plus, &xi_plus);
        let rho_plus = ell.d_xi(sigma, &u_plus, &xi_plus);
        let e_plus = reduced_energy(spec, sigma, &u_plus, &xi_plus, &y_plus, &rho_plus);
        if (e_plus - e_minus).abs() > params.energy_jump_tol {
            return Err(ImpactError::NoConvergence(format!(
                "reduced energy jump {:.3e} above tolerance",
                (e_plus - e_minus).abs()
            )));
        }
        return Ok(ReducedImpactRecord {
            t_impact,
            sigma: sigma.clone(),
            u_minus: u_minus.clone(),
            u_plus,
            xi_minus: xi_minus.clone(),
            xi_plus,
            y_minus,
            y_plus,
            rho_minus,
            rho_plus,
            lambda0: z[r + k],
            lambda_h: z.rows(r + k + 1, mh).into_owned(),
            lambda_v: z.rows(r + k + 1 + mh, mv).into_owned(),
            e_minus,
            e_plus,
        });
    }
    if saw_trivial {
        Err(ImpactError::TrivialRootOnly)
    } else {
        Err(ImpactError::NoConvergence(
            "no admissible reduced impact root found".into(),
        ))
    }
}

/// Declares how the full chart splits into shape and translated group
/// coordinates `q = (σ, g)`.
#[derive(Clone)]
pub struct BundleLayout {
    pub shape_dim: usize,
    pub group_dim: usize,
    /// Connection coefficients `A(σ): k × r` used in the identification
    /// `ξ = ġ − A(σ)·u`; `None` is the trivial connection.
    pub conn_a: Option<MatrixFn>,
}

impl BundleLayout {
    pub fn trivial(shape_dim: usize, group_dim: usize) -> Self {
        Self {
            shape_dim,
            group_dim,
            conn_a: None,
        }
    }

    pub fn a_at(&self, sigma: &DVector<f64>) -> DMatrix<f64> {
        match &self.conn_a {
            Some(f) => f(sigma),
            None => DMatrix::zeros(self.group_dim, self.shape_dim),
        }
    }
}

/// Drops a full Pontryagin state to the reduced bundle: shape components pass
/// through, the group velocity is trivialized and corrected by the connection,
/// and the momenta split into the horizontal-lift dual and the momentum map.
pub fn reduce_state(
    layout: &BundleLayout,
    full: &PontryaginState,
) -> Result<ReducedState, ReductionError> {
    let r = layout.shape_dim;
    let k = layout.group_dim;
    if full.q.len() != r + k {
        return Err(ReductionError::LayoutMismatch {
            expected: r + k,
            got: full.q.len(),
        });
    }
    let sigma = full.q.rows(0, r).into_owned();
    let u = full.u_block(r);
    let gvel = full.v.rows(r, k).into_owned();
    let a = layout.a_at(&sigma);
    let xi = gvel - &a * &u;
    let rho = full.p.rows(r, k).into_owned();
    let y = full.p.rows(0, r).into_owned() + a.transpose() * &rho;
    Ok(ReducedState {
        t: full.t,
        sigma,
        u,
        y,
        xi,
        rho,
    })
}

impl PontryaginState {
    fn u_block(&self, r: usize) -> DVector<f64> {
        self.v.rows(0, r).into_owned()
    }
}

/// Reduced trajectory: samples plus multipliers, diagnostics and event log.
#[derive(Clone, Default)]
pub struct ReducedTrajectory {
    pub samples: Vec<ReducedState>,
    pub lambda_h: Vec<DVector<f64>>,
    pub lambda_v: Vec<DVector<f64>>,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub events: Vec<ReducedImpactRecord>,
    pub grazing_count: usize,
    /// Worst differentiated-vertical-constraint defect seen in paper-literal
    /// mode.
    pub worst_vertical_consistency: f64,
}

impl ReducedTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn reduced_diagnostics(spec: &ReducedSystemSpec, state: &ReducedState) -> SampleDiagnostics {
    SampleDiagnostics {
        energy: reduced_energy(
            spec,
            &state.sigma,
            &state.u,
            &state.xi,
            &state.y,
            &state.rho,
        ),
        constraint_residual: spec.constraint_residual(&state.sigma, &state.u, &state.xi),
        legendre_residual: state.legendre_residual(&spec.ell),
    }
}

#[allow(clippy::type_complexity)]
fn reduced_rk4(
    spec: &ReducedSystemSpec,
    sigma: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    h: f64,
    mode: LpMode,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, Option<f64>), StepError> {
    let f = |s: &DVector<f64>, uu: &DVector<f64>, xx: &DVector<f64>| {
        lp_rhs(spec, s, uu, xx, mode).map_err(|e| match e {
            ReductionError::Step(se) => se,
            other => StepError::SingularKkt(other.to_string()),
        })
    };
    let d1 = f(sigma, u, xi)?;
    let s2 = sigma + 0.5 * h * u;
    let u2 = u + 0.5 * h * &d1.udot;
    let x2 = xi + 0.5 * h * &d1.xidot;
    let d2 = f(&s2, &u2, &x2)?;
    let s3 = sigma + 0.5 * h * &u2;
    let u3 = u + 0.5 * h * &d2.udot;
    let x3 = xi + 0.5 * h * &d2.xidot;
    let d3 = f(&s3, &u3, &x3)?;
    let s4 = sigma + h * &u3;
    let u4 = u + h * &d3.udot;
    let x4 = xi + h * &d3.xidot;
    let d4 = f(&s4, &u4, &x4)?;
    let sn = sigma + (h / 6.0) * (u + 2.0 * &u2 + 2.0 * &u3 + &u4);
    let un = u + (h / 6.0) * (&d1.udot + 2.0 * &d2.udot + 2.0 * &d3.udot + &d4.udot);
    let xn = xi + (h / 6.0) * (&d1.xidot + 2.0 * &d2.xidot + 2.0 * &d3.xidot + &d4.xidot);
    let cons = [&d1, &d2, &d3, &d4]
        .iter()
        .filter_map(|d| d.vertical_consistency)
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.max(x)))
        });
    Ok((sn, un, xn, cons))
}

fn project_reduced(
    spec: &ReducedSystemSpec,
    sigma: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), StepError> {
    let r = spec.sigma_dim;
    let k = spec.algebra.k;
    let mh = spec.delta_sigma.rows;
    let mv = spec.delta_g.rows;
    if mh + mv == 0 {
        return Ok((u.clone(), xi.clone()));
    }
    let ell = &spec.ell;
    let mut mass = DMatrix::zeros(r + k, r + k);
    mass.view_mut((0, 0), (r, r))
        .copy_from(&ell.l_uu(sigma, u, xi));
    mass.view_mut((0, r), (r, k))
        .copy_from(&ell.l_uxi(sigma, u, xi));
    mass.view_mut((r, 0), (k, r))
        .copy_from(&ell.l_xiu(sigma, u, xi));
    mass.view_mut((r, r), (k, k))
        .copy_from(&ell.l_xixi(sigma, u, xi));
    let mut c = DMatrix::zeros(mh + mv, r + k);
    if mh > 0 {
        c.view_mut((0, 0), (mh, r))
            .copy_from(&spec.delta_sigma.mu(sigma));
    }
    if mv > 0 {
        c.view_mut((mh, r), (mv, k))
            .copy_from(&spec.delta_g.mu(sigma));
    }
    let mut w = DVector::zeros(r + k);
    w.rows_mut(0, r).copy_from(u);
    w.rows_mut(r, k).copy_from(xi);
    let dim = r + k + mh + mv;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (r + k, r + k)).copy_from(&mass);
    kkt.view_mut((0, r + k), (r + k, mh + mv))
        .copy_from(&c.transpose());
    kkt.view_mut((r + k, 0), (mh + mv, r + k)).copy_from(&c);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(r + k, mh + mv).copy_from(&(&c * &w));
    let x = solve_saddle(&kkt, &rhs)?;
    let delta = x.rows(0, r + k).into_owned();
    Ok((
        u - delta.rows(0, r).into_owned(),
        xi - delta.rows(r, k).into_owned(),
    ))
}

/// Drives the reduced flow from `(σ0, u0, ξ0)` to `t_final` with impact
/// resolution on the shape-space boundary. Mirrors the full driver: samples on
/// the uniform grid, events strictly between samples.
#[allow(clippy::too_many_arguments)]
pub fn integrate_reduced(
    spec: &ReducedSystemSpec,
    t0: f64,
    sigma0: &DVector<f64>,
    u0: &DVector<f64>,
    xi0: &DVector<f64>,
    t_final: f64,
    opts: &IntegratorOptions,
    mode: LpMode,
) -> Result<ReducedTrajectory, SimError> {
    let b0 = spec.boundary.value(sigma0);
    if b0 > opts.boundary_tol {
        return Err(SimError::InvalidInitialState(format!(
            "initial shape point is outside the admissible region (b = {b0:.3e})"
        )));
    }
    if b0.abs() <= opts.boundary_tol && spec.boundary.gradient(sigma0).dot(u0) >= 0.0 {
        return Err(SimError::InvalidInitialState(
            "initial shape point lies on the boundary without inward velocity".into(),
        ));
    }
    let cres = spec.constraint_residual(sigma0, u0, xi0);
    if cres > opts.constraint_tol {
        return Err(SimError::InvalidInitialState(format!(
            "initial reduced velocity violates the constraints (residual {cres:.3e})"
        )));
    }
    spec.check_guard(sigma0)
        .map_err(|message| SimError::GuardViolated { t: t0, message })?;

    let make_state =
        |t: f64, s: &DVector<f64>, uu: &DVector<f64>, xx: &DVector<f64>| ReducedState {
            t,
            sigma: s.clone(),
            u: uu.clone(),
            y: spec.ell.d_u(s, uu, xx),
            xi: xx.clone(),
            rho: spec.ell.d_xi(s, uu, xx),
        };

    let mut traj = ReducedTrajectory::default();
    let state0 = make_state(t0, sigma0, u0, xi0);
    let d0 = lp_rhs(spec, sigma0, u0, xi0, mode).map_err(reduction_to_sim)?;
    traj.diagnostics.push(reduced_diagnostics(spec, &state0));
    traj.lambda_h.push(d0.lambda_h);
    traj.lambda_v.push(d0.lambda_v);
    traj.samples.push(state0);

    let mut sigma = sigma0.clone();
    let mut u = u0.clone();
    let mut xi = xi0.clone();
    let mut armed = b0 < -opts.boundary_tol;
    let mut last_event_t = f64::NEG_INFINITY;
    let n_steps = ((t_final - t0) / opts.h).ceil() as usize;

    for kstep in 0..n_steps {
        let t_grid = t0 + opts.h * kstep as f64;
        let t_target = (t_grid + opts.h).min(t_final);
        let mut t_cur = t_grid;

        loop {
            let dt = t_target - t_cur;
            if dt <= f64::EPSILON * (1.0 + t_target.abs()) {
                break;
            }
            let (s1, u1, x1, cons) =
                reduced_rk4(spec, &sigma, &u, &xi, dt, mode).map_err(SimError::Step)?;
            if let Some(c) = cons {
                traj.worst_vertical_consistency = traj.worst_vertical_consistency.max(c);
            }
            let segment = crate::integrator::HermiteSegment {
                t0: t_cur,
                t1: t_target,
                q0: sigma.clone(),
                v0: u.clone(),
                q1: s1.clone(),
                v1: u1.clone(),
            };
            match crate::impact::scan_crossing(&segment, &spec.boundary, opts.boundary_tol, armed) {
                None => {
                    sigma = s1;
                    u = u1;
                    xi = x1;
                    if !armed && spec.boundary.value(&sigma) < -opts.boundary_tol {
                        armed = true;
                    }
                    t_cur = t_target;
                }
                Some(t_star) => {
                    let (s_len, s_hit, mut u_hit, mut xi_hit) = refine_reduced_crossing(
                        spec,
                        &sigma,
                        &u,
                        &xi,
                        dt,
                        t_star - t_cur,
                        opts.boundary_tol,
                        mode,
                    )?;
                    let (pu, pxi) =
                        project_reduced(spec, &s_hit, &u_hit, &xi_hit).map_err(SimError::Step)?;
                    u_hit = pu;
                    xi_hit = pxi;
                    let t_hit = t_cur + s_len;
                    let approach = spec.boundary.gradient(&s_hit).dot(&u_hit);
                    if approach.abs() <= 1e-8 * (1.0 + u_hit.abs().max()) {
                        log::warn!(
                            "reduced grazing contact at t = {t_hit:.6}: db·u = {approach:.3e}"
                        );
                        traj.grazing_count += 1;
                        sigma = s_hit;
                        u = u_hit;
                        xi = xi_hit;
                        t_cur = t_hit;
                        armed = false;
                        continue;
                    }
                    let record =
                        reduced_impact_map(spec, &s_hit, &u_hit, &xi_hit, t_hit, &opts.impact)?;
                    if t_hit - last_event_t < opts.zeno.min_interimpact_time {
                        return Err(SimError::ZenoSuspected(format!(
                            "inter-impact time {:.3e} below threshold at t = {t_hit:.6}",
                            t_hit - last_event_t
                        )));
                    }
                    sigma = record.sigma.clone();
                    u = record.u_plus.clone();
                    xi = record.xi_plus.clone();
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

        let (pu, pxi) = project_reduced(spec, &sigma, &u, &xi).map_err(SimError::Step)?;
        u = pu;
        xi = pxi;
        let residual = spec.constraint_residual(&sigma, &u, &xi);
        if residual > opts.constraint_tol {
            return Err(SimError::Step(StepError::ConstraintDriftExceeded {
                residual,
                tol: opts.constraint_tol,
            }));
        }
        let b = spec.boundary.value(&sigma);
        if b > opts.boundary_tol {
            return Err(SimError::BoundaryViolation { t: t_target, b });
        }
        spec.check_guard(&sigma)
            .map_err(|message| SimError::GuardViolated {
                t: t_target,
                message,
            })?;

        let state = make_state(t_target, &sigma, &u, &xi);
        let d = lp_rhs(spec, &sigma, &u, &xi, mode).map_err(reduction_to_sim)?;
        if let Some(c) = d.vertical_consistency {
            traj.worst_vertical_consistency = traj.worst_vertical_consistency.max(c);
        }
        traj.diagnostics.push(reduced_diagnostics(spec, &state));
        traj.lambda_h.push(d.lambda_h);
        traj.lambda_v.push(d.lambda_v);
        traj.samples.push(state);
    }

    Ok(traj)
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn refine_reduced_crossing(
    spec: &ReducedSystemSpec,
    sigma: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    dt: f64,
    s_guess: f64,
    boundary_tol: f64,
    mode: LpMode,
) -> Result<(f64, DVector<f64>, DVector<f64>, DVector<f64>), SimError> {
    type EvalOut = (f64, DVector<f64>, DVector<f64>, DVector<f64>);
    let eval = |s: f64| -> Result<EvalOut, SimError> {
        if s <= 0.0 {
            return Ok((
                spec.boundary.value(sigma),
                sigma.clone(),
                u.clone(),
                xi.clone(),
            ));
        }
        let (ss, us, xs, _) = reduced_rk4(spec, sigma, u, xi, s, mode).map_err(SimError::Step)?;
        Ok((spec.boundary.value(&ss), ss, us, xs))
    };
    let mut lo = 0.0;
    let mut b_lo = eval(lo)?.0;
    let mut hi = s_guess.min(dt);
    let mut out = eval(hi)?;
    let mut expand = 0;
    while out.0 <= 0.0 && hi < dt && expand < 60 {
        lo = hi;
        b_lo = out.0;
        hi = (hi + 0.1 * dt).min(dt);
        out = eval(hi)?;
        expand += 1;
    }
    if out.0 <= 0.0 {
        return Ok((hi, out.1, out.2, out.3));
    }
    let mut s_best = hi;
    for _ in 0..80 {
        if out.0.abs() <= 0.1 * boundary_tol {
            break;
        }
        let denom = out.0 - b_lo;
        let mut s_next = if denom.abs() > 0.0 {
            s_best - out.0 * (s_best - lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(s_next > lo && s_next < hi) {
            s_next = 0.5 * (lo + hi);
        }
        let trial = eval(s_next)?;
        if trial.0 > 0.0 {
            hi = s_next;
        } else {
            lo = s_next;
            b_lo = trial.0;
        }
        s_best = s_next;
        out = trial;
        if hi - lo < f64::EPSILON * (1.0 + dt) {
            break;
        }
    }
    Ok((s_best, out.1, out.2, out.3))
}

/// Group path produced by reconstruction.
#[derive(Debug, Clone)]
pub enum GroupPath {
    /// Abelian case: group coordinates obtained by quadrature.
    Abelian(Vec<DVector<f64>>),
    /// Matrix-group case: elements obtained by exponential stepping.
    Matrix(Vec<DMatrix<f64>>),
}

/// One-sided body velocities at an impact time; reconstruction splits its
/// quadrature stencils here since `w` is discontinuous across the reset.
#[derive(Debug, Clone)]
pub struct VelocityJump {
    pub t: f64,
    pub w_minus: DVector<f64>,
    pub w_plus: DVector<f64>,
}

/// Body velocities `w = ξ + A(σ)·u` along a reduced trajectory.
pub fn body_velocities(conn_a: Option<&MatrixFn>, samples: &[ReducedState]) -> Vec<DVector<f64>> {
    samples
        .iter()
        .map(|s| match conn_a {
            Some(a) => &s.xi + a(&s.sigma) * &s.u,
            None => s.xi.clone(),
        })
        .collect()
}

/// One-sided body velocities from the reduced event log.
pub fn velocity_jumps(
    conn_a: Option<&MatrixFn>,
    events: &[ReducedImpactRecord],
) -> Vec<VelocityJump> {
    events
        .iter()
        .map(|ev| {
            let a = conn_a.map(|f| f(&ev.sigma));
            let w = |u: &DVector<f64>, xi: &DVector<f64>| match &a {
                Some(a) => xi + a * u,
                None => xi.clone(),
            };
            VelocityJump {
                t: ev.t_impact,
                w_minus: w(&ev.u_minus, &ev.xi_minus),
                w_plus: w(&ev.u_plus, &ev.xi_plus),
            }
        })
        .collect()
}

/// Reconstructs the group trajectory from sampled body velocities by solving
/// `ġ = g·(ξ + A(σ)·σ̇)`; abelian algebras use fourth-order quadrature, matrix
/// groups a Runge–Kutta–Munthe-Kaas step with the exponential of the stage
/// increment. Quadrature stencils never straddle an impact time.
pub fn reconstruct(
    alg: &LieAlgebraSpec,
    ts: &[f64],
    ws: &[DVector<f64>],
    jumps: &[VelocityJump],
    g0_abelian: Option<&DVector<f64>>,
    g0_matrix: Option<&DMatrix<f64>>,
) -> Result<GroupPath, ReductionError> {
    if alg.is_abelian() {
        let g0 = g0_abelian.cloned().unwrap_or_else(|| DVector::zeros(alg.k));
        Ok(GroupPath::Abelian(reconstruct_abelian_with_events(
            ts, ws, jumps, &g0,
        )))
    } else {
        let gens = alg
            .generators
            .as_ref()
            .ok_or(ReductionError::MissingGenerators)?;
        let d = gens[0].nrows();
        let g0 = g0_matrix
            .cloned()
            .unwrap_or_else(|| DMatrix::identity(d, d));
        reconstruct_matrix(alg, ts, ws, &g0)
    }
}

/// Cumulative fourth-order quadrature of `w(t)` on a smooth grid.
pub fn reconstruct_abelian(
    ts: &[f64],
    ws: &[DVector<f64>],
    g0: &DVector<f64>,
) -> Vec<DVector<f64>> {
    reconstruct_abelian_with_events(ts, ws, &[], g0)
}

/// Cumulative quadrature of a piecewise-smooth `w(t)`: intervals without an
/// impact integrate the cubic through in-arc samples; intervals containing
/// impact times are split there, using the recorded one-sided velocities as
/// extra interpolation nodes.
pub fn reconstruct_abelian_with_events(
    ts: &[f64],
    ws: &[DVector<f64>],
    jumps: &[VelocityJump],
    g0: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let n = ts.len();
    let mut out = Vec::with_capacity(n);
    let mut acc = g0.clone();
    out.push(acc.clone());
    if n < 2 {
        return out;
    }
    // Arc id per sample: increases after each jump time.
    let mut arc_id = vec![0usize; n];
    for (i, &t) in ts.iter().enumerate() {
        arc_id[i] = jumps.iter().filter(|j| j.t <= t).count();
    }
    // Sample index ranges per arc.
    let n_arcs = arc_id[n - 1] + 1;
    let mut arc_range = vec![(usize::MAX, 0usize); n_arcs];
    for (i, &a) in arc_id.iter().enumerate() {
        let r = &mut arc_range[a];
        r.0 = r.0.min(i);
        r.1 = r.1.max(i);
    }

    for i in 0..n - 1 {
        let (t0, t1) = (ts[i], ts[i + 1]);
        let inside: Vec<&VelocityJump> = jumps.iter().filter(|j| j.t > t0 && j.t < t1).collect();
        if inside.is_empty() {
            let (a, b) = arc_range[arc_id[i]];
            let nodes = in_arc_nodes(ts, ws, a, b, i);
            acc += integrate_nodes(&nodes, t0, t1);
        } else {
            // Leading piece: trailing samples of the left arc plus the
            // pre-impact velocity at the first jump.
            let (a, _) = arc_range[arc_id[i]];
            let mut nodes: Vec<(f64, DVector<f64>)> = (a.max(i.saturating_sub(2))..=i)
                .map(|j| (ts[j], ws[j].clone()))
                .collect();
            nodes.push((inside[0].t, inside[0].w_minus.clone()));
            acc += integrate_nodes(&nodes, t0, inside[0].t);
            // Pieces between consecutive jumps carry no samples: trapezoid on
            // the one-sided velocities.
            for pair in inside.windows(2) {
                let nodes = vec![
                    (pair[0].t, pair[0].w_plus.clone()),
                    (pair[1].t, pair[1].w_minus.clone()),
                ];
                acc += integrate_nodes(&nodes, pair[0].t, pair[1].t);
            }
            // Trailing piece: post-impact velocity plus leading samples of the
            // right arc.
            let last = inside.last().unwrap();
            let (_, b) = arc_range[arc_id[i + 1]];
            let mut nodes = vec![(last.t, last.w_plus.clone())];
            nodes.extend(((i + 1)..=b.min(i + 3)).map(|j| (ts[j], ws[j].clone())));
            acc += integrate_nodes(&nodes, last.t, t1);
        }
        out.push(acc.clone());
    }
    out
}

/// Up to four sample nodes inside `[a, b]` surrounding interval `i → i+1`.
fn in_arc_nodes(
    ts: &[f64],
    ws: &[DVector<f64>],
    a: usize,
    b: usize,
    i: usize,
) -> Vec<(f64, DVector<f64>)> {
    let lo = if b - a < 3 {
        a
    } else {
        i.saturating_sub(1).clamp(a, b - 3)
    };
    let hi = (lo + 3).min(b);
    (lo..=hi).map(|j| (ts[j], ws[j].clone())).collect()
}

/// Integrates the Lagrange interpolant through `nodes` over `[a, b]` with
/// two-point Gauss quadrature (exact for cubics).
fn integrate_nodes(nodes: &[(f64, DVector<f64>)], a: f64, b: f64) -> DVector<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let node = half / 3.0f64.sqrt();
    let w1 = eval_lagrange_nodes(nodes, mid - node);
    let w2 = eval_lagrange_nodes(nodes, mid + node);
    half * (w1 + w2)
}

fn eval_lagrange_nodes(nodes: &[(f64, DVector<f64>)], t: f64) -> DVector<f64> {
    let mut out = DVector::zeros(nodes[0].1.len());
    for (i, (ti, wi)) in nodes.iter().enumerate() {
        let mut basis = 1.0;
        for (j, (tj, _)) in nodes.iter().enumerate() {
            if i != j {
                basis *= (t - tj) / (ti - tj);
            }
        }
        out += basis * wi;
    }
    out
}

fn eval_lagrange(ts: &[f64], ws: &[DVector<f64>], stencil: &[usize], t: f64) -> DVector<f64> {
    let nodes: Vec<(f64, DVector<f64>)> = stencil.iter().map(|&i| (ts[i], ws[i].clone())).collect();
    eval_lagrange_nodes(&nodes, t)
}

fn stencil_around(i: usize, n: usize) -> Vec<usize> {
    if n <= 4 {
        return (0..n).collect();
    }
    let lo = i.saturating_sub(1).min(n - 4);
    (lo..lo + 4).collect()
}

/// RKMK4 reconstruction for `ġ = g·ŵ(t)`: per step integrate
/// `θ̇ = w + ½[θ, w] + 1/12 [θ, [θ, w]]` with classical RK4 (stage values of
/// `w` from cubic interpolation of the samples) and set
/// `g_{n+1} = g_n · exp(θ̂)`.
pub fn reconstruct_matrix(
    alg: &LieAlgebraSpec,
    ts: &[f64],
    ws: &[DVector<f64>],
    g0: &DMatrix<f64>,
) -> Result<GroupPath, ReductionError> {
    let n = ts.len();
    let mut out = Vec::with_capacity(n);
    let mut g = g0.clone();
    out.push(g.clone());
    for i in 0..n.saturating_sub(1) {
        let stencil = stencil_around(i, n);
        let w_at = |t: f64| eval_lagrange(ts, ws, &stencil, t);
        let h = ts[i + 1] - ts[i];
        let dexpinv = |theta: &DVector<f64>, w: &DVector<f64>| -> DVector<f64> {
            let b1 = alg.bracket(theta, w);
            let b2 = alg.bracket(theta, &b1);
            w + 0.5 * b1 + b2 / 12.0
        };
        let t = ts[i];
        let w1 = w_at(t);
        let k1 = dexpinv(&DVector::zeros(alg.k), &w1);
        let wm = w_at(t + 0.5 * h);
        let k2 = dexpinv(&(0.5 * h * &k1), &wm);
        let k3 = dexpinv(&(0.5 * h * &k2), &wm);
        let w4 = w_at(t + h);
        let k4 = dexpinv(&(h * &k3), &w4);
        let theta = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        g = &g * alg.hat(&theta)?.exp();
        out.push(g.clone());
    }
    Ok(GroupPath::Matrix(out))
}
