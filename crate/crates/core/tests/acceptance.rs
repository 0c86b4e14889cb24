//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see the
//! per-criterion lines and enforce the runtime budgets (wall-clock assertions
//! are skipped in debug builds).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nonsmooth_nh::audit::{audit_equivalence, audit_trajectory, Tolerances};
use nonsmooth_nh::impact::{jump_containment_residual, reset_separation, zeno_guard, ZenoPolicy};
use nonsmooth_nh::integrator::{integrate, IntegratorOptions, Trajectory};
use nonsmooth_nh::lagrangian::energy;
use nonsmooth_nh::reduction::{ad_star, integrate_eps, integrate_reduced, LpMode};
use nonsmooth_nh::scenarios::{self, BilliardParams, DiskParams, PendulumParams, SuslovParams};

fn pass(criterion: &str, detail: String) {
    println!("ACCEPTANCE {criterion}: PASS ({detail})");
}

fn check_runtime(criterion: &str, started: Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    if cfg!(debug_assertions) {
        println!("ACCEPTANCE {criterion}: runtime {elapsed:.2}s (budget {budget_s}s not enforced in debug builds)");
    } else {
        assert!(
            elapsed < budget_s,
            "ACCEPTANCE {criterion}: FAIL (runtime {elapsed:.2}s exceeds {budget_s}s)"
        );
    }
}

fn impact_pendulum_params() -> PendulumParams {
    // Wall radius below the pendulum length so the boundary is reachable;
    // the bouncing band stays clear of both chart poles.
    PendulumParams {
        cylinder_radius: 0.8,
        ..PendulumParams::default()
    }
}

fn run_disk(h: f64, t_final: f64) -> (nonsmooth_nh::SystemSpec, Trajectory) {
    let b = scenarios::build_rolling_disk(&DiskParams::default()).unwrap();
    let traj = integrate(
        &b.system,
        &b.initial_state(),
        t_final,
        &IntegratorOptions::with_step(h),
    )
    .unwrap();
    (b.system, traj)
}

fn run_pendulum(h: f64, t_final: f64) -> (nonsmooth_nh::SystemSpec, Trajectory) {
    let b = scenarios::build_spherical_pendulum(&impact_pendulum_params()).unwrap();
    let traj = integrate(
        &b.system,
        &b.initial_state(),
        t_final,
        &IntegratorOptions::with_step(h),
    )
    .unwrap();
    (b.system, traj)
}

/// Criterion 1: every resolved free-billiard impact matches closed-form
/// specular reflection to 1e-9 componentwise, over 20 random initial
/// conditions.
#[test]
fn criterion_01_billiard_reflection_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    let mut impacts = 0usize;
    for _ in 0..20 {
        let radius = 0.7 * rng.random::<f64>().sqrt();
        let angle = std::f64::consts::TAU * rng.random::<f64>();
        let speed = 0.5 + 1.5 * rng.random::<f64>();
        let dir = std::f64::consts::TAU * rng.random::<f64>();
        let params = BilliardParams {
            x0: radius * angle.cos(),
            y0: radius * angle.sin(),
            vx0: speed * dir.cos(),
            vy0: speed * dir.sin(),
            t_final: 10.0,
            h: 1e-3,
        };
        let b = scenarios::build_free_billiard(&params).unwrap();
        let traj = integrate(
            &b.system,
            &b.initial_state(),
            params.t_final,
            &IntegratorOptions::with_step(params.h),
        )
        .unwrap();
        assert!(!traj.events.is_empty(), "billiard run produced no impacts");
        for ev in &traj.events {
            impacts += 1;
            let db = b.system.boundary.gradient(&ev.q);
            let n = &db / db.norm();
            let oracle = &ev.v_minus - 2.0 * ev.v_minus.dot(&n) * &n;
            worst = worst.max((&ev.v_plus - oracle).abs().max());
        }
    }
    assert!(
        worst <= 1e-9,
        "ACCEPTANCE C1 billiard-reflection: FAIL (max error {worst:.3e})"
    );
    check_runtime("C1", started, 5.0);
    pass(
        "C1 billiard-reflection",
        format!("{impacts} impacts, max error {worst:.3e}"),
    );
}

/// Criterion 2: relative energy drift <= 1e-7 between impacts and
/// |e+ - e-| <= 1e-10 at every impact, on both paper scenarios over t in
/// [0, 10] with h = 1e-3.
#[test]
fn criterion_02_energy_conservation() {
    let started = Instant::now();
    let tol = Tolerances::default();
    let mut details = Vec::new();
    for (name, (sys, traj)) in [
        ("rolling_disk", run_disk(1e-3, 10.0)),
        ("spherical_pendulum", run_pendulum(1e-3, 10.0)),
    ] {
        assert!(!traj.events.is_empty(), "{name}: no impacts in 10 s");
        // Event times fall strictly between adjacent samples.
        for ev in &traj.events {
            let after = traj
                .samples
                .iter()
                .position(|s| s.t >= ev.t_impact)
                .unwrap();
            assert!(after > 0 && traj.samples[after - 1].t < ev.t_impact);
            assert!(traj.samples[after].t > ev.t_impact);
        }
        let report = audit_trajectory(&sys, &traj, &tol).unwrap();
        assert!(
            report.passed(),
            "ACCEPTANCE C2 energy-conservation: FAIL ({name} audit: {report:?})"
        );
        let drift = report.check("energy_drift").unwrap();
        let jump = report.check("energy_jump").unwrap();
        details.push(format!(
            "{name}: {} impacts, drift {:.2e}, jump {:.2e}",
            traj.events.len(),
            drift.worst,
            jump.worst
        ));
    }
    check_runtime("C2", started, 30.0);
    pass("C2 energy-conservation", details.join("; "));
}

/// Criterion 3: max |mu(q) v| over all samples <= 1e-8 on both paper
/// scenarios.
#[test]
fn criterion_03_constraint_satisfaction() {
    let mut details = Vec::new();
    for (name, (sys, traj)) in [
        ("rolling_disk", run_disk(1e-3, 10.0)),
        ("spherical_pendulum", run_pendulum(1e-3, 10.0)),
    ] {
        let worst = traj
            .samples
            .iter()
            .map(|s| sys.constraint_residual(&s.q, &s.v))
            .fold(0.0f64, f64::max);
        assert!(
            worst <= 1e-8,
            "ACCEPTANCE C3 constraint-satisfaction: FAIL ({name} residual {worst:.3e})"
        );
        details.push(format!("{name}: {worst:.2e}"));
    }
    pass("C3 constraint-satisfaction", details.join("; "));
}

/// Criterion 4: least-squares residual of (p+ - p-) against span{db, mu rows}
/// <= 1e-9 at every impact of both paper scenarios.
#[test]
fn criterion_04_jump_containment() {
    let mut details = Vec::new();
    for (name, (sys, traj)) in [
        ("rolling_disk", run_disk(1e-3, 10.0)),
        ("spherical_pendulum", run_pendulum(1e-3, 10.0)),
    ] {
        assert!(!traj.events.is_empty());
        let mut worst = 0.0f64;
        for ev in &traj.events {
            let db = sys.boundary.gradient(&ev.q);
            let mu = sys.distribution.mu(&ev.q);
            let dp = &ev.p_plus - &ev.p_minus;
            let r = jump_containment_residual(&dp, &db, &mu) / (1.0 + dp.abs().max());
            worst = worst.max(r);
        }
        assert!(
            worst <= 1e-9,
            "ACCEPTANCE C4 jump-containment: FAIL ({name} residual {worst:.3e})"
        );
        details.push(format!("{name}: {worst:.2e}"));
    }
    pass("C4 jump-containment", details.join("; "));
}

/// Criterion 5: spherical_pendulum vs reduced_pendulum from matched initial
/// data, h = 1e-4, horizon containing exactly one impact; sup-norm deviation
/// of (theta, v_theta, xi, rho) and of the reconstructed phi <= 1e-5.
///
/// This criterion compares the constrained pendulum against the reduced
/// system in its published trivial-connection form, whose vertical equation
/// conserves rho while the full constrained flow does not (the constraint
/// force has a vertical component). The two flows therefore separate at
/// order one and the stated tolerance cannot be met by any integrator; see
/// `reduction::tests::adapted_connection_reduction_tracks_full_pendulum_through_impact`
/// for the constraint-adapted formulation, which this code base tracks to
/// 1e-6 through the impact. The criterion is implemented as stated and the
/// measured deviations are reported.
#[test]
fn criterion_05_reduction_equivalence() {
    let started = Instant::now();
    let params = impact_pendulum_params();
    let full = scenarios::build_spherical_pendulum(&params).unwrap();
    let opts = IntegratorOptions::with_step(1e-4);
    let t_final = 0.8; // first impact at t ~ 0.423, second near 1.27
    let traj = integrate(&full.system, &full.initial_state(), t_final, &opts).unwrap();
    assert_eq!(
        traj.events.len(),
        1,
        "horizon must contain exactly one impact"
    );

    let red = scenarios::build_reduced_pendulum(&params).unwrap();
    let rtraj = integrate_reduced(
        &red.spec,
        0.0,
        &red.sigma0,
        &red.u0,
        &red.xi0,
        t_final,
        &opts,
        LpMode::WellPosed,
    )
    .unwrap();
    let layout = full.layout.clone().unwrap();
    let (report, metrics) =
        audit_equivalence(&layout, &traj, &rtraj, &Tolerances::default()).unwrap();
    check_runtime("C5", started, 60.0);
    let sup_state = metrics
        .sup_sigma
        .max(metrics.sup_u)
        .max(metrics.sup_xi)
        .max(metrics.sup_rho);
    assert!(
        report.passed(),
        "ACCEPTANCE C5 reduction-equivalence: FAIL (sup state deviation {:.3e}, reconstructed \
         group deviation {:.3e}, tolerance 1e-5; the reduced_pendulum model conserves rho while \
         the constrained flow does not, so the flows separate at order one -- see README \
         'Known red' and the adapted-connection formulation, which tracks the full dynamics)",
        sup_state,
        metrics.sup_group,
    );
    pass(
        "C5 reduction-equivalence",
        format!("sup state {sup_state:.3e}, group {:.3e}", metrics.sup_group),
    );
}

/// Criterion 6: |rho(t) - rho(0)| <= 1e-8 between impacts on the reduced
/// pendulum.
#[test]
fn criterion_06_reduced_vertical_law() {
    let params = PendulumParams {
        xi0: Some(0.6),
        ..impact_pendulum_params()
    };
    let red = scenarios::build_reduced_pendulum(&params).unwrap();
    let rtraj = integrate_reduced(
        &red.spec,
        0.0,
        &red.sigma0,
        &red.u0,
        &red.xi0,
        10.0,
        &IntegratorOptions::with_step(1e-3),
        LpMode::WellPosed,
    )
    .unwrap();
    assert!(!rtraj.events.is_empty(), "no impacts in the reduced run");
    // Arc-wise drift of the vertical momentum.
    let event_times: Vec<f64> = rtraj.events.iter().map(|e| e.t_impact).collect();
    let mut worst = 0.0f64;
    let mut arc_start = 0usize;
    let times: Vec<f64> = rtraj.samples.iter().map(|s| s.t).collect();
    for i in 0..times.len() {
        let crossed = i > 0
            && event_times
                .iter()
                .any(|&te| te > times[i - 1] && te <= times[i]);
        if crossed {
            arc_start = i;
        }
        let drift = (&rtraj.samples[i].rho - &rtraj.samples[arc_start].rho)
            .abs()
            .max();
        worst = worst.max(drift);
    }
    assert!(
        worst <= 1e-8,
        "ACCEPTANCE C6 reduced-vertical-law: FAIL (rho drift {worst:.3e})"
    );
    pass(
        "C6 reduced-vertical-law",
        format!("{} impacts, rho drift {worst:.2e}", rtraj.events.len()),
    );
}

/// Criterion 7: the free rigid body on so(3) conserves |mu|^2 to 1e-9 over
/// t = 10, h = 1e-3; the Suslov run keeps xi3 = 0 to 1e-10 with containment
/// residual of mu_dot - ad*_xi mu inside d-annihilator <= 1e-9.
#[test]
fn criterion_07_euler_poincare_suslov() {
    let free = scenarios::build_rigid_body_suslov(&SuslovParams {
        suslov: false,
        xi0: [0.35, -0.6, 0.45],
        ..SuslovParams::default()
    })
    .unwrap();
    let traj = integrate_eps(
        &free.algebra,
        &free.lagrangian,
        &free.constraint,
        &free.xi0,
        10.0,
        1e-3,
    )
    .unwrap();
    let c0 = traj.mus[0].norm_squared();
    let casimir_drift = traj
        .mus
        .iter()
        .map(|m| (m.norm_squared() - c0).abs())
        .fold(0.0f64, f64::max);
    assert!(
        casimir_drift <= 1e-9,
        "ACCEPTANCE C7 euler-poincare-suslov: FAIL (Casimir drift {casimir_drift:.3e})"
    );

    let suslov = scenarios::build_rigid_body_suslov(&SuslovParams::default()).unwrap();
    let traj = integrate_eps(
        &suslov.algebra,
        &suslov.lagrangian,
        &suslov.constraint,
        &suslov.xi0,
        10.0,
        1e-3,
    )
    .unwrap();
    let xi3 = traj.xis.iter().map(|x| x[2].abs()).fold(0.0f64, f64::max);
    assert!(
        xi3 <= 1e-10,
        "ACCEPTANCE C7 euler-poincare-suslov: FAIL (xi3 drift {xi3:.3e})"
    );
    // Containment of the discrete momentum law in the annihilator of the
    // reduced constraint: fit against d-degree rows, measure what is left.
    let rows = suslov.constraint.mu(&traj.xis[0]);
    let h = 1e-3;
    let mut containment = 0.0f64;
    for i in 2..traj.ts.len() - 2 {
        let mu_dot = (&traj.mus[i - 2] - 8.0 * &traj.mus[i - 1] + 8.0 * &traj.mus[i + 1]
            - &traj.mus[i + 2])
            / (12.0 * h);
        let residual = mu_dot - ad_star(&suslov.algebra, &traj.xis[i], &traj.mus[i]);
        let gram = &rows * rows.transpose();
        let c = gram.full_piv_lu().solve(&(&rows * &residual)).unwrap();
        containment = containment.max((rows.transpose() * c - residual).abs().max());
    }
    assert!(
        containment <= 1e-9,
        "ACCEPTANCE C7 euler-poincare-suslov: FAIL (containment {containment:.3e})"
    );
    pass(
        "C7 euler-poincare-suslov",
        format!("Casimir drift {casimir_drift:.2e}, xi3 {xi3:.2e}, containment {containment:.2e}"),
    );
}

/// Criterion 8: the reset-map separation identity |R(v) - v|_g = 2|v_perp|_g
/// holds to 1e-12 on 100 random boundary samples, and the Zeno guard passes
/// on all scenario runs.
#[test]
fn criterion_08_zeno_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let billiard = scenarios::build_free_billiard(&BilliardParams::default()).unwrap();
    let disk = scenarios::build_rolling_disk(&DiskParams::default()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..100 {
        if i % 2 == 0 {
            // Unit-circle billiard boundary, Euclidean metric.
            let a = std::f64::consts::TAU * rng.random::<f64>();
            let q = DVector::from_row_slice(&[a.cos(), a.sin()]);
            let v = DVector::from_row_slice(&[
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
            ]);
            let sep = reset_separation(&billiard.system, &q, &v, 1e-9).unwrap();
            // Independent evaluation: reflect, then measure in the metric.
            let n = &q / q.norm();
            let reflected = &v - 2.0 * v.dot(&n) * &n;
            let direct = (&reflected - &v).norm();
            worst = worst.max((sep - direct).abs());
        } else {
            // Disk boundary point; kinetic metric diag(m, m, I, J).
            let params = DiskParams::default();
            let a = std::f64::consts::TAU * rng.random::<f64>();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let q = DVector::from_row_slice(&[
                a.cos() - params.radius * phi.cos(),
                a.sin() - params.radius * phi.sin(),
                rng.random::<f64>(),
                phi,
            ]);
            let v = DVector::from_row_slice(&[
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
            ]);
            let sep = reset_separation(&disk.system, &q, &v, 1e-9).unwrap();
            let g = DMatrix::from_diagonal(&DVector::from_row_slice(&[
                params.mass,
                params.mass,
                params.inertia_rolling,
                params.inertia_heading,
            ]));
            let db = disk.system.boundary.gradient(&q);
            let ginv_db = g.clone().cholesky().unwrap().solve(&db);
            let nhat = &ginv_db / (db.dot(&ginv_db)).sqrt();
            let vperp = (v.transpose() * &g * &nhat)[(0, 0)].abs();
            worst = worst.max((sep - 2.0 * vperp).abs());
        }
    }
    assert!(
        worst <= 1e-12,
        "ACCEPTANCE C8 zeno-identities: FAIL (identity residual {worst:.3e})"
    );

    let policy = ZenoPolicy::default();
    for (name, traj) in [
        ("rolling_disk", run_disk(1e-3, 10.0).1),
        ("spherical_pendulum", run_pendulum(1e-3, 10.0).1),
    ] {
        assert!(
            zeno_guard(&traj.events, &policy).is_ok(),
            "ACCEPTANCE C8 zeno-identities: FAIL (zeno guard on {name})"
        );
    }
    pass(
        "C8 zeno-identities",
        format!("identity residual {worst:.2e}"),
    );
}

/// Criterion 9: terminal-state error against a fine reference shrinks by
/// 16x (+-30%) under h -> h/2, three halvings, on the smooth pendulum
/// fixture.
#[test]
fn criterion_09_convergence_order() {
    let params = PendulumParams {
        cylinder_radius: 1.0, // boundary unreachable: smooth arc
        ..PendulumParams::default()
    };
    let b = scenarios::build_spherical_pendulum(&params).unwrap();
    let t_final = 0.32;
    let state0 = b.initial_state();
    let terminal = |h: f64| {
        let traj = integrate(
            &b.system,
            &state0,
            t_final,
            &IntegratorOptions::with_step(h),
        )
        .unwrap();
        let last = traj.samples.last().unwrap().clone();
        assert!((last.t - t_final).abs() < 1e-12);
        (last.q, last.v)
    };
    let (q_ref, v_ref) = terminal(1e-4);
    let error = |h: f64| {
        let (q, v) = terminal(h);
        (q - &q_ref).abs().max().max((v - &v_ref).abs().max())
    };
    // Coarsest step chosen so the reference error is negligible against the
    // finest measured error.
    let hs = [1.6e-2, 8e-3, 4e-3, 2e-3];
    let errs: Vec<f64> = hs.iter().map(|&h| error(h)).collect();
    let mut ratios = Vec::new();
    for w in errs.windows(2) {
        ratios.push(w[0] / w[1]);
    }
    for (i, r) in ratios.iter().enumerate() {
        assert!(
            (11.2..=20.8).contains(r),
            "ACCEPTANCE C9 convergence-order: FAIL (halving {i}: ratio {r:.2} outside 16 +-30%; \
             errors {errs:?})"
        );
    }
    pass(
        "C9 convergence-order",
        format!(
            "ratios {:.1} / {:.1} / {:.1}",
            ratios[0], ratios[1], ratios[2]
        ),
    );
}

/// Criterion 10: two identical CLI invocations produce byte-identical CSV and
/// JSONL outputs.
#[test]
fn criterion_10_determinism() {
    let bin = env!("CARGO_BIN_EXE_nonsmooth-nh");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let status = std::process::Command::new(bin)
            .args([
                "--scenario",
                "free_billiard",
                "--t-final",
                "3.0",
                "--seed",
                "11",
                "--audit",
                "--out-dir",
            ])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["trajectory.csv", "events.jsonl", "audit.json"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(
            a, b,
            "ACCEPTANCE C10 determinism: FAIL ({file} differs between identical invocations)"
        );
    }
    pass(
        "C10 determinism",
        "CSV, JSONL and audit bytes identical".into(),
    );
}

/// Energy bookkeeping shared by criteria 2 and 4 stays consistent with the
/// spec's energy definition.
#[test]
fn energy_definition_cross_check() {
    let (sys, traj) = run_pendulum(1e-3, 1.0);
    for s in traj.samples.iter().step_by(100) {
        let e = energy(&sys.lagrangian, &s.q, &s.v, &s.p);
        let classical = s.p.dot(&s.v) - sys.lagrangian.value(&s.q, &s.v);
        assert!((e - classical).abs() <= 1e-12);
    }
}
