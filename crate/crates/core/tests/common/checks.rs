//! Oracle comparisons shared by the per-module tests and the acceptance
//! report. Each check returns a one-line summary on success and the first
//! failure otherwise.

#![allow(dead_code)]

use std::time::Instant;

use issf_wbc::dynwbc::{solve_dynwbc, ContactBlock, DynWbcConfig, DynWbcInput};
use issf_wbc::geometry::{barrier_jacobian, closest_points, segment_parameters, CollisionBody, Primitive};
use issf_wbc::kinwbc::{pinv_above, prioritized_velocities, RELATIVE_SINGULAR_CUTOFF};
use issf_wbc::model::{default_gravity, RobotModel};
use issf_wbc::qpsolve::{QpProblem, QpSolver, QpStatus};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::qp_oracle::{enumerate, OracleProblem};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn oracle(p: &QpProblem) -> Option<DVector<f64>> {
    enumerate(&OracleProblem {
        h: &p.h,
        g: &p.g,
        a_ineq: &p.a_ineq,
        b_ineq: &p.b_ineq,
        a_eq: &p.a_eq,
        b_eq: &p.b_eq,
    })
}

/// Strictly convex instance whose inequalities all hold at a hidden point.
pub fn feasible_instance(rng: &mut impl Rng, n: usize, m: usize, n_eq: usize) -> (QpProblem, DVector<f64>) {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &x0 - DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    let mut p = QpProblem::new(h, g).with_inequalities(a, b);
    if n_eq > 0 {
        let ae = DMatrix::from_fn(n_eq, n, |_, _| rng.random_range(-1.0..1.0));
        let be = &ae * &x0;
        p = p.with_equalities(ae, be);
    }
    (p, x0)
}

/// Small random QPs against exhaustive active-set enumeration.
pub fn qp_matches_enumeration(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(90210);
    let mut solver = QpSolver::new();
    let (mut worst_err, mut worst_kkt) = (0.0_f64, 0.0_f64);
    for k in 0..instances {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(0..=6);
        let n_eq = rng.random_range(0..n);
        let (p, _) = feasible_instance(&mut rng, n, m, n_eq);
        let s = solver.solve(&p, None).map_err(|e| format!("instance {k}: {e}"))?;
        ensure!(s.status == QpStatus::Optimal, "instance {k}: status {:?}", s.status);
        let x = oracle(&p).ok_or_else(|| format!("instance {k}: oracle found no feasible point"))?;
        worst_err = worst_err.max((&s.x - &x).amax());
        worst_kkt = worst_kkt.max(s.kkt_residual);
        ensure!(worst_err < 1e-6, "instance {k}: solver {} oracle {}", s.x, x);
        ensure!(worst_kkt < 1e-6, "instance {k}: KKT residual {}", s.kkt_residual);
    }
    Ok(format!(
        "{instances} instances, max error {worst_err:.1e}, max KKT residual {worst_kkt:.1e}"
    ))
}

/// Every optimal return over a mixed feasible/infeasible batch has a small
/// KKT residual.
pub fn qp_optimal_returns_are_kkt_points(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut solver = QpSolver::new();
    let (mut optimal, mut worst) = (0, 0.0_f64);
    for k in 0..instances {
        let n = rng.random_range(1..=12);
        let m = rng.random_range(0..=40);
        let (mut p, _) = feasible_instance(&mut rng, n, m, 0);
        if rng.random_bool(0.2) {
            // push some rows past each other so a share of instances is infeasible
            p.b_ineq.iter_mut().for_each(|b| *b += rng.random_range(0.0..3.0));
        }
        let s = solver.solve(&p, None).map_err(|e| format!("instance {k}: {e}"))?;
        if s.is_optimal() {
            optimal += 1;
            worst = worst.max(s.kkt_residual);
            ensure!(s.kkt_residual < 1e-6, "instance {k}: KKT residual {}", s.kkt_residual);
            ensure!(s.primal_violation < 1e-6, "instance {k}: violation {}", s.primal_violation);
        }
    }
    // a fifth of the batch is perturbed; most of those stay feasible
    ensure!(3 * optimal > 2 * instances, "only {optimal} of {instances} optimal");
    Ok(format!("{optimal} of {instances} optimal, max KKT residual {worst:.1e}"))
}

/// Median wall time of a 10-DoF projection with 30 rows.
pub fn qp_filter_median_seconds() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solver = QpSolver::new();
    let mut times = Vec::new();
    for _ in 0..301 {
        let center = DVector::from_fn(10, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(30, 10, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * &x0 - DVector::from_fn(30, |_, _| rng.random_range(0.0..0.3));
        let p = QpProblem::projection(&center).with_inequalities(a, b);
        let start = Instant::now();
        let s = solver.solve(&p, None).map_err(|e| e.to_string())?;
        times.push(start.elapsed().as_secs_f64());
        ensure!(s.is_optimal(), "status {:?}", s.status);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Surface distance from a dense grid of centerline samples.
pub fn sampled_distance(a: &Primitive, b: &Primitive, samples: usize) -> f64 {
    let line = |p: &Primitive| -> Vec<Vector3<f64>> {
        (0..samples)
            .map(|i| p.a + (p.b - p.a) * (i as f64 / (samples - 1) as f64))
            .collect()
    };
    let (pa, pb) = (line(a), line(b));
    let mut best = f64::INFINITY;
    for x in &pa {
        for y in &pb {
            best = best.min((x - y).norm_squared());
        }
    }
    best.sqrt() - (a.radius + b.radius)
}

fn random_capsule(rng: &mut impl Rng) -> Primitive {
    let a = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    Primitive::capsule(a, a + dir * rng.random_range(0.0..1.0), rng.random_range(0.01..0.3))
}

pub fn capsule_distances_match_sampling(pairs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut worst = 0.0_f64;
    for k in 0..pairs {
        let (a, b) = (random_capsule(&mut rng), random_capsule(&mut rng));
        let exact = closest_points(&a, &b).h;
        let sampled = sampled_distance(&a, &b, 1000);
        ensure!(exact <= sampled + 1e-12, "pair {k}: exact {exact} above sampled {sampled}");
        worst = worst.max(sampled - exact);
        ensure!(worst < 2e-3, "pair {k}: exact {exact} sampled {sampled}");
    }
    Ok(format!("{pairs} pairs, max gap {worst:.1e} m"))
}

pub const FD_STEP: f64 = 1e-6;

/// Whether the closest-point parameters keep the same clamping pattern over
/// the finite-difference stencil, i.e. no witness switch is straddled.
fn same_witness_regime(p: [(Primitive, Primitive); 3]) -> bool {
    let classify = |(a, b): &(Primitive, Primitive)| {
        let (s, t) = segment_parameters(&a.a, &a.b, &b.a, &b.b);
        let c = |x: f64| {
            if x <= 1e-9 {
                0
            } else if x >= 1.0 - 1e-9 {
                2
            } else {
                1
            }
        };
        (c(s), c(t))
    };
    let k = classify(&p[0]);
    let interior_margin = p.iter().all(|(a, b)| {
        let (s, t) = segment_parameters(&a.a, &a.b, &b.a, &b.b);
        [s, t].iter().all(|x| *x == 0.0 || *x == 1.0 || (*x > 1e-4 && *x < 1.0 - 1e-4))
    });
    interior_margin && p.iter().all(|x| classify(x) == k)
}

/// Compare one pair's analytic barrier gradient with central differences.
/// Returns how many joints were compared and the worst relative error.
pub fn pair_gradient_error(
    model: &RobotModel,
    q: &DVector<f64>,
    a: &CollisionBody,
    b: &CollisionBody,
) -> (usize, f64) {
    let Ok((_, grad)) = barrier_jacobian(model, q, a, b) else {
        return (0, 0.0);
    };
    let poses = model.forward_kinematics(q).unwrap();
    let center = (a.primitive(&poses), b.primitive(&poses));
    let scale = grad.amax().max(1.0);
    let (mut compared, mut worst) = (0, 0.0_f64);
    for i in 0..q.len() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += FD_STEP;
        qm[i] -= FD_STEP;
        let pp = model.forward_kinematics(&qp).unwrap();
        let pm = model.forward_kinematics(&qm).unwrap();
        let plus = (a.primitive(&pp), b.primitive(&pp));
        let minus = (a.primitive(&pm), b.primitive(&pm));
        if !same_witness_regime([center, plus, minus]) {
            continue;
        }
        let fd = (closest_points(&plus.0, &plus.1).h - closest_points(&minus.0, &minus.1).h) / (2.0 * FD_STEP);
        worst = worst.max((grad[i] - fd).abs() / scale);
        compared += 1;
    }
    (compared, worst)
}

/// Self-pair gradients on random chains against central differences.
pub fn self_pair_gradients_match_finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut pairs, mut worst) = (0, 0.0_f64);
    for _ in 0..40 {
        let n = rng.random_range(3..=7);
        let model = super::random_chain(&mut rng, n);
        for _ in 0..5 {
            let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            for i in 0..n {
                for j in i + 2..n {
                    let (a, b) = (&model.collision_bodies[i], &model.collision_bodies[j]);
                    let (compared, err) = pair_gradient_error(&model, &q, a, b);
                    pairs += usize::from(compared > 0);
                    worst = worst.max(err);
                    ensure!(worst <= 1e-5, "pair ({i}, {j}) at q = {q}: relative error {err:.2e}");
                }
            }
        }
    }
    ensure!(pairs > 500, "only {pairs} pairs away from witness switches");
    Ok(format!("{pairs} pairs, max relative error {worst:.1e}"))
}

fn random_stack(rng: &mut impl Rng) -> (usize, Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    // Near the truncation threshold a direction can leak between levels, so
    // draws with singular values in that band are rejected.
    loop {
        let n = rng.random_range(3..=10);
        let levels = rng.random_range(1..=4);
        let mut jacs = Vec::new();
        let mut cmds = Vec::new();
        for _ in 0..levels {
            let rows = rng.random_range(1..=4);
            let rank = rng.random_range(1..=rows.min(n));
            let left = DMatrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0));
            let right = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
            jacs.push(left * right);
            cmds.push(DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)));
        }
        let (_, out) = prioritized_velocities(n, &jacs, &cmds).unwrap();
        let separated = out.iter().zip(&jacs).all(|(level, jac)| {
            let a = &level.projected_jacobian;
            let gram = a * a.transpose();
            let eig = gram.symmetric_eigenvalues();
            let top = eig.max().max(0.0).sqrt();
            eig.iter()
                .map(|&l| l.max(0.0).sqrt())
                .all(|s| s < 1e-10 * jac.norm() || s > 1e-2 * top)
        });
        if separated {
            return (n, jacs, cmds);
        }
    }
}

/// Priority consistency, projector idempotence and pseudo-inverse axioms.
pub fn kinwbc_properties(stacks: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut priority, mut projector, mut axioms) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..stacks {
        let (n, jacs, cmds) = random_stack(&mut rng);
        let (full, levels) = prioritized_velocities(n, &jacs, &cmds).map_err(|e| e.to_string())?;
        for (i, (level, jac)) in levels.iter().zip(&jacs).enumerate() {
            priority = priority.max((jac * &level.qdot - jac * &full).amax());
            let p = &level.projector;
            projector = projector.max((p * p - p).amax());
            let a = &level.projected_jacobian;
            let pinv = pinv_above(a, RELATIVE_SINGULAR_CUTOFF * jac.norm());
            let ap = a * &pinv;
            let pa = &pinv * a;
            axioms = axioms
                .max((&ap * a - a).amax())
                .max((&pa * &pinv - &pinv).amax())
                .max((&ap - ap.transpose()).amax())
                .max((&pa - pa.transpose()).amax());
            ensure!(priority < 1e-9, "stack {k} level {i}: higher task disturbed by {priority:.1e}");
            ensure!(projector < 1e-10, "stack {k} level {i}: projector error {projector:.1e}");
            ensure!(axioms < 1e-9, "stack {k} level {i}: pseudo-inverse axiom error {axioms:.1e}");
        }
    }
    Ok(format!(
        "{stacks} stacks, priority {priority:.1e}, projector {projector:.1e}, axioms {axioms:.1e}"
    ))
}

/// Without contact, torque smoothing or mass weighting the optimum is plain
/// inverse dynamics of the safe acceleration.
pub fn dynwbc_unconstrained_is_inverse_dynamics(samples: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = DynWbcConfig {
        w_tau: 0.0,
        w_m: 0.0,
        torque_limits_in_qp: false,
        ..Default::default()
    };
    let mut solver = QpSolver::new();
    let mut worst = 0.0_f64;
    for k in 0..samples {
        let n = rng.random_range(2..=7);
        let model = super::random_chain(&mut rng, n);
        let s = super::random_state(&mut rng, n, 1.5);
        let qdd_safe = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let tau_prev = DVector::zeros(n);
        let input = DynWbcInput {
            state: &s,
            qdd_safe: &qdd_safe,
            contact: None,
            ecbf: &[],
            tau_prev: &tau_prev,
            gravity: default_gravity(),
        };
        let sol = solve_dynwbc(&model, &input, &config, &mut solver).map_err(|e| e.to_string())?;
        let expected = model.inverse_dynamics(&s.q, &s.qd, &qdd_safe, &default_gravity()).unwrap();
        worst = worst.max((&sol.tau - &expected).amax() / expected.amax().max(1.0));
        ensure!(worst < 1e-8, "sample {k}: torque error {worst:.1e}");
    }
    Ok(format!("{samples} states, max torque error {worst:.1e}"))
}

/// Friction pyramid rows `U f ≤ 0` for one 3-D point force along +z.
fn pyramid(mu: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        3,
        &[
            0.0, 0.0, -1.0, //
            1.0, 0.0, -mu, //
            -1.0, 0.0, -mu, //
            0.0, 1.0, -mu, //
            0.0, -1.0, -mu,
        ],
    )
}

/// Condensed DynWBC with a planted point contact against enumeration of
/// the uncondensed problem over (q̈, τ, F).
pub fn dynwbc_contact_matches_enumeration(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let config = DynWbcConfig {
        torque_limits_in_qp: false,
        w_c: 0.5,
        w_tau: 1e-2,
        w_m: 1e-3,
        ..Default::default()
    };
    let mut solver = QpSolver::new();
    let mut worst = 0.0_f64;
    for k in 0..instances {
        let n = rng.random_range(3..=6);
        let model = super::random_chain(&mut rng, n);
        let s = super::random_state(&mut rng, n, 1.5);
        let contact = ContactBlock {
            jacobian: DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0)),
            cone: pyramid(0.5),
            // inside the cone for some instances, outside for others
            force_des: DVector::from_vec(vec![
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-5.0..30.0),
            ]),
        };
        let qdd_safe = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let tau_prev = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let input = DynWbcInput {
            state: &s,
            qdd_safe: &qdd_safe,
            contact: Some(&contact),
            ecbf: &[],
            tau_prev: &tau_prev,
            gravity: default_gravity(),
        };
        let sol = solve_dynwbc(&model, &input, &config, &mut solver).map_err(|e| e.to_string())?;
        ensure!(sol.dynamics_residual < 1e-8, "instance {k}: residual {:.1e}", sol.dynamics_residual);
        ensure!((&contact.cone * &sol.force).max() <= 1e-9, "instance {k}: force leaves the cone");

        let nz = 2 * n + 3;
        let mass = model.mass_matrix(&s.q).unwrap();
        let bias = model.bias_forces(&s.q, &s.qd, &default_gravity()).unwrap();
        let mut h = DMatrix::zeros(nz, nz);
        let mut g = DVector::zeros(nz);
        for i in 0..n {
            h[(i, i)] += 2.0 * config.w_qdd;
            g[i] = -2.0 * config.w_qdd * qdd_safe[i];
            h[(n + i, n + i)] = 2.0 * config.w_tau;
            g[n + i] = -2.0 * config.w_tau * tau_prev[i];
        }
        let mut hqq = h.view_mut((0, 0), (n, n));
        hqq += &mass * (2.0 * config.w_m);
        for i in 0..3 {
            h[(2 * n + i, 2 * n + i)] = 2.0 * config.w_c;
            g[2 * n + i] = -2.0 * config.w_c * contact.force_des[i];
        }
        let mut a_eq = DMatrix::zeros(n, nz);
        a_eq.view_mut((0, 0), (n, n)).copy_from(&mass);
        a_eq.view_mut((0, n), (n, n)).copy_from(&(-DMatrix::identity(n, n)));
        a_eq.view_mut((0, 2 * n), (n, 3)).copy_from(&(-contact.jacobian.transpose()));
        let mut a_in = DMatrix::zeros(5, nz);
        a_in.view_mut((0, 2 * n), (5, 3)).copy_from(&(-&contact.cone));
        let x = enumerate(&OracleProblem {
            h: &h,
            g: &g,
            a_ineq: &a_in,
            b_ineq: &DVector::zeros(5),
            a_eq: &a_eq,
            b_eq: &(-&bias),
        })
        .ok_or_else(|| format!("instance {k}: oracle found no feasible point"))?;
        worst = worst
            .max((x.rows(0, n) - &sol.qdd).amax())
            .max((x.rows(n, n) - &sol.tau).amax())
            .max((x.rows(2 * n, 3) - &sol.force).amax());
        ensure!(worst < 1e-6, "instance {k}: deviation from oracle {worst:.1e}");
    }
    Ok(format!("{instances} contact instances, max deviation {worst:.1e}"))
}
