//! Dynamic whole-body control: an acceleration/torque QP that tracks the
//! safety-filtered reference under the equations of motion, and the final
//! motor torque command.
//!
//! The QP is posed over `(q̈, τ, F_c)` with `M q̈ + h = τ + J_cᵀ F_c`. Because
//! the arm is fully actuated the equality is eliminated by substituting
//! `τ = M q̈ + h − J_cᵀ F_c`, which leaves a strictly convex problem over
//! `(q̈, F_c)` and makes the dynamics residual exact up to round-off.

use log::debug;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{JointState, RobotModel};
use crate::qpsolve::{QpProblem, QpSolver, QpStatus};
use crate::safety::EcbfRow;

fn default_w_qdd() -> f64 {
    1.0
}
fn default_w_c() -> f64 {
    1e-2
}
fn default_w_tau() -> f64 {
    1e-4
}
fn default_w_m() -> f64 {
    1e-5
}
fn default_kp_dyn() -> f64 {
    400.0
}
fn default_kd_dyn() -> f64 {
    40.0
}
fn default_kp() -> f64 {
    100.0
}
fn default_kd() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

/// Objective weights and feedback gains. Gains are uniform diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynWbcConfig {
    #[serde(default = "default_w_qdd")]
    pub w_qdd: f64,
    #[serde(default = "default_w_c")]
    pub w_c: f64,
    #[serde(default = "default_w_tau")]
    pub w_tau: f64,
    #[serde(default = "default_w_m")]
    pub w_m: f64,
    #[serde(default = "default_kp_dyn")]
    pub kp_dyn: f64,
    #[serde(default = "default_kd_dyn")]
    pub kd_dyn: f64,
    /// Motor PD gains added on top of the optimal torque.
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_kd")]
    pub kd: f64,
    /// Add `|τ| ≤ τ_max` rows to the QP.
    #[serde(default = "default_true")]
    pub torque_limits_in_qp: bool,
    /// Slack weight for eCBF rows when they conflict with torque limits;
    /// `None` surfaces the infeasibility instead.
    #[serde(default)]
    pub ecbf_slack_weight: Option<f64>,
}

impl Default for DynWbcConfig {
    fn default() -> Self {
        Self {
            w_qdd: default_w_qdd(),
            w_c: default_w_c(),
            w_tau: default_w_tau(),
            w_m: default_w_m(),
            kp_dyn: default_kp_dyn(),
            kd_dyn: default_kd_dyn(),
            kp: default_kp(),
            kd: default_kd(),
            torque_limits_in_qp: true,
            ecbf_slack_weight: Some(1e6),
        }
    }
}

impl DynWbcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_qdd > 0.0) {
            return Err(Error::InvalidConfig("w_qdd must be > 0".into()));
        }
        for (name, w) in [("w_c", self.w_c), ("w_tau", self.w_tau), ("w_m", self.w_m)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, k) in [
            ("kp_dyn", self.kp_dyn),
            ("kd_dyn", self.kd_dyn),
            ("kp", self.kp),
            ("kd", self.kd),
        ] {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and > 0")));
            }
        }
        if let Some(w) = self.ecbf_slack_weight {
            if !(w > 0.0) {
                return Err(Error::InvalidConfig("eCBF slack weight must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Linear contact block: `U F_c ≤ 0`, tracked toward `F_c_des`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactBlock {
    /// `k × n` contact Jacobian.
    pub jacobian: DMatrix<f64>,
    /// Linearized cone, `r × k`.
    pub cone: DMatrix<f64>,
    pub force_des: DVector<f64>,
}

impl ContactBlock {
    pub fn dim(&self) -> usize {
        self.jacobian.nrows()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let k = self.dim();
        check_dim("contact Jacobian columns", n, self.jacobian.ncols())?;
        check_dim("contact cone columns", k, self.cone.ncols())?;
        check_dim("desired contact force", k, self.force_des.len())?;
        if k % 3 != 0 {
            return Err(Error::InvalidConfig(format!(
                "contact dimension {k} is not a multiple of 3"
            )));
        }
        if self.cone.iter().chain(self.jacobian.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("contact block has non-finite entries".into()));
        }
        Ok(())
    }
}

/// `q̈_safe = K_p (q_safe − q) + K_d (q̇_safe − q̇)`.
pub fn safe_acceleration(
    q_safe: &DVector<f64>,
    qdot_safe: &DVector<f64>,
    state: &JointState,
    kp_dyn: f64,
    kd_dyn: f64,
) -> DVector<f64> {
    (q_safe - &state.q) * kp_dyn + (qdot_safe - &state.qd) * kd_dyn
}

#[derive(Debug, Clone)]
pub struct DynWbcSolution {
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
    pub force: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// `‖M q̈ + h − τ − J_cᵀ F_c‖∞`.
    pub dynamics_residual: f64,
    /// eCBF rows needed slack this cycle.
    pub relaxed: bool,
}

/// Everything the DynWBC QP needs for one cycle.
#[derive(Debug, Clone, Copy)]
pub struct DynWbcInput<'a> {
    pub state: &'a JointState,
    pub qdd_safe: &'a DVector<f64>,
    pub contact: Option<&'a ContactBlock>,
    pub ecbf: &'a [EcbfRow],
    pub tau_prev: &'a DVector<f64>,
    pub gravity: Vector3<f64>,
}

/// Solve the torque QP
///
/// ```text
///   min  w_q̈‖q̈ − q̈_safe‖² + w_c‖F_c − F_c,des‖² + w_τ‖τ − τ_prev‖² + w_M q̈ᵀMq̈
///   s.t. M q̈ + h = τ + J_cᵀ F_c,  U F_c ≤ 0,  |τ| ≤ τ_max,  eCBF rows
/// ```
pub fn solve_dynwbc(
    model: &RobotModel,
    input: &DynWbcInput<'_>,
    config: &DynWbcConfig,
    solver: &mut QpSolver,
) -> Result<DynWbcSolution> {
    let n = model.n_dof();
    let state = input.state;
    check_dim("state", n, state.q.len())?;
    check_dim("safe acceleration", n, input.qdd_safe.len())?;
    check_dim("previous torque", n, input.tau_prev.len())?;
    if let Some(c) = input.contact {
        c.validate(n)?;
        if !(config.w_c > 0.0) {
            return Err(Error::InvalidConfig("contacts need w_c > 0".into()));
        }
    }
    if let Some(r) = input.ecbf.iter().find(|r| r.a.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "eCBF row",
            expected: n,
            got: r.a.len(),
        });
    }

    let mass = model.mass_matrix(&state.q)?;
    let bias = model.bias_forces(&state.q, &state.qd, &input.gravity)?;
    let k = input.contact.map_or(0, ContactBlock::dim);
    let nv = n + k;

    // τ = B y + h with y = (q̈, F_c)
    let mut b_map = DMatrix::zeros(n, nv);
    b_map.view_mut((0, 0), (n, n)).copy_from(&mass);
    if let Some(c) = input.contact {
        b_map.view_mut((0, n), (n, k)).copy_from(&(-c.jacobian.transpose()));
    }

    let mut h = DMatrix::zeros(nv, nv);
    let mut g = DVector::zeros(nv);
    {
        let mut hqq = h.view_mut((0, 0), (n, n));
        hqq += &mass * (2.0 * config.w_m);
        for i in 0..n {
            hqq[(i, i)] += 2.0 * config.w_qdd;
        }
    }
    g.rows_mut(0, n).copy_from(&(input.qdd_safe * (-2.0 * config.w_qdd)));
    if let Some(c) = input.contact {
        for i in 0..k {
            h[(n + i, n + i)] += 2.0 * config.w_c;
        }
        g.rows_mut(n, k).copy_from(&(&c.force_des * (-2.0 * config.w_c)));
    }
    if config.w_tau > 0.0 {
        let bt = b_map.transpose();
        h += &bt * &b_map * (2.0 * config.w_tau);
        g += &bt * (&bias - input.tau_prev) * (2.0 * config.w_tau);
    }
    // keep H exactly symmetric after the products above
    let h = (&h + h.transpose()) * 0.5;

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    if let Some(c) = input.contact {
        for r in 0..c.cone.nrows() {
            let mut a = DVector::zeros(nv);
            a.rows_mut(n, k).copy_from(&(-c.cone.row(r).transpose()));
            rows.push((a, 0.0));
        }
    }
    if config.torque_limits_in_qp {
        let limits = model.torque_limits();
        for i in 0..n {
            let bi = b_map.row(i).transpose();
            rows.push((-&bi, bias[i] - limits[i]));
            rows.push((bi, -limits[i] - bias[i]));
        }
    }
    let first_ecbf = rows.len();
    for r in input.ecbf {
        let mut a = DVector::zeros(nv);
        a.rows_mut(0, n).copy_from(&r.a);
        rows.push((a, r.b));
    }

    let build = |rows: &[(DVector<f64>, f64)], width: usize| {
        let mut a = DMatrix::zeros(rows.len(), width);
        let mut b = DVector::zeros(rows.len());
        for (i, (ai, bi)) in rows.iter().enumerate() {
            a.view_mut((i, 0), (1, ai.len())).copy_from(&ai.transpose());
            b[i] = *bi;
        }
        (a, b)
    };
    let (a, b) = build(&rows, nv);
    let sol = solver.solve(&QpProblem::new(h.clone(), g.clone()).with_inequalities(a, b), None)?;
    let (y, iterations, relaxed) = match sol.status {
        QpStatus::Optimal => (sol.x, sol.iterations, false),
        QpStatus::MaxIter => return Err(Error::MaxIter { iterations: sol.iterations }),
        QpStatus::Infeasible => {
            let weight = match config.ecbf_slack_weight {
                Some(w) if !input.ecbf.is_empty() => w,
                _ => {
                    return Err(Error::Infeasible {
                        active: sol.active_set,
                    })
                }
            };
            // one shared slack on the eCBF rows
            let mut h_ext = DMatrix::zeros(nv + 1, nv + 1);
            h_ext.view_mut((0, 0), (nv, nv)).copy_from(&h);
            h_ext[(nv, nv)] = 2.0 * weight;
            let mut g_ext = DVector::zeros(nv + 1);
            g_ext.rows_mut(0, nv).copy_from(&g);
            let mut ext: Vec<(DVector<f64>, f64)> = rows
                .iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let mut e = DVector::zeros(nv + 1);
                    e.rows_mut(0, nv).copy_from(a);
                    if i >= first_ecbf {
                        e[nv] = 1.0;
                    }
                    (e, *b)
                })
                .collect();
            let mut s_row = DVector::zeros(nv + 1);
            s_row[nv] = 1.0;
            ext.push((s_row, 0.0));
            let (a, b) = build(&ext, nv + 1);
            let relaxed = solver.solve(&QpProblem::new(h_ext, g_ext).with_inequalities(a, b), None)?;
            if relaxed.status != QpStatus::Optimal {
                return Err(Error::Infeasible {
                    active: relaxed.active_set,
                });
            }
            debug!("eCBF rows relaxed with slack {:.3e}", relaxed.x[nv]);
            (
                relaxed.x.rows(0, nv).into_owned(),
                sol.iterations + relaxed.iterations,
                true,
            )
        }
    };

    let qdd = y.rows(0, n).into_owned();
    let force = y.rows(n, k).into_owned();
    let tau = &b_map * &y + &bias;
    let mut residual = &mass * &qdd + &bias - &tau;
    if let Some(c) = input.contact {
        residual -= c.jacobian.transpose() * &force;
    }
    Ok(DynWbcSolution {
        qdd,
        tau,
        force,
        status: QpStatus::Optimal,
        iterations,
        dynamics_residual: residual.amax(),
        relaxed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotorCommand {
    pub tau: DVector<f64>,
    /// Per joint: the command was saturated at the torque limit.
    pub clamped: Vec<bool>,
}

/// `τ_cmd = τ_opt + K_p (q_safe − q) + K_d (q̇_safe − q̇)`, saturated at `limits`.
pub fn motor_torque(
    tau_opt: &DVector<f64>,
    q_safe: &DVector<f64>,
    qdot_safe: &DVector<f64>,
    state: &JointState,
    kp: f64,
    kd: f64,
    limits: Option<&DVector<f64>>,
) -> MotorCommand {
    let mut tau = tau_opt + (q_safe - &state.q) * kp + (qdot_safe - &state.qd) * kd;
    let mut clamped = vec![false; tau.len()];
    if let Some(limits) = limits {
        for i in 0..tau.len() {
            let lim = limits[i];
            if tau[i].abs() > lim {
                tau[i] = tau[i].clamp(-lim, lim);
                clamped[i] = true;
            }
        }
        if clamped.iter().any(|&c| c) {
            log::debug!("torque command clamped at t = {}", state.t);
        }
    }
    MotorCommand { tau, clamped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_gravity;
    use crate::model::test_models::{planar_chain, spatial_chain};
    use crate::qpsolve::qp_oracle;
    use crate::safety::BarrierKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(q: Vec<f64>, qd: Vec<f64>) -> JointState {
        JointState::new(DVector::from_vec(q), DVector::from_vec(qd), 0.0).unwrap()
    }

    #[test]
    fn safe_acceleration_formula() {
        let s = state(vec![0.2, -0.1], vec![0.5, 0.0]);
        let zero = safe_acceleration(&s.q, &s.qd, &s, 100.0, 20.0);
        assert_eq!(zero.norm(), 0.0);
        let s = state(vec![0.0], vec![0.0]);
        let qdd = safe_acceleration(&DVector::from_element(1, 0.01), &DVector::zeros(1), &s, 100.0, 20.0);
        assert_relative_eq!(qdd[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn step_response_does_not_overshoot() {
        let (kp, kd, dt) = (100.0, 20.0, 1e-4);
        let target = DVector::from_element(1, 1.0);
        let mut s = state(vec![0.0], vec![0.0]);
        let mut peak: f64 = 0.0;
        for _ in 0..20_000 {
            let qdd = safe_acceleration(&target, &DVector::zeros(1), &s, kp, kd);
            s.qd += qdd * dt;
            s.q += &s.qd * dt;
            peak = peak.max(s.q[0]);
        }
        assert!(peak <= 1.05, "peak {peak}");
        assert_relative_eq!(s.q[0], 1.0, epsilon = 1e-3);
    }

    fn bare(config: &mut DynWbcConfig) {
        config.w_tau = 0.0;
        config.w_m = 0.0;
        config.torque_limits_in_qp = false;
    }

    #[test]
    fn unconstrained_optimum_is_inverse_dynamics() {
        let model = spatial_chain();
        let mut config = DynWbcConfig::default();
        bare(&mut config);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut solver = QpSolver::new();
        for _ in 0..20 {
            let n = model.n_dof();
            let s = state(
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
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
            let sol = solve_dynwbc(&model, &input, &config, &mut solver).unwrap();
            let expected = model
                .inverse_dynamics(&s.q, &s.qd, &qdd_safe, &default_gravity())
                .unwrap();
            assert_relative_eq!(sol.qdd, qdd_safe, epsilon = 1e-10);
            assert!((&sol.tau - &expected).amax() < 1e-8);
            assert!(sol.dynamics_residual < 1e-8);
        }
    }

    #[test]
    fn rest_state_gets_gravity_compensation() {
        let model = spatial_chain();
        let s = JointState::at_rest(DVector::from_vec(vec![0.3, -0.4, 0.2, 0.9, -0.1]));
        let zero = DVector::zeros(5);
        let gravity_comp = model
            .bias_forces(&s.q, &zero, &default_gravity())
            .unwrap();
        // starting from τ_prev = gravity compensation, every term is at its minimum
        let input = DynWbcInput {
            state: &s,
            qdd_safe: &zero,
            contact: None,
            ecbf: &[],
            tau_prev: &gravity_comp,
            gravity: default_gravity(),
        };
        let config = DynWbcConfig {
            torque_limits_in_qp: false,
            ..Default::default()
        };
        let sol = solve_dynwbc(&model, &input, &config, &mut QpSolver::new()).unwrap();
        assert!((&sol.tau - &gravity_comp).amax() < 1e-9);
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

    #[test]
    fn planted_contact_matches_oracle() {
        let model = planar_chain(&[0.3, 0.3, 0.25, 0.2, 0.2, 0.15], &[2.0, 1.8, 1.5, 1.2, 1.0, 0.8]);
        let n = model.n_dof();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let config = DynWbcConfig {
            torque_limits_in_qp: false,
            w_c: 0.5,
            w_tau: 1e-2,
            w_m: 1e-3,
            ..Default::default()
        };
        let mut solver = QpSolver::new();
        for _ in 0..10 {
            let s = state(
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
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
            let sol = solve_dynwbc(&model, &input, &config, &mut solver).unwrap();
            assert!(sol.dynamics_residual < 1e-8);
            assert!((&contact.cone * &sol.force).max() <= 1e-9);

            // uncondensed problem over (q̈, τ, F): dynamics as an equality
            let nz = 2 * n + 3;
            let mass = model.mass_matrix(&s.q).unwrap();
            let bias = model
                .bias_forces(&s.q, &s.qd, &default_gravity())
                .unwrap();
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
            let b_eq = -&bias;
            let mut a_in = DMatrix::zeros(5, nz);
            a_in.view_mut((0, 2 * n), (5, 3)).copy_from(&(-&contact.cone));
            let b_in = DVector::zeros(5);
            let oracle = qp_oracle::enumerate(&qp_oracle::OracleProblem {
                h: &h,
                g: &g,
                a_ineq: &a_in,
                b_ineq: &b_in,
                a_eq: &a_eq,
                b_eq: &b_eq,
            })
            .expect("planted instance is feasible");
            assert!((oracle.rows(0, n) - &sol.qdd).amax() < 1e-6);
            assert!((oracle.rows(n, n) - &sol.tau).amax() < 1e-6);
            assert!((oracle.rows(2 * n, 3) - &sol.force).amax() < 1e-6);
        }
    }

    #[test]
    fn torque_smoothing_converges() {
        let model = spatial_chain();
        let s = state(vec![0.3, -0.4, 0.2, 0.9, -0.1], vec![0.1, 0.2, -0.3, 0.0, 0.4]);
        let qdd_safe = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0]);
        let config = DynWbcConfig {
            torque_limits_in_qp: false,
            w_tau: 0.05,
            ..Default::default()
        };
        let mut solver = QpSolver::new();
        let mut tau_prev = DVector::zeros(5);
        let mut last_step = f64::INFINITY;
        for _ in 0..50 {
            let input = DynWbcInput {
                state: &s,
                qdd_safe: &qdd_safe,
                contact: None,
                ecbf: &[],
                tau_prev: &tau_prev,
                gravity: default_gravity(),
            };
            let sol = solve_dynwbc(&model, &input, &config, &mut solver).unwrap();
            let step = (&sol.tau - &tau_prev).norm();
            assert!(step <= last_step + 1e-12);
            last_step = step;
            tau_prev = sol.tau;
        }
        assert!(last_step < 1e-3 * (1.0 + tau_prev.norm()));
    }

    #[test]
    fn conflicting_ecbf_row_and_torque_limit() {
        let mut model = planar_chain(&[0.5], &[1.0]);
        model.joints[0].torque_limit = 1.0;
        let s = JointState::at_rest(DVector::zeros(1));
        let row = EcbfRow {
            a: DVector::from_element(1, 1.0),
            b: 1e4,
            h_e: 0.0,
            kind: BarrierKind::JointLimitMin,
            pair: "j0:min".into(),
        };
        let zero = DVector::zeros(1);
        let input = DynWbcInput {
            state: &s,
            qdd_safe: &zero,
            contact: None,
            ecbf: std::slice::from_ref(&row),
            tau_prev: &zero,
            gravity: default_gravity(),
        };
        let hard = DynWbcConfig {
            ecbf_slack_weight: None,
            ..Default::default()
        };
        assert!(matches!(
            solve_dynwbc(&model, &input, &hard, &mut QpSolver::new()),
            Err(Error::Infeasible { .. })
        ));
        let sol = solve_dynwbc(&model, &input, &DynWbcConfig::default(), &mut QpSolver::new()).unwrap();
        assert!(sol.relaxed);
        assert!(sol.tau[0].abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn motor_torque_formula_and_clamp() {
        let s = state(vec![0.0], vec![0.0]);
        let zero = DVector::zeros(1);
        let out = motor_torque(&DVector::from_element(1, 3.0), &s.q, &s.qd, &s, 50.0, 5.0, None);
        assert_eq!(out.tau[0], 3.0);
        let out = motor_torque(&zero, &DVector::from_element(1, 0.1), &zero, &s, 50.0, 5.0, None);
        assert_relative_eq!(out.tau[0], 5.0, epsilon = 1e-12);
        let limits = DVector::from_element(1, 100.0);
        let out = motor_torque(&DVector::from_element(1, 250.0), &s.q, &s.qd, &s, 50.0, 5.0, Some(&limits));
        assert_eq!(out.tau[0], 100.0);
        assert!(out.clamped[0]);
    }
}
