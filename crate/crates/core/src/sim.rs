//! Full-order closed-loop simulation with a mass-mismatched plant, obstacle
//! estimation, and measurement of the velocity-model discrepancy
//! `d_k = (q_{k+1} − q_k)/Δt − q̇_safe,k`.

use std::time::Instant;

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynwbc::{motor_torque, safe_acceleration, solve_dynwbc, DynWbcInput};
use crate::error::{Error, Result};
use crate::geometry::{Attachment, CollisionBody};
use crate::kinwbc::prioritized_ik;
use crate::model::{JointState, RobotModel};
use crate::qpsolve::{QpSolver, QpStatus};
use crate::safety::{
    barrier_values, catalog_sources, collect_constraints, ecbf_rows, filter_velocity_warm,
    source_label, BarrierKind, FilterMode,
};
use crate::scenario::Scenario;

pub const DEFAULT_DT_CONTROL: f64 = 5e-4;
pub const DEFAULT_DT_PHYSICS: f64 = 1e-4;
pub const DEFAULT_KF_PROCESS_NOISE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    SemiImplicitEuler,
    Rk4,
}

/// Square torque pulse on one joint, active on `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorquePulse {
    pub joint: usize,
    pub start: f64,
    pub duration: f64,
    pub torque: f64,
}

pub fn external_torque(pulses: &[TorquePulse], n_dof: usize, t: f64) -> DVector<f64> {
    let mut tau = DVector::zeros(n_dof);
    for p in pulses {
        if t >= p.start && t < p.start + p.duration {
            tau[p.joint] += p.torque;
        }
    }
    tau
}

fn default_dt_control() -> f64 {
    DEFAULT_DT_CONTROL
}
fn default_dt_physics() -> f64 {
    DEFAULT_DT_PHYSICS
}
fn default_one() -> f64 {
    1.0
}
fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}
fn default_kf_noise() -> f64 {
    DEFAULT_KF_PROCESS_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt_control")]
    pub dt_control: f64,
    #[serde(default = "default_dt_physics")]
    pub dt_physics: f64,
    /// Link mass and inertia scale applied to the plant only.
    #[serde(default = "default_one")]
    pub mass_scale: f64,
    #[serde(default)]
    pub integrator: Integrator,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub external_torque: Vec<TorquePulse>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    /// Torque QP consumes the previous cycle's safe acceleration.
    #[serde(default)]
    pub pipelined: bool,
    /// Diagnostic: skip the torque layer and set `q̇ := q̇_safe` each cycle.
    #[serde(default)]
    pub kinematic_bypass: bool,
    /// Spectral density of the obstacle filter's white-noise acceleration.
    #[serde(default = "default_kf_noise")]
    pub kf_process_noise: f64,
}

impl SimConfig {
    pub fn new(duration: f64) -> Self {
        Self {
            dt_control: DEFAULT_DT_CONTROL,
            dt_physics: DEFAULT_DT_PHYSICS,
            mass_scale: 1.0,
            integrator: Integrator::default(),
            duration,
            seed: 0,
            external_torque: vec![],
            gravity: default_gravity(),
            pipelined: false,
            kinematic_bypass: false,
            kf_process_noise: DEFAULT_KF_PROCESS_NOISE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt_control > 0.0 && self.dt_physics > 0.0) {
            return bad("time steps must be positive".into());
        }
        if self.dt_physics > self.dt_control * (1.0 + 1e-12) {
            return bad("dt_physics must not exceed dt_control".into());
        }
        let ratio = self.dt_control / self.dt_physics;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad(format!(
                "dt_control {} is not a multiple of dt_physics {}",
                self.dt_control, self.dt_physics
            ));
        }
        if !(self.mass_scale > 0.0 && self.mass_scale.is_finite()) {
            return bad("mass_scale must be positive".into());
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be finite and >= 0".into());
        }
        if !(self.kf_process_noise > 0.0) {
            return bad("kf_process_noise must be positive".into());
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return bad("gravity must be finite".into());
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        ((self.dt_control / self.dt_physics).round() as usize).max(1)
    }

    pub fn cycles(&self) -> usize {
        (self.duration / self.dt_control).round() as usize
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }
}

fn check_finite(state: &JointState, t: f64) -> Result<()> {
    if state.q.iter().chain(state.qd.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            t,
            detail: format!("state q = {:?}, qd = {:?}", state.q.as_slice(), state.qd.as_slice()),
        })
    }
}

/// Advance the plant by `dt` under constant joint torque `tau`.
pub fn step_physics(
    plant: &RobotModel,
    state: &JointState,
    tau: &DVector<f64>,
    gravity: &Vector3<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<JointState> {
    let accel = |q: &DVector<f64>, qd: &DVector<f64>| plant.forward_dynamics(q, qd, tau, gravity);
    let (q, qd) = match integrator {
        Integrator::SemiImplicitEuler => {
            let qdd = accel(&state.q, &state.qd)?;
            let qd = &state.qd + qdd * dt;
            let q = &state.q + &qd * dt;
            (q, qd)
        }
        Integrator::Rk4 => {
            let (q0, v0) = (&state.q, &state.qd);
            let a1 = accel(q0, v0)?;
            let (q2, v2) = (q0 + v0 * (dt / 2.0), v0 + &a1 * (dt / 2.0));
            let a2 = accel(&q2, &v2)?;
            let (q3, v3) = (q0 + &v2 * (dt / 2.0), v0 + &a2 * (dt / 2.0));
            let a3 = accel(&q3, &v3)?;
            let (q4, v4) = (q0 + &v3 * dt, v0 + &a3 * dt);
            let a4 = accel(&q4, &v4)?;
            let q = q0 + (v0 + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
            let qd = v0 + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
            (q, qd)
        }
    };
    let next = JointState {
        q,
        qd,
        t: state.t + dt,
    };
    check_finite(&next, next.t)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleEstimate {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Covariance of `(position, velocity)`.
    pub covariance: Matrix6<f64>,
}

/// Linear Kalman filter with a constant-velocity model driven by white-noise
/// acceleration, observing position only.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantVelocityKf {
    x: Vector6<f64>,
    p: Matrix6<f64>,
    process_noise: f64,
    measurement_var: f64,
}

impl ConstantVelocityKf {
    pub fn new(
        position: Vector3<f64>,
        position_var: f64,
        velocity_var: f64,
        process_noise: f64,
        measurement_std: f64,
    ) -> Self {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        let mut p = Matrix6::zeros();
        for i in 0..3 {
            p[(i, i)] = position_var;
            p[(i + 3, i + 3)] = velocity_var;
        }
        Self {
            x,
            p,
            process_noise,
            // a tiny floor keeps the innovation covariance invertible
            measurement_var: (measurement_std * measurement_std).max(1e-14),
        }
    }

    pub fn predict(&mut self, dt: f64) {
        let mut f = Matrix6::identity();
        let mut q = Matrix6::zeros();
        let qn = self.process_noise;
        for i in 0..3 {
            f[(i, i + 3)] = dt;
            q[(i, i)] = qn * dt.powi(3) / 3.0;
            q[(i, i + 3)] = qn * dt * dt / 2.0;
            q[(i + 3, i)] = qn * dt * dt / 2.0;
            q[(i + 3, i + 3)] = qn * dt;
        }
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
    }

    pub fn update(&mut self, z: &Vector3<f64>) {
        // H = [I 0]
        let s: Matrix3<f64> =
            self.p.fixed_view::<3, 3>(0, 0).into_owned() + Matrix3::identity() * self.measurement_var;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let pht = self.p.fixed_view::<6, 3>(0, 0).into_owned();
        let gain = pht * s_inv;
        let innovation = z - self.x.fixed_rows::<3>(0);
        self.x += gain * innovation;
        let mut i_kh = Matrix6::identity();
        let mut block = i_kh.fixed_view_mut::<6, 3>(0, 0);
        block -= &gain;
        // Joseph form keeps P symmetric positive semidefinite
        let r = Matrix3::identity() * self.measurement_var;
        self.p = i_kh * self.p * i_kh.transpose() + gain * r * gain.transpose();
        self.p = (self.p + self.p.transpose()) * 0.5;
    }

    pub fn estimate(&self) -> ObstacleEstimate {
        ObstacleEstimate {
            position: self.x.fixed_rows::<3>(0).into_owned(),
            velocity: self.x.fixed_rows::<3>(3).into_owned(),
            covariance: self.p,
        }
    }
}

/// One predict/update cycle of the obstacle filter.
pub fn estimate_obstacle(
    measurement: &Vector3<f64>,
    filter: &mut ConstantVelocityKf,
    dt: f64,
) -> ObstacleEstimate {
    filter.predict(dt);
    filter.update(measurement);
    filter.estimate()
}

/// Running discrepancy bound `d̄ = max_k ‖d_k‖∞`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscrepancyMonitor {
    pub dbar: f64,
}

impl DiscrepancyMonitor {
    /// Record one cycle and return `‖d_k‖∞`.
    pub fn record(
        &mut self,
        q_prev: &DVector<f64>,
        q_next: &DVector<f64>,
        qdot_safe: &DVector<f64>,
        dt: f64,
    ) -> f64 {
        let d = (q_next - q_prev) / dt - qdot_safe;
        let d_inf = d.amax();
        self.dbar = self.dbar.max(d_inf);
        d_inf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdot_des: DVector<f64>,
    pub qdot_safe: DVector<f64>,
    pub tau_cmd: DVector<f64>,
    pub clamped: bool,
    /// Ground-truth value of every catalog barrier.
    pub h: Vec<f64>,
    pub d_inf: f64,
    pub dbar: f64,
    pub qp_iters: usize,
    pub qp_status: QpStatus,
    pub relaxed: bool,
    pub dynamics_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRecord {
    pub t: f64,
    pub kind: BarrierKind,
    pub pair: String,
    pub h: f64,
    pub rhs: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowInfo {
    pub kind: BarrierKind,
    pub pair: String,
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub n_dof: usize,
    pub rows: Vec<RowInfo>,
    pub cycles: Vec<CycleRecord>,
    pub constraints: Vec<ConstraintRecord>,
    pub dropped_rows: usize,
    pub relaxed_cycles: usize,
    pub clamped_cycles: usize,
    /// Wall-clock time spent in the controller (not the physics), seconds.
    pub controller_seconds: f64,
}

impl RunTrace {
    pub fn dbar(&self) -> f64 {
        self.cycles.last().map_or(0.0, |c| c.dbar)
    }

    pub fn min_h(&self, row: usize) -> Option<f64> {
        self.cycles.iter().map(|c| c.h[row]).reduce(f64::min)
    }

    pub fn max_dynamics_residual(&self) -> f64 {
        self.cycles.iter().map(|c| c.dynamics_residual).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record every filter row each cycle.
    pub trace_constraints: bool,
}

/// Build the mismatched plant and run the scenario.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<RunTrace> {
    let plant = scenario.robot.with_mass_scale(scenario.sim.mass_scale)?;
    run_closed_loop(&scenario.robot, &plant, scenario, options)
}

/// Run the control pipeline against the plant. The controller only ever sees
/// `nominal`; `plant` integrates the motion.
/// The motor damping acts through a zero-order hold, so the per-cycle
/// velocity update is `v ← (1 − kd · dt / m) v` on the lightest mode `m`.
/// Past a gain of two the loop settles into a period-two oscillation; warn
/// early since the stiffness term eats into that margin.
fn warn_if_damping_unstable(
    model: &RobotModel,
    q: &DVector<f64>,
    kd: f64,
    dt: f64,
    name: &str,
) -> Result<()> {
    let mass = model.mass_matrix(q)?;
    let lightest = mass.symmetric_eigenvalues().min();
    let gain = kd * dt / lightest;
    if gain > 1.5 {
        log::warn!(
            "{name}: motor kd = {kd} gives a per-cycle damping gain of {gain:.2} on the lightest \
             mode; expect chatter, lower kd or dt_control"
        );
    }
    Ok(())
}

pub fn run_closed_loop(
    nominal: &RobotModel,
    plant: &RobotModel,
    scenario: &Scenario,
    options: &RunOptions,
) -> Result<RunTrace> {
    scenario.validate()?;
    let n = nominal.n_dof();
    if plant.n_dof() != n {
        return Err(Error::DimensionMismatch {
            what: "plant degrees of freedom",
            expected: n,
            got: plant.n_dof(),
        });
    }
    let sim = &scenario.sim;
    let filter = &scenario.filter;
    let dyn_cfg = &scenario.dynwbc;
    let catalog = &scenario.catalog;
    let dt = sim.dt_control;
    let dt_phys = dt / sim.substeps() as f64;
    let gravity = sim.gravity();
    let torque_limits = nominal.torque_limits();

    let truth0 = scenario.obstacle_bodies_at(0.0);
    let rows = catalog_sources(nominal, &truth0, catalog)
        .into_iter()
        .map(|s| {
            let (kind, pair) = source_label(nominal, &truth0, catalog, s);
            RowInfo {
                kind,
                pair,
                alpha: filter.alpha.get(kind),
                epsilon: filter.epsilon.get(kind),
            }
        })
        .collect();
    let mut trace = RunTrace {
        n_dof: n,
        rows,
        ..Default::default()
    };

    if !sim.kinematic_bypass {
        warn_if_damping_unstable(nominal, &scenario.initial.q, dyn_cfg.kd, dt, &scenario.name)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut filters: Vec<Option<ConstantVelocityKf>> = vec![None; scenario.obstacles.len()];
    let mut vel_solver = QpSolver::new();
    let mut dyn_solver = QpSolver::new();
    let mut monitor = DiscrepancyMonitor::default();
    let mut state = scenario.initial.clone();
    let mut tau_prev = nominal.bias_forces(&state.q, &DVector::zeros(n), &gravity)?;
    let mut prev_qdd_safe: Option<DVector<f64>> = None;
    let mut warm: Option<DVector<f64>> = None;

    for k in 0..sim.cycles() {
        let t = k as f64 * dt;
        state.t = t;
        let started = Instant::now();

        let truth = scenario.obstacle_bodies_at(t);
        let mut estimated = Vec::with_capacity(truth.len());
        for (i, (body, spec)) in truth.iter().zip(&scenario.obstacles).enumerate() {
            let (position, _) = spec.truth(t);
            let noise = Normal::new(0.0, spec.noise_std.max(0.0))
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let z = position + Vector3::from_fn(|_, _| noise.sample(&mut rng));
            let est = match &mut filters[i] {
                Some(kf) => estimate_obstacle(&z, kf, dt),
                slot @ None => {
                    let var = (spec.noise_std * spec.noise_std).max(1e-8);
                    let kf = ConstantVelocityKf::new(z, var, 1.0, sim.kf_process_noise, spec.noise_std);
                    let est = kf.estimate();
                    *slot = Some(kf);
                    est
                }
            };
            estimated.push(CollisionBody {
                attachment: Attachment::World {
                    position: est.position,
                    velocity: est.velocity,
                },
                ..body.clone()
            });
        }

        let h = barrier_values(nominal, &state.q, &truth, catalog)?;

        let tasks: Vec<_> = scenario.tasks.iter().map(|task| task.at(t)).collect();
        let ik = prioritized_ik(nominal, &state, &tasks, dt)?;

        let needs_rows = filter.mode != FilterMode::WithoutCbf || options.trace_constraints;
        let set = if needs_rows {
            collect_constraints(nominal, &state.q, &estimated, filter, catalog)?
        } else {
            Default::default()
        };
        trace.dropped_rows += set.dropped.len();
        let out = filter_velocity_warm(&ik.qdot_des, &set.rows, filter, &mut vel_solver, warm.as_ref())?;
        let qdot_safe = out.qdot_safe.clone();
        warm = Some(qdot_safe.clone());
        let mut relaxed = out.relaxed;
        if options.trace_constraints {
            for (row, &active) in set.rows.iter().zip(&out.active) {
                trace.constraints.push(ConstraintRecord {
                    t,
                    kind: row.kind,
                    pair: row.pair.clone(),
                    h: row.h,
                    rhs: row.rhs(filter.mode),
                    active,
                });
            }
        }

        let q_safe = &state.q + &qdot_safe * dt;
        let qdd_safe = safe_acceleration(&q_safe, &qdot_safe, &state, dyn_cfg.kp_dyn, dyn_cfg.kd_dyn);

        let (next, tau_cmd, clamped, residual) = if sim.kinematic_bypass {
            let next = JointState {
                q: &state.q + &qdot_safe * dt,
                qd: qdot_safe.clone(),
                t: t + dt,
            };
            trace.controller_seconds += started.elapsed().as_secs_f64();
            (next, DVector::zeros(n), false, 0.0)
        } else {
            let ecbf = if filter.mode == FilterMode::Ecbf {
                ecbf_rows(nominal, &state.q, &state.qd, &estimated, catalog, &set.rows, None)?
            } else {
                vec![]
            };
            let qdd_ref = match (sim.pipelined, &prev_qdd_safe) {
                (true, Some(prev)) => prev.clone(),
                _ => qdd_safe.clone(),
            };
            let input = DynWbcInput {
                state: &state,
                qdd_safe: &qdd_ref,
                contact: None,
                ecbf: &ecbf,
                tau_prev: &tau_prev,
                gravity,
            };
            let sol = solve_dynwbc(nominal, &input, dyn_cfg, &mut dyn_solver)?;
            relaxed |= sol.relaxed;
            // With acceleration-level barrier rows the unfiltered velocity is
            // not a safe PD reference; follow the optimized acceleration.
            let (q_ref, qd_ref) = if filter.mode == FilterMode::Ecbf {
                (
                    &state.q + &state.qd * dt + &sol.qdd * (0.5 * dt * dt),
                    &state.qd + &sol.qdd * dt,
                )
            } else {
                (q_safe.clone(), qdot_safe.clone())
            };
            let cmd = motor_torque(
                &sol.tau,
                &q_ref,
                &qd_ref,
                &state,
                dyn_cfg.kp,
                dyn_cfg.kd,
                Some(&torque_limits),
            );
            trace.controller_seconds += started.elapsed().as_secs_f64();

            let mut next = state.clone();
            for s in 0..sim.substeps() {
                let ts = t + s as f64 * dt_phys;
                let tau = &cmd.tau + external_torque(&sim.external_torque, n, ts);
                next = step_physics(plant, &next, &tau, &gravity, dt_phys, sim.integrator)?;
            }
            next.t = t + dt;
            tau_prev = sol.tau;
            let clamped = cmd.clamped.iter().any(|&c| c);
            (next, cmd.tau, clamped, sol.dynamics_residual)
        };
        prev_qdd_safe = Some(qdd_safe);
        check_finite(&next, next.t)?;
        if clamped {
            trace.clamped_cycles += 1;
        }
        if relaxed {
            trace.relaxed_cycles += 1;
        }

        let d_inf = monitor.record(&state.q, &next.q, &qdot_safe, dt);
        trace.cycles.push(CycleRecord {
            t,
            q: state.q.clone(),
            qd: state.qd.clone(),
            qdot_des: ik.qdot_des,
            qdot_safe,
            tau_cmd,
            clamped,
            h,
            d_inf,
            dbar: monitor.dbar,
            qp_iters: out.iterations,
            qp_status: out.status,
            relaxed,
            dynamics_residual: residual,
        });
        state = next;
    }
    if trace.relaxed_cycles > 0 {
        log::warn!(
            "{}: barrier rows relaxed on {} of {} cycles; safety not guaranteed there",
            scenario.name,
            trace.relaxed_cycles,
            trace.cycles.len()
        );
    }
    Ok(trace)
}
