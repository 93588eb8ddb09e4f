//! Barrier-constraint catalog and the joint-velocity safety filter.
//!
//! Every barrier `h(q)` becomes one linear row in `q̇`:
//!
//! ```text
//!     ∇h(q) q̇ ≥ drift − α h(q) + ‖∇h(q)‖² / ε
//! ```
//!
//! where `drift` carries the obstacle-velocity term of moving objects and the
//! last term is the input-to-state robustness margin (absent for plain CBFs).
//! The filter returns the joint velocity closest to the nominal command that
//! satisfies every row.

use std::fmt;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    barrier_jacobian_with_poses, closest_points, workspace_barrier_with_poses, AttachedPoint,
    Attachment, CollisionBody,
};
use crate::model::RobotModel;
use crate::qpsolve::{QpProblem, QpSolver, QpStatus};

pub const DEFAULT_ACTIVATION_DISTANCE: f64 = 0.3;
pub const DEFAULT_SLACK_WEIGHT: f64 = 1e6;
/// Time step of the directional finite difference used for `d/dt ∇h`.
pub const GRADIENT_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    JointLimitMin,
    JointLimitMax,
    SelfCollision,
    ObjectCollision,
    Workspace,
}

impl BarrierKind {
    pub const ALL: [BarrierKind; 5] = [
        BarrierKind::JointLimitMin,
        BarrierKind::JointLimitMax,
        BarrierKind::SelfCollision,
        BarrierKind::ObjectCollision,
        BarrierKind::Workspace,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BarrierKind::JointLimitMin => "joint_limit_min",
            BarrierKind::JointLimitMax => "joint_limit_max",
            BarrierKind::SelfCollision => "self_collision",
            BarrierKind::ObjectCollision => "object_collision",
            BarrierKind::Workspace => "workspace",
        }
    }

    pub fn is_collision(&self) -> bool {
        matches!(self, BarrierKind::SelfCollision | BarrierKind::ObjectCollision)
    }
}

impl fmt::Display for BarrierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a barrier row measures, so it can be re-evaluated at another state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BarrierSource {
    JointMin(usize),
    JointMax(usize),
    /// Indices into the robot's collision bodies.
    SelfPair(usize, usize),
    /// Robot collision body and obstacle index.
    ObjectPair(usize, usize),
    Workspace(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierConstraint {
    pub h: f64,
    pub grad: DVector<f64>,
    pub alpha: f64,
    /// `f64::INFINITY` disables the robustness margin.
    pub epsilon: f64,
    pub drift: f64,
    pub kind: BarrierKind,
    pub pair: String,
    pub source: BarrierSource,
}

impl BarrierConstraint {
    /// `‖∇h‖² / ε`.
    pub fn robust_margin(&self) -> f64 {
        if self.epsilon.is_infinite() {
            0.0
        } else {
            self.grad.norm_squared() / self.epsilon
        }
    }

    /// Right-hand side of the velocity row for the given filter mode.
    pub fn rhs(&self, mode: FilterMode) -> f64 {
        let margin = match mode {
            FilterMode::IssfCbf => self.robust_margin(),
            _ => 0.0,
        };
        self.drift - self.alpha * self.h + margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    WithoutCbf,
    Cbf,
    IssfCbf,
    Ecbf,
}

impl FilterMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::WithoutCbf => "without-cbf",
            FilterMode::Cbf => "cbf",
            FilterMode::IssfCbf => "issf-cbf",
            FilterMode::Ecbf => "ecbf",
        }
    }

    /// Whether the velocity-level QP enforces barrier rows in this mode.
    pub fn filters_velocity(&self) -> bool {
        matches!(self, FilterMode::Cbf | FilterMode::IssfCbf)
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "without-cbf" => Ok(FilterMode::WithoutCbf),
            "cbf" => Ok(FilterMode::Cbf),
            "issf-cbf" => Ok(FilterMode::IssfCbf),
            "ecbf" => Ok(FilterMode::Ecbf),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected without-cbf, cbf, issf-cbf or ecbf)"
            ))),
        }
    }
}

/// One value per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindTable {
    pub joint_limit: f64,
    pub self_collision: f64,
    pub object_collision: f64,
    pub workspace: f64,
}

impl KindTable {
    pub fn get(&self, kind: BarrierKind) -> f64 {
        match kind {
            BarrierKind::JointLimitMin | BarrierKind::JointLimitMax => self.joint_limit,
            BarrierKind::SelfCollision => self.self_collision,
            BarrierKind::ObjectCollision => self.object_collision,
            BarrierKind::Workspace => self.workspace,
        }
    }

    /// Set both collision families.
    pub fn set_collision(&mut self, value: f64) {
        self.self_collision = value;
        self.object_collision = value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackPolicy {
    HardFail,
    SlackRelax { weight: f64 },
}

fn default_alpha() -> KindTable {
    KindTable {
        joint_limit: 20.0,
        self_collision: 10.0,
        object_collision: 10.0,
        workspace: 10.0,
    }
}

fn default_epsilon() -> KindTable {
    KindTable {
        joint_limit: 50.0,
        self_collision: 10.0,
        object_collision: 10.0,
        workspace: 30.0,
    }
}

fn default_slack() -> SlackPolicy {
    SlackPolicy::SlackRelax {
        weight: DEFAULT_SLACK_WEIGHT,
    }
}

fn default_activation() -> f64 {
    DEFAULT_ACTIVATION_DISTANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub mode: FilterMode,
    #[serde(default = "default_alpha")]
    pub alpha: KindTable,
    #[serde(default = "default_epsilon")]
    pub epsilon: KindTable,
    #[serde(default = "default_slack")]
    pub slack: SlackPolicy,
    /// Collision rows are emitted only when `h` is below this distance.
    #[serde(default = "default_activation")]
    pub activation_distance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::IssfCbf,
            alpha: default_alpha(),
            epsilon: default_epsilon(),
            slack: default_slack(),
            activation_distance: DEFAULT_ACTIVATION_DISTANCE,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for kind in BarrierKind::ALL {
            let (a, e) = (self.alpha.get(kind), self.epsilon.get(kind));
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("alpha for {kind} must be > 0")));
            }
            if !(e > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "epsilon for {kind} must be > 0 or infinite"
                )));
            }
        }
        if let SlackPolicy::SlackRelax { weight } = self.slack {
            if !(weight > 0.0) {
                return Err(Error::InvalidConfig("slack weight must be > 0".into()));
            }
        }
        if !(self.activation_distance > 0.0) {
            return Err(Error::InvalidConfig("activation distance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceSpec {
    pub name: String,
    pub a: AttachedPoint,
    pub b: AttachedPoint,
    pub d_max: f64,
}

/// Which barriers exist for a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BarrierCatalog {
    /// Robot collision-body index pairs checked for self-collision.
    pub self_pairs: Vec<(usize, usize)>,
    /// Robot collision bodies checked against every obstacle.
    pub object_bodies: Vec<usize>,
    pub workspace: Vec<WorkspaceSpec>,
    pub joint_limits: bool,
}

impl BarrierCatalog {
    /// Every non-adjacent pair of robot bodies; bodies on the same or on
    /// neighbouring links (and the base with the first link) are skipped.
    pub fn non_adjacent_pairs(model: &RobotModel) -> Vec<(usize, usize)> {
        let link_of = |b: &CollisionBody| -> Option<i64> {
            match b.attachment {
                Attachment::Base => Some(-1),
                Attachment::Link(i) => Some(i as i64),
                Attachment::World { .. } => None,
            }
        };
        let bodies = &model.collision_bodies;
        let mut pairs = Vec::new();
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                if let (Some(a), Some(b)) = (link_of(&bodies[i]), link_of(&bodies[j])) {
                    if (a - b).abs() > 1 {
                        pairs.push((i, j));
                    }
                }
            }
        }
        pairs
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let nb = model.collision_bodies.len();
        for &(a, b) in &self.self_pairs {
            if a >= nb || b >= nb || a == b {
                return Err(Error::InvalidConfig(format!("bad self-collision pair ({a}, {b})")));
            }
        }
        if self.object_bodies.iter().any(|&b| b >= nb) {
            return Err(Error::InvalidConfig("object pair references unknown body".into()));
        }
        for ws in &self.workspace {
            if !(ws.d_max > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "workspace '{}' needs d_max > 0",
                    ws.name
                )));
            }
        }
        Ok(())
    }
}

/// Barrier rows for one control cycle plus the rows dropped as unusable.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub rows: Vec<BarrierConstraint>,
    pub dropped: Vec<String>,
}

/// Value, gradient and drift of one barrier at `poses`.
pub fn evaluate_source(
    model: &RobotModel,
    q: &DVector<f64>,
    poses: &[Isometry3<f64>],
    obstacles: &[CollisionBody],
    catalog: &BarrierCatalog,
    source: BarrierSource,
) -> Result<(f64, DVector<f64>, f64)> {
    let n = model.n_dof();
    let unit = |i: usize, sign: f64| {
        let mut g = DVector::zeros(n);
        g[i] = sign;
        g
    };
    match source {
        BarrierSource::JointMin(i) => Ok((q[i] - model.joints[i].q_min, unit(i, 1.0), 0.0)),
        BarrierSource::JointMax(i) => Ok((model.joints[i].q_max - q[i], unit(i, -1.0), 0.0)),
        BarrierSource::SelfPair(a, b) => {
            let bodies = &model.collision_bodies;
            let (prox, grad) = barrier_jacobian_with_poses(model, poses, &bodies[a], &bodies[b])?;
            Ok((prox.h, grad.transpose(), 0.0))
        }
        BarrierSource::ObjectPair(a, o) => {
            let body = &model.collision_bodies[a];
            let obstacle = &obstacles[o];
            let (prox, grad) = barrier_jacobian_with_poses(model, poses, body, obstacle)?;
            let normal = prox.normal.expect("checked by barrier_jacobian").into_inner();
            // ḣ = n̂ᵀ(J_A q̇ − v_O): the obstacle's approach speed enters as drift
            let drift = normal.dot(&obstacle.velocity());
            Ok((prox.h, grad.transpose(), drift))
        }
        BarrierSource::Workspace(k) => {
            let ws = &catalog.workspace[k];
            let (h, grad) = workspace_barrier_with_poses(model, poses, &ws.a, &ws.b, ws.d_max)?;
            Ok((h, grad.transpose(), 0.0))
        }
    }
}

fn pair_label(model: &RobotModel, obstacles: &[CollisionBody], catalog: &BarrierCatalog, source: BarrierSource) -> String {
    let bodies = &model.collision_bodies;
    match source {
        BarrierSource::JointMin(i) => format!("{}:min", model.joints[i].name),
        BarrierSource::JointMax(i) => format!("{}:max", model.joints[i].name),
        BarrierSource::SelfPair(a, b) => format!("{}|{}", bodies[a].name, bodies[b].name),
        BarrierSource::ObjectPair(a, o) => format!("{}|{}", bodies[a].name, obstacles[o].name),
        BarrierSource::Workspace(k) => catalog.workspace[k].name.clone(),
    }
}

fn source_kind(source: BarrierSource) -> BarrierKind {
    match source {
        BarrierSource::JointMin(_) => BarrierKind::JointLimitMin,
        BarrierSource::JointMax(_) => BarrierKind::JointLimitMax,
        BarrierSource::SelfPair(..) => BarrierKind::SelfCollision,
        BarrierSource::ObjectPair(..) => BarrierKind::ObjectCollision,
        BarrierSource::Workspace(_) => BarrierKind::Workspace,
    }
}

/// Every barrier the catalog describes, in a fixed order.
pub fn catalog_sources(model: &RobotModel, obstacles: &[CollisionBody], catalog: &BarrierCatalog) -> Vec<BarrierSource> {
    let mut sources = Vec::new();
    if catalog.joint_limits {
        for i in 0..model.n_dof() {
            sources.push(BarrierSource::JointMin(i));
            sources.push(BarrierSource::JointMax(i));
        }
    }
    for &(a, b) in &catalog.self_pairs {
        sources.push(BarrierSource::SelfPair(a, b));
    }
    for &a in &catalog.object_bodies {
        for o in 0..obstacles.len() {
            sources.push(BarrierSource::ObjectPair(a, o));
        }
    }
    for k in 0..catalog.workspace.len() {
        sources.push(BarrierSource::Workspace(k));
    }
    sources
}

/// Human-readable identifier of a barrier source.
pub fn source_label(model: &RobotModel, obstacles: &[CollisionBody], catalog: &BarrierCatalog, source: BarrierSource) -> (BarrierKind, String) {
    (source_kind(source), pair_label(model, obstacles, catalog, source))
}

/// Barrier values for every catalog entry at `q`, without gradients.
///
/// Unlike [`collect_constraints`] this never drops a row, so it is suitable
/// for logging: coincident centerlines still have a well-defined distance.
pub fn barrier_values(
    model: &RobotModel,
    q: &DVector<f64>,
    obstacles: &[CollisionBody],
    catalog: &BarrierCatalog,
) -> Result<Vec<f64>> {
    let poses = model.forward_kinematics(q)?;
    let bodies = &model.collision_bodies;
    let distance = |a: &CollisionBody, b: &CollisionBody| {
        closest_points(&a.primitive(&poses), &b.primitive(&poses)).h
    };
    Ok(catalog_sources(model, obstacles, catalog)
        .into_iter()
        .map(|source| match source {
            BarrierSource::JointMin(i) => q[i] - model.joints[i].q_min,
            BarrierSource::JointMax(i) => model.joints[i].q_max - q[i],
            BarrierSource::SelfPair(a, b) => distance(&bodies[a], &bodies[b]),
            BarrierSource::ObjectPair(a, o) => distance(&bodies[a], &obstacles[o]),
            BarrierSource::Workspace(k) => {
                let ws = &catalog.workspace[k];
                let pa = model.point_position(&poses, ws.a.link, &ws.a.point);
                let pb = model.point_position(&poses, ws.b.link, &ws.b.point);
                ws.d_max - (pa - pb).norm()
            }
        })
        .collect())
}

/// Assemble the barrier rows active at configuration `q`.
///
/// Collision rows farther than the activation distance are omitted; rows whose
/// contact normal is undefined are dropped and reported.
pub fn collect_constraints(
    model: &RobotModel,
    q: &DVector<f64>,
    obstacles: &[CollisionBody],
    config: &FilterConfig,
    catalog: &BarrierCatalog,
) -> Result<ConstraintSet> {
    let poses = model.forward_kinematics(q)?;
    let mut set = ConstraintSet::default();
    for source in catalog_sources(model, obstacles, catalog) {
        let kind = source_kind(source);
        match evaluate_source(model, q, &poses, obstacles, catalog, source) {
            Ok((h, grad, drift)) => {
                if kind.is_collision() && h >= config.activation_distance {
                    continue;
                }
                set.rows.push(BarrierConstraint {
                    h,
                    grad,
                    alpha: config.alpha.get(kind),
                    epsilon: config.epsilon.get(kind),
                    drift,
                    kind,
                    pair: pair_label(model, obstacles, catalog, source),
                    source,
                });
            }
            Err(Error::DegenerateNormal(pair)) => {
                warn!("dropping {kind} row {pair}: contact normal undefined this cycle");
                set.dropped.push(pair);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub qdot_safe: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Whether slack variables were needed; safety is then not guaranteed.
    pub relaxed: bool,
    /// Per-row flag: the row holds with equality at the solution.
    pub active: Vec<bool>,
    /// Slack used per constraint family when relaxed.
    pub slack: Vec<(BarrierKind, f64)>,
}

/// Rows in the `A q̇ ≥ b` form used by the velocity QP.
pub fn velocity_rows(constraints: &[BarrierConstraint], mode: FilterMode) -> (DMatrix<f64>, DVector<f64>) {
    let n = constraints.first().map_or(0, |c| c.grad.len());
    let mut a = DMatrix::zeros(constraints.len(), n);
    let mut b = DVector::zeros(constraints.len());
    for (i, c) in constraints.iter().enumerate() {
        a.set_row(i, &c.grad.transpose());
        b[i] = c.rhs(mode);
    }
    (a, b)
}

/// Minimally invasive projection of `qdot_des` onto the barrier rows.
pub fn filter_velocity(
    qdot_des: &DVector<f64>,
    constraints: &[BarrierConstraint],
    config: &FilterConfig,
    solver: &mut QpSolver,
) -> Result<FilterOutput> {
    filter_velocity_warm(qdot_des, constraints, config, solver, None)
}

pub fn filter_velocity_warm(
    qdot_des: &DVector<f64>,
    constraints: &[BarrierConstraint],
    config: &FilterConfig,
    solver: &mut QpSolver,
    warm_start: Option<&DVector<f64>>,
) -> Result<FilterOutput> {
    let n = qdot_des.len();
    if let Some(c) = constraints.iter().find(|c| c.grad.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "barrier gradient",
            expected: n,
            got: c.grad.len(),
        });
    }
    let passthrough = |status| FilterOutput {
        qdot_safe: qdot_des.clone(),
        status,
        iterations: 0,
        relaxed: false,
        active: vec![false; constraints.len()],
        slack: vec![],
    };
    if !config.mode.filters_velocity() || constraints.is_empty() {
        return Ok(passthrough(QpStatus::Optimal));
    }

    let (a, b) = velocity_rows(constraints, config.mode);
    let problem = QpProblem::projection(qdot_des).with_inequalities(a.clone(), b.clone());
    let warm = warm_start.filter(|w| w.len() == n);
    let sol = solver.solve(&problem, warm)?;
    match sol.status {
        QpStatus::Optimal => {
            let active = tight_rows(&a, &b, &sol.x);
            return Ok(FilterOutput {
                qdot_safe: sol.x,
                status: QpStatus::Optimal,
                iterations: sol.iterations,
                relaxed: false,
                active,
                slack: vec![],
            });
        }
        QpStatus::MaxIter => return Err(Error::MaxIter { iterations: sol.iterations }),
        QpStatus::Infeasible => {}
    }

    let weight = match config.slack {
        SlackPolicy::HardFail => {
            return Err(Error::Infeasible {
                active: sol.active_set,
            })
        }
        SlackPolicy::SlackRelax { weight } => weight,
    };

    // one shared slack per constraint family
    let mut kinds: Vec<BarrierKind> = constraints.iter().map(|c| c.kind).collect();
    kinds.sort();
    kinds.dedup();
    let ns = kinds.len();
    let m = constraints.len();
    let mut h = DMatrix::zeros(n + ns, n + ns);
    let mut g = DVector::zeros(n + ns);
    for i in 0..n {
        h[(i, i)] = 2.0;
        g[i] = -2.0 * qdot_des[i];
    }
    for k in 0..ns {
        h[(n + k, n + k)] = 2.0 * weight;
    }
    let mut a_ext = DMatrix::zeros(m + ns, n + ns);
    let mut b_ext = DVector::zeros(m + ns);
    for (i, c) in constraints.iter().enumerate() {
        a_ext.view_mut((i, 0), (1, n)).copy_from(&c.grad.transpose());
        let k = kinds.iter().position(|&kk| kk == c.kind).expect("kind listed");
        a_ext[(i, n + k)] = 1.0;
        b_ext[i] = b[i];
    }
    for k in 0..ns {
        a_ext[(m + k, n + k)] = 1.0;
    }
    let relaxed = solver.solve(&QpProblem::new(h, g).with_inequalities(a_ext, b_ext), None)?;
    if relaxed.status != QpStatus::Optimal {
        return Err(Error::Infeasible {
            active: relaxed.active_set,
        });
    }
    let qdot_safe = relaxed.x.rows(0, n).into_owned();
    let slack: Vec<(BarrierKind, f64)> = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| (kind, relaxed.x[n + k]))
        .collect();
    debug!("safety filter relaxed with slack {slack:?}; safety not guaranteed this cycle");
    debug!("relaxed solve took {} iterations", relaxed.iterations);
    let active = tight_rows(&a, &b, &qdot_safe);
    Ok(FilterOutput {
        qdot_safe,
        status: QpStatus::Optimal,
        iterations: sol.iterations + relaxed.iterations,
        relaxed: true,
        active,
        slack,
    })
}

fn tight_rows(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> Vec<bool> {
    let slack = a * x - b;
    slack
        .iter()
        .zip(b.iter())
        .map(|(s, bi)| *s <= 1e-9 * (1.0 + bi.abs()))
        .collect()
}

/// Acceleration-level row `a·q̈ ≥ b` of an exponential CBF.
#[derive(Debug, Clone, PartialEq)]
pub struct EcbfRow {
    pub a: DVector<f64>,
    pub b: f64,
    /// `h_e = ḣ + α h`.
    pub h_e: f64,
    pub kind: BarrierKind,
    pub pair: String,
}

/// Exponential-CBF rows `ḣ_e ≥ −α_e h_e` with `h_e = ḣ + α h`, affine in `q̈`:
///
/// ```text
///     ∇h q̈ ≥ −α_e h_e − α ḣ − (d/dt ∇h) q̇ + d/dt(drift)
/// ```
///
/// `d/dt ∇h` and `d/dt drift` are central differences along the current
/// motion (configuration advanced by `±δ q̇`, obstacles by `±δ v_O`).
/// `alpha_e = None` uses each row's own `α`.
pub fn ecbf_rows(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    obstacles: &[CollisionBody],
    catalog: &BarrierCatalog,
    constraints: &[BarrierConstraint],
    alpha_e: Option<f64>,
) -> Result<Vec<EcbfRow>> {
    let delta = GRADIENT_FD_STEP;
    let shifted = |sign: f64| -> Result<(DVector<f64>, Vec<Isometry3<f64>>, Vec<CollisionBody>)> {
        let qs = q + qd * (sign * delta);
        let poses = model.forward_kinematics(&qs)?;
        let obs = obstacles
            .iter()
            .map(|o| {
                let mut o = o.clone();
                if let Attachment::World { position, velocity } = o.attachment {
                    o.attachment = Attachment::World {
                        position: position + velocity * (sign * delta),
                        velocity,
                    };
                }
                o
            })
            .collect();
        Ok((qs, poses, obs))
    };
    let (q_plus, poses_plus, obs_plus) = shifted(1.0)?;
    let (q_minus, poses_minus, obs_minus) = shifted(-1.0)?;

    let mut rows = Vec::with_capacity(constraints.len());
    for c in constraints {
        let plus = evaluate_source(model, &q_plus, &poses_plus, &obs_plus, catalog, c.source);
        let minus = evaluate_source(model, &q_minus, &poses_minus, &obs_minus, catalog, c.source);
        let ((_, g_plus, d_plus), (_, g_minus, d_minus)) = match (plus, minus) {
            (Ok(p), Ok(m)) => (p, m),
            (Err(Error::DegenerateNormal(pair)), _) | (_, Err(Error::DegenerateNormal(pair))) => {
                warn!("dropping eCBF row {pair}: contact normal undefined this cycle");
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let grad_rate = (g_plus - g_minus) / (2.0 * delta);
        let drift_rate = (d_plus - d_minus) / (2.0 * delta);
        let h_dot = c.grad.dot(qd) - c.drift;
        let h_e = h_dot + c.alpha * c.h;
        let a_e = alpha_e.unwrap_or(c.alpha);
        rows.push(EcbfRow {
            a: c.grad.clone(),
            b: -a_e * h_e - c.alpha * h_dot - grad_rate.dot(qd) + drift_rate,
            h_e,
            kind: c.kind,
            pair: c.pair.clone(),
        });
    }
    Ok(rows)
}

/// An obstacle body at an estimated pose and velocity.
pub fn obstacle_at(template: &CollisionBody, position: Vector3<f64>, velocity: Vector3<f64>) -> CollisionBody {
    CollisionBody {
        attachment: Attachment::World { position, velocity },
        ..template.clone()
    }
}
