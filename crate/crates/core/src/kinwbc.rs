//! Kinematic whole-body control: prioritized differential inverse kinematics.
//!
//! Each task `i` contributes `q̇ᵢ = q̇ᵢ₋₁ + (JᵢNᵢ₋₁)†(ẋᵢ − Jᵢq̇ᵢ₋₁)`, where `Nᵢ₋₁`
//! projects onto the null space of all higher-priority tasks and `†` is an
//! SVD pseudo-inverse with small singular values discarded.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::model::{JointState, RobotModel};

/// Singular values below this fraction of the largest one are treated as zero.
pub const RELATIVE_SINGULAR_CUTOFF: f64 = 1e-4;

/// Control period of the whole-body loop (2 kHz).
pub const DEFAULT_DT: f64 = 5e-4;

pub const DEFAULT_TASK_GAIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    /// World position of a point fixed in a link frame.
    Point { link: usize, point: Vector3<f64> },
    /// Direct selection of joint coordinates.
    Joints(Vec<usize>),
}

impl TaskSource {
    pub fn dim(&self) -> usize {
        match self {
            TaskSource::Point { .. } => 3,
            TaskSource::Joints(j) => j.len(),
        }
    }

    /// Current task value and Jacobian.
    pub fn evaluate(
        &self,
        model: &RobotModel,
        q: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = model.n_dof();
        match self {
            TaskSource::Point { link, point } => {
                let jac = model.point_jacobian(q, *link, point)?;
                let poses = model.forward_kinematics(q)?;
                let x = model.point_position(&poses, Some(*link), point);
                Ok((
                    DVector::from_column_slice(x.as_slice()),
                    DMatrix::from_column_slice(3, n, jac.as_slice()),
                ))
            }
            TaskSource::Joints(idx) => {
                let mut jac = DMatrix::zeros(idx.len(), n);
                let mut x = DVector::zeros(idx.len());
                for (row, &j) in idx.iter().enumerate() {
                    if j >= n {
                        return Err(Error::InvalidConfig(format!(
                            "joint task selects joint {j} of {n}"
                        )));
                    }
                    jac[(row, j)] = 1.0;
                    x[row] = q[j];
                }
                Ok((x, jac))
            }
        }
    }
}

/// One operational-space task with its reference at the current instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// 1 is the highest priority.
    pub priority: u32,
    pub source: TaskSource,
    pub target: DVector<f64>,
    pub feedforward: DVector<f64>,
    /// Position-error feedback gain in 1/s.
    pub gain: f64,
}

impl Task {
    /// Task-space velocity command `ẋ_ff + k (x_target − x)`.
    pub fn command(&self, current: &DVector<f64>) -> DVector<f64> {
        &self.feedforward + (&self.target - current) * self.gain
    }
}

#[derive(Debug, Clone)]
pub struct IkOutput {
    pub qdot_des: DVector<f64>,
    pub q_des: DVector<f64>,
}

/// Per-level quantities of the recursion, kept for inspection.
#[derive(Debug, Clone)]
pub struct PriorityLevel {
    pub qdot: DVector<f64>,
    /// Null-space projector after this level.
    pub projector: DMatrix<f64>,
    /// `Jᵢ Nᵢ₋₁`.
    pub projected_jacobian: DMatrix<f64>,
}

/// Pseudo-inverse from a truncated SVD.
pub fn truncated_pinv(jac: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_above(jac, 0.0)
}

/// Truncated pseudo-inverse that also discards singular values below
/// `floor`. Within the recursion the floor is set from the unprojected task
/// Jacobian, so directions removed by higher priorities stay removed even
/// when round-off leaves them slightly non-zero.
pub fn pinv_above(jac: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (rows, cols) = jac.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    // Eigen-decomposition of the smaller Gram matrix: σᵢ² are its
    // eigenvalues. nalgebra's bidiagonal SVD loses accuracy on some
    // rank-deficient inputs, the symmetric eigensolver does not.
    let wide = rows <= cols;
    let gram = if wide { jac * jac.transpose() } else { jac.transpose() * jac };
    let eig = SymmetricEigen::new(gram);
    let lambda_max = eig.eigenvalues.max().max(0.0);
    let cutoff = (RELATIVE_SINGULAR_CUTOFF * lambda_max.sqrt()).max(floor);
    let k = eig.eigenvalues.len();
    let mut inv = DMatrix::zeros(k, k);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 && l.sqrt() > cutoff {
            let v = eig.eigenvectors.column(i);
            inv += v * v.transpose() / l;
        }
    }
    if wide {
        jac.transpose() * inv
    } else {
        inv * jac.transpose()
    }
}

/// The prioritized recursion on precomputed Jacobians and task-space commands.
pub fn prioritized_velocities(
    n_dof: usize,
    jacobians: &[DMatrix<f64>],
    commands: &[DVector<f64>],
) -> Result<(DVector<f64>, Vec<PriorityLevel>)> {
    if jacobians.len() != commands.len() {
        return Err(Error::DimensionMismatch {
            what: "task commands",
            expected: jacobians.len(),
            got: commands.len(),
        });
    }
    let mut qdot = DVector::zeros(n_dof);
    let mut projector = DMatrix::identity(n_dof, n_dof);
    let mut levels = Vec::with_capacity(jacobians.len());
    for (jac, cmd) in jacobians.iter().zip(commands) {
        if jac.ncols() != n_dof {
            return Err(Error::DimensionMismatch {
                what: "task Jacobian columns",
                expected: n_dof,
                got: jac.ncols(),
            });
        }
        if jac.nrows() != cmd.len() {
            return Err(Error::DimensionMismatch {
                what: "task dimension",
                expected: jac.nrows(),
                got: cmd.len(),
            });
        }
        let projected = jac * &projector;
        let pinv = pinv_above(&projected, RELATIVE_SINGULAR_CUTOFF * jac.norm());
        qdot += &pinv * (cmd - jac * &qdot);
        projector -= &pinv * &projected;
        levels.push(PriorityLevel {
            qdot: qdot.clone(),
            projector: projector.clone(),
            projected_jacobian: projected,
        });
    }
    Ok((qdot, levels))
}

/// Nominal joint-velocity command and its integrated position reference.
pub fn prioritized_ik(
    model: &RobotModel,
    state: &JointState,
    tasks: &[Task],
    dt: f64,
) -> Result<IkOutput> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if tasks.windows(2).any(|w| w[0].priority >= w[1].priority) {
        return Err(Error::InvalidConfig(
            "task priorities must be strictly increasing".into(),
        ));
    }
    let mut jacobians = Vec::with_capacity(tasks.len());
    let mut commands = Vec::with_capacity(tasks.len());
    for task in tasks {
        let (x, jac) = task.source.evaluate(model, &state.q)?;
        if task.target.len() != jac.nrows() || task.feedforward.len() != jac.nrows() {
            return Err(Error::DimensionMismatch {
                what: "task reference",
                expected: jac.nrows(),
                got: task.target.len(),
            });
        }
        commands.push(task.command(&x));
        jacobians.push(jac);
    }
    let (qdot_des, _) = prioritized_velocities(model.n_dof(), &jacobians, &commands)?;
    let q_des = &state.q + &qdot_des * dt;
    Ok(IkOutput { qdot_des, q_des })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::planar_chain;
    use approx::assert_relative_eq;

    #[test]
    fn identity_task_passes_command_through() {
        let cmd = DVector::from_vec(vec![0.1, -0.4, 2.0]);
        let (qd, _) = prioritized_velocities(3, &[DMatrix::identity(3, 3)], &[cmd.clone()]).unwrap();
        assert_relative_eq!(qd, cmd, epsilon = 1e-14);
    }

    #[test]
    fn two_scalar_tasks_hand_computed() {
        let (a, b) = (0.7, -0.2);
        let j1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let j2 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (qd, _) = prioritized_velocities(
            2,
            &[j1, j2],
            &[DVector::from_element(1, a), DVector::from_element(1, b)],
        )
        .unwrap();
        assert_relative_eq!(qd, DVector::from_vec(vec![a, b - a]), epsilon = 1e-14);
    }

    #[test]
    fn singular_configuration_stays_bounded() {
        // fully stretched 2-link arm commanded further outward along x
        let model = planar_chain(&[0.5, 0.5], &[1.0, 1.0]);
        let state = JointState::at_rest(DVector::zeros(2));
        let xdot = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let task = Task {
            priority: 1,
            source: TaskSource::Point {
                link: 1,
                point: Vector3::new(0.5, 0.0, 0.0),
            },
            target: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            feedforward: xdot.clone(),
            gain: 0.0,
        };
        let out = prioritized_ik(&model, &state, &[task.clone()], DEFAULT_DT).unwrap();
        let (_, jac) = task.source.evaluate(&model, &state.q).unwrap();
        let sigma_max = jac.singular_values().max();
        let bound = xdot.norm() / (RELATIVE_SINGULAR_CUTOFF * sigma_max);
        assert!(out.qdot_des.iter().all(|v| v.is_finite()));
        assert!(out.qdot_des.norm() <= bound);
        // the outward direction is unreachable, so nothing should move
        assert!(out.qdot_des.norm() < 1e-9);
    }

    #[test]
    fn position_reference_is_integrated() {
        let model = planar_chain(&[0.5, 0.5], &[1.0, 1.0]);
        let state = JointState::at_rest(DVector::from_vec(vec![0.3, 0.6]));
        let task = Task {
            priority: 1,
            source: TaskSource::Joints(vec![0, 1]),
            target: DVector::from_vec(vec![0.4, 0.5]),
            feedforward: DVector::zeros(2),
            gain: 5.0,
        };
        let out = prioritized_ik(&model, &state, &[task], 0.01).unwrap();
        assert_relative_eq!(out.qdot_des, DVector::from_vec(vec![0.5, -0.5]), epsilon = 1e-12);
        assert_relative_eq!(out.q_des, DVector::from_vec(vec![0.305, 0.595]), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_stacks() {
        let model = planar_chain(&[0.5, 0.5], &[1.0, 1.0]);
        let state = JointState::at_rest(DVector::zeros(2));
        let t = |priority| Task {
            priority,
            source: TaskSource::Joints(vec![0]),
            target: DVector::zeros(1),
            feedforward: DVector::zeros(1),
            gain: 1.0,
        };
        assert!(prioritized_ik(&model, &state, &[t(2), t(1)], DEFAULT_DT).is_err());
        let mut bad = t(1);
        bad.target = DVector::zeros(2);
        assert!(matches!(
            prioritized_ik(&model, &state, &[bad], DEFAULT_DT),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(prioritized_ik(&model, &state, &[t(1)], 0.0).is_err());
    }
}
