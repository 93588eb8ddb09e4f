//! Fixed-base serial-chain robot description, kinematics and rigid-body dynamics.
//!
//! Link `i` is carried by revolute joint `i`. Its frame is obtained from the
//! parent frame by the fixed `origin` transform followed by a rotation of
//! `q[i]` about the joint axis (expressed in the link frame). The base frame is
//! the world frame.

use std::path::Path;

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Matrix3xX, Point3, Translation3, Unit, UnitQuaternion,
    Vector3,
};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{Attachment, CollisionBody, Shape};

pub const ROBOT_FORMAT: &str = "issf-wbc/robot/v1";

/// Standard gravity acting along world -z.
pub fn default_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, link frame axes.
    pub inertia: Matrix3<f64>,
    /// `None` for the link attached to the fixed base.
    pub parent: Option<usize>,
    /// Fixed transform from the parent frame to the joint frame.
    pub origin: Isometry3<f64>,
}

#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub axis: Unit<Vector3<f64>>,
    pub q_min: f64,
    pub q_max: f64,
    pub velocity_limit: f64,
    pub torque_limit: f64,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub collision_bodies: Vec<CollisionBody>,
}

/// Joint-space state. The reduced-order state of the velocity filter is `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub t: f64,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>, t: f64) -> Result<Self> {
        check_dim("joint velocity", q.len(), qd.len())?;
        if !(q.iter().chain(qd.iter()).all(|v| v.is_finite()) && t.is_finite()) {
            return Err(Error::NonFinite {
                t,
                detail: "joint state".into(),
            });
        }
        Ok(Self { q, qd, t })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
            t: 0.0,
        }
    }
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        links: Vec<LinkSpec>,
        joints: Vec<JointSpec>,
        collision_bodies: Vec<CollisionBody>,
    ) -> Result<Self> {
        let model = Self {
            name: name.into(),
            links,
            joints,
            collision_bodies,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.links.is_empty() {
            return bad("model has no links".into());
        }
        if self.links.len() != self.joints.len() {
            return bad(format!(
                "{} links but {} joints",
                self.links.len(),
                self.joints.len()
            ));
        }
        for (i, link) in self.links.iter().enumerate() {
            let expected = i.checked_sub(1);
            if link.parent != expected {
                return bad(format!(
                    "link '{}' must have parent {:?} in a serial chain",
                    link.name, expected
                ));
            }
            if !(link.mass > 0.0 && link.mass.is_finite()) {
                return bad(format!("link '{}' has non-positive mass", link.name));
            }
            let sym_err = (link.inertia - link.inertia.transpose()).abs().max();
            if sym_err > 1e-12 * (1.0 + link.inertia.abs().max()) {
                return bad(format!("link '{}' inertia is not symmetric", link.name));
            }
            if link.inertia.cholesky().is_none() {
                return bad(format!(
                    "link '{}' inertia is not positive definite",
                    link.name
                ));
            }
        }
        for joint in &self.joints {
            if !(joint.q_min < joint.q_max) {
                return bad(format!("joint '{}' has q_min >= q_max", joint.name));
            }
            if !(joint.velocity_limit > 0.0 && joint.torque_limit > 0.0) {
                return bad(format!("joint '{}' limits must be positive", joint.name));
            }
        }
        for body in &self.collision_bodies {
            body.validate()?;
            match body.attachment {
                Attachment::Link(l) if l >= self.links.len() => {
                    return bad(format!(
                        "collision body '{}' references link {l}",
                        body.name
                    ))
                }
                Attachment::World { .. } => {
                    return bad(format!(
                        "collision body '{}' in a robot description cannot be world-attached",
                        body.name
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_dof(&self) -> usize {
        self.joints.len()
    }

    pub fn q_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_dof(), self.joints.iter().map(|j| j.q_min))
    }

    pub fn q_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_dof(), self.joints.iter().map(|j| j.q_max))
    }

    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_dof(), self.joints.iter().map(|j| j.torque_limit))
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn collision_body(&self, name: &str) -> Option<&CollisionBody> {
        self.collision_bodies.iter().find(|b| b.name == name)
    }

    /// Copy of the model with every link mass and inertia multiplied by `scale`.
    pub fn with_mass_scale(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mass scale must be positive, got {scale}"
            )));
        }
        let mut scaled = self.clone();
        for link in &mut scaled.links {
            link.mass *= scale;
            link.inertia *= scale;
        }
        Ok(scaled)
    }

    /// World-frame pose of every link frame.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Vec<Isometry3<f64>>> {
        check_dim("configuration", self.n_dof(), q.len())?;
        let mut poses: Vec<Isometry3<f64>> = Vec::with_capacity(self.links.len());
        for (i, (link, joint)) in self.links.iter().zip(&self.joints).enumerate() {
            let parent = match link.parent {
                Some(p) => poses[p],
                None => Isometry3::identity(),
            };
            let rot = UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
            poses.push(parent * link.origin * Isometry3::from_parts(Translation3::identity(), rot));
        }
        Ok(poses)
    }

    /// World position of a point rigidly attached to a link (or the base).
    pub fn point_position(
        &self,
        poses: &[Isometry3<f64>],
        attachment: Option<usize>,
        point: &Vector3<f64>,
    ) -> Vector3<f64> {
        match attachment {
            Some(l) => (poses[l] * Point3::from(*point)).coords,
            None => *point,
        }
    }

    /// Translational Jacobian `∂p/∂q` of a point fixed in `link_index`'s frame.
    pub fn point_jacobian(
        &self,
        q: &DVector<f64>,
        link_index: usize,
        point_in_link: &Vector3<f64>,
    ) -> Result<Matrix3xX<f64>> {
        if link_index >= self.links.len() {
            return Err(Error::InvalidLinkIndex {
                index: link_index,
                n_links: self.links.len(),
            });
        }
        let poses = self.forward_kinematics(q)?;
        let p = (poses[link_index] * Point3::from(*point_in_link)).coords;
        Ok(self.world_point_jacobian(&poses, Some(link_index), &p))
    }

    /// Jacobian of a world-frame point `p_world` moving rigidly with `attachment`.
    ///
    /// Base-attached points (`None`) have a zero Jacobian.
    pub fn world_point_jacobian(
        &self,
        poses: &[Isometry3<f64>],
        attachment: Option<usize>,
        p_world: &Vector3<f64>,
    ) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(self.n_dof());
        if let Some(link) = attachment {
            // serial chain: joints 0..=link lie on the path from the base
            for j in 0..=link {
                let axis = poses[j].rotation * self.joints[j].axis.into_inner();
                let origin = poses[j].translation.vector;
                jac.set_column(j, &axis.cross(&(p_world - origin)));
            }
        }
        jac
    }

    /// Joint-space inertia matrix `M(q)`.
    ///
    /// Column `j` is the inverse-dynamics torque for unit acceleration of
    /// joint `j` with zero velocity and gravity.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n_dof();
        let poses = self.forward_kinematics(q)?;
        let zero = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut qdd = DVector::zeros(n);
            qdd[j] = 1.0;
            let col = self.rnea(&poses, &zero, &qdd, &Vector3::zeros());
            m.set_column(j, &col);
        }
        // remove round-off asymmetry
        let sym = (&m + m.transpose()) * 0.5;
        Ok(sym)
    }

    /// Coriolis, centrifugal and gravity torques `h(q, q̇)`.
    pub fn bias_forces(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("joint velocity", self.n_dof(), qd.len())?;
        let poses = self.forward_kinematics(q)?;
        Ok(self.rnea(&poses, qd, &DVector::zeros(self.n_dof()), gravity))
    }

    pub fn inverse_dynamics(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("joint velocity", self.n_dof(), qd.len())?;
        check_dim("joint acceleration", self.n_dof(), qdd.len())?;
        let poses = self.forward_kinematics(q)?;
        Ok(self.rnea(&poses, qd, qdd, gravity))
    }

    /// `q̈ = M(q)⁻¹ (τ − h(q, q̇))`.
    pub fn forward_dynamics(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        tau: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("torque", self.n_dof(), tau.len())?;
        let m = self.mass_matrix(q)?;
        let h = self.bias_forces(q, qd, gravity)?;
        let chol = m.cholesky().ok_or_else(|| {
            Error::InvalidModel("mass matrix lost positive definiteness".into())
        })?;
        Ok(chol.solve(&(tau - h)))
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        let m = self.mass_matrix(q)?;
        Ok(0.5 * qd.dot(&(m * qd)))
    }

    pub fn potential_energy(&self, q: &DVector<f64>, gravity: &Vector3<f64>) -> Result<f64> {
        let poses = self.forward_kinematics(q)?;
        Ok(self
            .links
            .iter()
            .zip(&poses)
            .map(|(link, pose)| -link.mass * gravity.dot(&(pose * Point3::from(link.com)).coords))
            .sum())
    }

    /// Recursive Newton–Euler in world coordinates.
    ///
    /// Gravity enters as an upward acceleration of the base.
    fn rnea(
        &self,
        poses: &[Isometry3<f64>],
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> DVector<f64> {
        let n = self.n_dof();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut com_offsets = Vec::with_capacity(n);
        let mut omega = Vec::with_capacity(n);
        let mut omega_dot = Vec::with_capacity(n);
        let mut acc_com = Vec::with_capacity(n);

        let mut w_prev = Vector3::zeros();
        let mut wd_prev = Vector3::zeros();
        let mut a_prev = -gravity;
        let mut o_prev = Vector3::zeros();
        for i in 0..n {
            let pose = &poses[i];
            let z = pose.rotation * self.joints[i].axis.into_inner();
            let o = pose.translation.vector;
            let r = o - o_prev;
            let a_o = a_prev + wd_prev.cross(&r) + w_prev.cross(&w_prev.cross(&r));
            let w = w_prev + z * qd[i];
            let wd = wd_prev + z * qdd[i] + w_prev.cross(&(z * qd[i]));
            let c = pose.rotation * self.links[i].com;
            let a_c = a_o + wd.cross(&c) + w.cross(&w.cross(&c));

            axes.push(z);
            origins.push(o);
            com_offsets.push(c);
            omega.push(w);
            omega_dot.push(wd);
            acc_com.push(a_c);

            w_prev = w;
            wd_prev = wd;
            a_prev = a_o;
            o_prev = o;
        }

        let mut tau = DVector::zeros(n);
        let mut f_next = Vector3::zeros();
        let mut n_next = Vector3::zeros();
        for i in (0..n).rev() {
            let link = &self.links[i];
            let rot = poses[i].rotation.to_rotation_matrix();
            let inertia_world = rot.matrix() * link.inertia * rot.matrix().transpose();
            let force = acc_com[i] * link.mass;
            let torque = inertia_world * omega_dot[i] + omega[i].cross(&(inertia_world * omega[i]));
            let lever_next = if i + 1 < n {
                origins[i + 1] - origins[i]
            } else {
                Vector3::zeros()
            };
            let f = force + f_next;
            let moment = torque + n_next + com_offsets[i].cross(&force) + lever_next.cross(&f_next);
            tau[i] = axes[i].dot(&moment);
            f_next = f;
            n_next = moment;
        }
        tau
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: RobotFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<robot>".into(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: RobotFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn to_file(&self) -> RobotFile {
        RobotFile::from_model(self)
    }
}

// ---------------------------------------------------------------------------
// On-disk description

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFile {
    pub format: String,
    pub name: String,
    pub links: Vec<LinkEntry>,
    pub joints: Vec<JointEntry>,
    #[serde(default)]
    pub collision: Vec<CollisionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginEntry {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub name: String,
    /// Parent link index; `-1` for the base.
    pub parent: i64,
    pub origin: OriginEntry,
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the center of mass.
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub name: String,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
    pub effort: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkRef {
    Index(i64),
    Name(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionEntry {
    pub name: String,
    /// Link index or name; `-1` or `"base"` attaches to the fixed base.
    pub link: LinkRef,
    pub shape: String,
    pub radius: f64,
    #[serde(default)]
    pub p0: [f64; 3],
    #[serde(default)]
    pub p1: Option<[f64; 3]>,
}

impl RobotFile {
    pub fn into_model(self) -> Result<RobotModel> {
        if self.format != ROBOT_FORMAT {
            return Err(Error::InvalidModel(format!(
                "unsupported format '{}', expected '{ROBOT_FORMAT}'",
                self.format
            )));
        }
        let links = self
            .links
            .iter()
            .map(|l| {
                let [ixx, iyy, izz, ixy, ixz, iyz] = l.inertia;
                Ok(LinkSpec {
                    name: l.name.clone(),
                    mass: l.mass,
                    com: Vector3::from(l.com),
                    inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
                    parent: match l.parent {
                        -1 => None,
                        p if p >= 0 => Some(p as usize),
                        p => {
                            return Err(Error::InvalidModel(format!(
                                "link '{}' has parent {p}",
                                l.name
                            )))
                        }
                    },
                    origin: Isometry3::from_parts(
                        Translation3::from(Vector3::from(l.origin.xyz)),
                        UnitQuaternion::from_euler_angles(
                            l.origin.rpy[0],
                            l.origin.rpy[1],
                            l.origin.rpy[2],
                        ),
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let axis = Vector3::from(j.axis);
                let axis = Unit::try_new(axis, 1e-9).ok_or_else(|| {
                    Error::InvalidModel(format!("joint '{}' has a zero axis", j.name))
                })?;
                Ok(JointSpec {
                    name: j.name.clone(),
                    axis,
                    q_min: j.lower,
                    q_max: j.upper,
                    velocity_limit: j.velocity,
                    torque_limit: j.effort,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let collision = self
            .collision
            .iter()
            .map(|c| {
                let attachment = match &c.link {
                    LinkRef::Index(-1) => Attachment::Base,
                    LinkRef::Index(i) if *i >= 0 => Attachment::Link(*i as usize),
                    LinkRef::Name(n) if n == "base" => Attachment::Base,
                    LinkRef::Name(n) => Attachment::Link(
                        links.iter().position(|l| &l.name == n).ok_or_else(|| {
                            Error::InvalidModel(format!(
                                "collision body '{}' references unknown link '{n}'",
                                c.name
                            ))
                        })?,
                    ),
                    LinkRef::Index(i) => {
                        return Err(Error::InvalidModel(format!(
                            "collision body '{}' references link {i}",
                            c.name
                        )))
                    }
                };
                Ok(CollisionBody {
                    name: c.name.clone(),
                    shape: Shape::from_entry(&c.shape, c.radius, c.p0, c.p1)?,
                    attachment,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RobotModel::new(self.name, links, joints, collision)
    }

    pub fn from_model(model: &RobotModel) -> Self {
        let links = model
            .links
            .iter()
            .map(|l| {
                let (r, p, y) = l.origin.rotation.euler_angles();
                let i = &l.inertia;
                LinkEntry {
                    name: l.name.clone(),
                    parent: l.parent.map_or(-1, |p| p as i64),
                    origin: OriginEntry {
                        xyz: l.origin.translation.vector.into(),
                        rpy: [r, p, y],
                    },
                    mass: l.mass,
                    com: l.com.into(),
                    inertia: [i[(0, 0)], i[(1, 1)], i[(2, 2)], i[(0, 1)], i[(0, 2)], i[(1, 2)]],
                }
            })
            .collect();
        let joints = model
            .joints
            .iter()
            .map(|j| JointEntry {
                name: j.name.clone(),
                axis: j.axis.into_inner().into(),
                lower: j.q_min,
                upper: j.q_max,
                velocity: j.velocity_limit,
                effort: j.torque_limit,
            })
            .collect();
        let collision = model
            .collision_bodies
            .iter()
            .map(|b| {
                let link = match b.attachment {
                    Attachment::Link(i) => LinkRef::Index(i as i64),
                    _ => LinkRef::Index(-1),
                };
                let (shape, radius, p0, p1) = match b.shape {
                    Shape::Sphere { center, radius } => ("sphere", radius, center.into(), None),
                    Shape::Capsule { p0, p1, radius } => {
                        ("capsule", radius, p0.into(), Some(p1.into()))
                    }
                };
                CollisionEntry {
                    name: b.name.clone(),
                    link,
                    shape: shape.into(),
                    radius,
                    p0,
                    p1,
                }
            })
            .collect();
        Self {
            format: ROBOT_FORMAT.into(),
            name: model.name.clone(),
            links,
            joints,
            collision,
        }
    }
}
