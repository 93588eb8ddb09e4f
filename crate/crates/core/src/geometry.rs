//! Sphere and capsule collision primitives, signed distances and their
//! configuration-space gradients.
//!
//! Both shapes are handled as swept spheres around a centerline segment (a
//! sphere is a zero-length segment), so every query reduces to a
//! segment–segment closest-point problem.

use std::cmp::Ordering;

use nalgebra::{DVector, Isometry3, Point3, RowDVector, Unit, Vector3};

use crate::error::{Error, Result};
use crate::model::RobotModel;

/// Below this centerline separation the contact normal is undefined.
pub const DEGENERATE_SEPARATION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Capsule {
        p0: Vector3<f64>,
        p1: Vector3<f64>,
        radius: f64,
    },
}

impl Shape {
    pub fn radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius, .. } | Shape::Capsule { radius, .. } => radius,
        }
    }

    pub fn from_entry(
        kind: &str,
        radius: f64,
        p0: [f64; 3],
        p1: Option<[f64; 3]>,
    ) -> Result<Self> {
        match (kind, p1) {
            ("sphere", _) => Ok(Shape::Sphere {
                center: p0.into(),
                radius,
            }),
            ("capsule", Some(p1)) => Ok(Shape::Capsule {
                p0: p0.into(),
                p1: p1.into(),
                radius,
            }),
            ("capsule", None) => Err(Error::InvalidModel(
                "capsule requires both p0 and p1".into(),
            )),
            (other, _) => Err(Error::InvalidModel(format!("unknown shape '{other}'"))),
        }
    }

    fn segment(&self) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Shape::Sphere { center, .. } => (center, center),
            Shape::Capsule { p0, p1, .. } => (p0, p1),
        }
    }

    /// Pose the shape's centerline in the world.
    pub fn posed(&self, pose: &Isometry3<f64>) -> Primitive {
        let (a, b) = self.segment();
        Primitive {
            a: (pose * Point3::from(a)).coords,
            b: (pose * Point3::from(b)).coords,
            radius: self.radius(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attachment {
    /// Fixed to the robot base; part of the robot but immobile.
    Base,
    Link(usize),
    /// Environment body; `position` offsets the shape, `velocity` is its
    /// world-frame translational velocity.
    World {
        position: Vector3<f64>,
        velocity: Vector3<f64>,
    },
}

impl Attachment {
    pub fn is_robot(&self) -> bool {
        !matches!(self, Attachment::World { .. })
    }

    pub fn link(&self) -> Option<usize> {
        match self {
            Attachment::Link(i) => Some(*i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionBody {
    pub name: String,
    pub shape: Shape,
    pub attachment: Attachment,
}

impl CollisionBody {
    pub fn validate(&self) -> Result<()> {
        let r = self.shape.radius();
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "collision body '{}' must have a positive radius",
                self.name
            )));
        }
        Ok(())
    }

    /// World-frame centerline of the body given the robot's link poses.
    pub fn primitive(&self, poses: &[Isometry3<f64>]) -> Primitive {
        match self.attachment {
            Attachment::Base => self.shape.posed(&Isometry3::identity()),
            Attachment::Link(i) => self.shape.posed(&poses[i]),
            Attachment::World { position, .. } => {
                self.shape.posed(&Isometry3::translation(position.x, position.y, position.z))
            }
        }
    }

    pub fn velocity(&self) -> Vector3<f64> {
        match self.attachment {
            Attachment::World { velocity, .. } => velocity,
            _ => Vector3::zeros(),
        }
    }
}

/// World-frame swept sphere: all points within `radius` of segment `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Primitive {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Self {
            a: center,
            b: center,
            radius,
        }
    }

    pub fn capsule(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            a: (iso * Point3::from(self.a)).coords,
            b: (iso * Point3::from(self.b)).coords,
            radius: self.radius,
        }
    }

    fn key(&self) -> [f64; 7] {
        [
            self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z, self.radius,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProximityResult {
    /// Signed distance between the surfaces (negative when penetrating).
    pub h: f64,
    /// Closest point on A's centerline.
    pub witness_a: Vector3<f64>,
    /// Closest point on B's centerline.
    pub witness_b: Vector3<f64>,
    /// Unit vector from `witness_b` to `witness_a`; `None` when they coincide.
    pub normal: Option<Unit<Vector3<f64>>>,
    /// +1 when `h >= 0`, -1 otherwise.
    pub sign: f64,
}

impl ProximityResult {
    pub fn is_degenerate(&self) -> bool {
        self.normal.is_none()
    }

    fn swapped(self) -> Self {
        Self {
            h: self.h,
            witness_a: self.witness_b,
            witness_b: self.witness_a,
            normal: self.normal.map(|n| -n),
            sign: self.sign,
        }
    }
}

/// Closest centerline points and signed surface distance between two primitives.
///
/// The result is independent of argument order up to swapping the witnesses.
pub fn closest_points(a: &Primitive, b: &Primitive) -> ProximityResult {
    let swap = a
        .key()
        .iter()
        .zip(b.key().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        == Some(Ordering::Greater);
    if swap {
        closest_points_ordered(b, a).swapped()
    } else {
        closest_points_ordered(a, b)
    }
}

fn closest_points_ordered(a: &Primitive, b: &Primitive) -> ProximityResult {
    let (s, t) = segment_parameters(&a.a, &a.b, &b.a, &b.b);
    let wa = a.a + (a.b - a.a) * s;
    let wb = b.a + (b.b - b.a) * t;
    let delta = wa - wb;
    let dist = delta.norm();
    let h = dist - (a.radius + b.radius);
    let normal = if dist > DEGENERATE_SEPARATION {
        Some(Unit::new_unchecked(delta / dist))
    } else {
        None
    };
    ProximityResult {
        h,
        witness_a: wa,
        witness_b: wb,
        normal,
        sign: if h >= 0.0 { 1.0 } else { -1.0 },
    }
}

/// Segment parameters `(s, t)` in `[0, 1]²` of the closest points between
/// `[p1, q1]` and `[p2, q2]`.
///
/// Parallel segments have a continuum of solutions; the one whose `s` lies
/// nearest the midpoint of the first segment is returned.
pub fn segment_parameters(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (f64, f64) {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let s = if denom > 1e-12 * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        // parallel: every s whose projection lands inside segment 2 is optimal
        let s_at_t0 = -f / b;
        let s_at_t1 = (e - f) / b;
        let lo = s_at_t0.min(s_at_t1).max(0.0);
        let hi = s_at_t0.max(s_at_t1).min(1.0);
        if lo <= hi {
            0.5_f64.clamp(lo, hi)
        } else if s_at_t0.max(s_at_t1) < 0.0 {
            0.0
        } else {
            1.0
        }
    };
    let t = (b * s + f) / e;
    if t < 0.0 {
        ((-c / a).clamp(0.0, 1.0), 0.0)
    } else if t > 1.0 {
        (((b - c) / a).clamp(0.0, 1.0), 1.0)
    } else {
        (s, t)
    }
}

/// Signed distance `h` and gradient `∂h/∂q` for a pair of collision bodies.
///
/// The gradient is `n̂ᵀ(J_A − J_B)` with `n̂` the centerline normal, which is
/// `s·n̂_sdᵀ(J_A − J_B)` written with the signed-distance normal
/// `n̂_sd = s·n̂`. The point Jacobians are taken at the surface points
/// `p = p^r + ρ n̂`; the rotational part of the Jacobian is orthogonal to `n̂`
/// so the projection does not depend on that choice. World-attached bodies
/// contribute no Jacobian.
pub fn barrier_jacobian(
    model: &RobotModel,
    q: &DVector<f64>,
    body_a: &CollisionBody,
    body_b: &CollisionBody,
) -> Result<(f64, RowDVector<f64>)> {
    let poses = model.forward_kinematics(q)?;
    barrier_jacobian_with_poses(model, &poses, body_a, body_b).map(|(p, j)| (p.h, j))
}

pub fn barrier_jacobian_with_poses(
    model: &RobotModel,
    poses: &[Isometry3<f64>],
    body_a: &CollisionBody,
    body_b: &CollisionBody,
) -> Result<(ProximityResult, RowDVector<f64>)> {
    if !body_a.attachment.is_robot() && !body_b.attachment.is_robot() {
        return Err(Error::InvalidConfig(format!(
            "pair {}/{} has no robot-attached body",
            body_a.name, body_b.name
        )));
    }
    for body in [body_a, body_b] {
        if let Some(l) = body.attachment.link() {
            if l >= model.links.len() {
                return Err(Error::InvalidLinkIndex {
                    index: l,
                    n_links: model.links.len(),
                });
            }
        }
    }
    let prox = closest_points(&body_a.primitive(poses), &body_b.primitive(poses));
    let normal = prox
        .normal
        .ok_or_else(|| Error::DegenerateNormal(format!("{}/{}", body_a.name, body_b.name)))?
        .into_inner();
    let p_a = prox.witness_a + normal * body_a.shape.radius();
    let p_b = prox.witness_b + normal * body_b.shape.radius();
    let jac_a = model.world_point_jacobian(poses, body_a.attachment.link(), &p_a);
    let jac_b = model.world_point_jacobian(poses, body_b.attachment.link(), &p_b);
    let grad = normal.transpose() * (jac_a - jac_b);
    Ok((prox, RowDVector::from_row_slice(grad.as_slice())))
}

/// A point rigidly attached to a link (`None` = base).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachedPoint {
    pub link: Option<usize>,
    pub point: Vector3<f64>,
}

/// Workspace boundary `h = d_max − ‖p_A − p_B‖` and its gradient.
///
/// When the two points coincide the barrier sits in the interior of its safe
/// set and a zero gradient is returned.
pub fn workspace_barrier(
    model: &RobotModel,
    q: &DVector<f64>,
    point_a: &AttachedPoint,
    point_b: &AttachedPoint,
    d_max: f64,
) -> Result<(f64, RowDVector<f64>)> {
    let poses = model.forward_kinematics(q)?;
    workspace_barrier_with_poses(model, &poses, point_a, point_b, d_max)
}

pub fn workspace_barrier_with_poses(
    model: &RobotModel,
    poses: &[Isometry3<f64>],
    point_a: &AttachedPoint,
    point_b: &AttachedPoint,
    d_max: f64,
) -> Result<(f64, RowDVector<f64>)> {
    if !(d_max > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "workspace d_max must be positive, got {d_max}"
        )));
    }
    for p in [point_a, point_b] {
        if let Some(l) = p.link {
            if l >= model.links.len() {
                return Err(Error::InvalidLinkIndex {
                    index: l,
                    n_links: model.links.len(),
                });
            }
        }
    }
    let pa = model.point_position(poses, point_a.link, &point_a.point);
    let pb = model.point_position(poses, point_b.link, &point_b.point);
    let delta = pa - pb;
    let dist = delta.norm();
    if dist <= DEGENERATE_SEPARATION {
        return Ok((d_max, RowDVector::zeros(model.n_dof())));
    }
    let n = delta / dist;
    let ja = model.world_point_jacobian(poses, point_a.link, &pa);
    let jb = model.world_point_jacobian(poses, point_b.link, &pb);
    let grad = -(n.transpose() * (ja - jb));
    Ok((d_max - dist, RowDVector::from_row_slice(grad.as_slice())))
}
