//! Scenario files: robot, tasks, obstacles, barrier catalog and configuration
//! of every stage of the loop.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynwbc::DynWbcConfig;
use crate::error::{Error, Result};
use crate::geometry::{AttachedPoint, Attachment, CollisionBody, Shape};
use crate::kinwbc::{Task, TaskSource, DEFAULT_TASK_GAIN};
use crate::model::{JointState, LinkRef, RobotModel};
use crate::safety::{BarrierCatalog, FilterConfig, WorkspaceSpec};
use crate::sim::SimConfig;
use crate::trajectory::Trajectory;

pub const SCENARIO_FORMAT: &str = "issf-wbc/scenario/v1";

fn default_gain() -> f64 {
    DEFAULT_TASK_GAIN
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub priority: u32,
    /// Link of a point task (`joints` must then be absent).
    #[serde(default)]
    pub link: Option<LinkRef>,
    #[serde(default)]
    pub point: [f64; 3],
    /// Joint indices of a joint-space task.
    #[serde(default)]
    pub joints: Option<Vec<usize>>,
    pub trajectory: Trajectory,
    #[serde(default = "default_gain")]
    pub gain: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    pub name: String,
    pub shape: String,
    pub radius: f64,
    #[serde(default)]
    pub p0: [f64; 3],
    #[serde(default)]
    pub p1: Option<[f64; 3]>,
    /// Ground-truth motion of the shape's frame origin.
    pub motion: Trajectory,
    /// Standard deviation of the position measurement, m.
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    /// Link index or name; `-1`/`"base"` for the base.
    pub link: LinkRef,
    #[serde(default)]
    pub point: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceEntry {
    pub name: String,
    pub a: PointEntry,
    pub b: PointEntry,
    pub d_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairList {
    /// `"auto"`: every pair of bodies on non-adjacent links.
    Auto(String),
    Explicit(Vec<[String; 2]>),
}

impl Default for PairList {
    fn default() -> Self {
        PairList::Auto("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format: String,
    pub name: String,
    /// Robot description, relative to the scenario file.
    pub robot: PathBuf,
    pub initial_q: Vec<f64>,
    #[serde(default)]
    pub initial_qd: Option<Vec<f64>>,
    #[serde(default)]
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleEntry>,
    #[serde(default)]
    pub self_collision: PairList,
    /// Robot bodies checked against obstacles; all robot bodies when absent.
    #[serde(default)]
    pub object_bodies: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub joint_limits: bool,
    #[serde(default)]
    pub workspace: Vec<WorkspaceEntry>,
    pub filter: FilterConfig,
    #[serde(default)]
    pub dynwbc: DynWbcConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub priority: u32,
    pub source: TaskSource,
    pub trajectory: Trajectory,
    pub gain: f64,
}

impl TaskSpec {
    /// The task with its reference sampled at `t`.
    pub fn at(&self, t: f64) -> Task {
        let (target, feedforward) = self.trajectory.sample(t);
        Task {
            priority: self.priority,
            source: self.source.clone(),
            target,
            feedforward,
            gain: self.gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSpec {
    /// The body at the world origin; its motion offsets it.
    pub body: CollisionBody,
    pub motion: Trajectory,
    pub noise_std: f64,
}

impl ObstacleSpec {
    /// Ground-truth position and velocity at `t`.
    pub fn truth(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (p, v) = self.motion.sample(t);
        (Vector3::new(p[0], p[1], p[2]), Vector3::new(v[0], v[1], v[2]))
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotModel,
    pub initial: JointState,
    pub tasks: Vec<TaskSpec>,
    pub obstacles: Vec<ObstacleSpec>,
    pub catalog: BarrierCatalog,
    pub filter: FilterConfig,
    pub dynwbc: DynWbcConfig,
    pub sim: SimConfig,
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn resolve_link(model: &RobotModel, link: &LinkRef) -> Result<Option<usize>> {
    match link {
        LinkRef::Index(-1) => Ok(None),
        LinkRef::Name(n) if n == "base" => Ok(None),
        LinkRef::Index(i) if *i >= 0 && (*i as usize) < model.links.len() => Ok(Some(*i as usize)),
        LinkRef::Name(n) => model
            .link_index(n)
            .map(Some)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown link '{n}'"))),
        LinkRef::Index(i) => Err(Error::InvalidConfig(format!("link index {i} out of range"))),
    }
}

fn body_index(model: &RobotModel, name: &str) -> Result<usize> {
    model
        .collision_bodies
        .iter()
        .position(|b| b.name == name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown collision body '{name}'")))
}

impl Scenario {
    /// Read and resolve a scenario; the robot path is taken relative to the
    /// scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file = Self::parse(&text).map_err(|m| parse_error(path, m))?;
        let robot_path = path.parent().unwrap_or(Path::new(".")).join(&file.robot);
        let robot = RobotModel::load(&robot_path)?;
        file.resolve(robot)
            .map_err(|e| parse_error(path, e.to_string()))
    }

    /// Deserialize with the offending field path and line in the message.
    pub fn parse(text: &str) -> std::result::Result<ScenarioFile, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            format!(
                "line {}, column {}, field '{}': {}",
                inner.line(),
                inner.column(),
                e.path(),
                inner
            )
        })
    }

    /// Obstacle bodies at their ground-truth pose at `t`.
    pub fn obstacle_bodies_at(&self, t: f64) -> Vec<CollisionBody> {
        self.obstacles
            .iter()
            .map(|o| {
                let (position, velocity) = o.truth(t);
                CollisionBody {
                    attachment: Attachment::World { position, velocity },
                    ..o.body.clone()
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.robot.n_dof();
        self.filter.validate()?;
        self.dynwbc.validate()?;
        self.sim.validate()?;
        self.catalog.validate(&self.robot)?;
        if self.initial.q.len() != n {
            return Err(Error::DimensionMismatch {
                what: "initial_q",
                expected: n,
                got: self.initial.q.len(),
            });
        }
        if self.tasks.windows(2).any(|w| w[0].priority >= w[1].priority) {
            return Err(Error::InvalidConfig(
                "task priorities must be unique".into(),
            ));
        }
        for task in &self.tasks {
            task.trajectory.validate()?;
            if task.trajectory.dim() != task.source.dim() {
                return Err(Error::InvalidConfig(format!(
                    "task {} trajectory has dimension {}, task has {}",
                    task.priority,
                    task.trajectory.dim(),
                    task.source.dim()
                )));
            }
            if let TaskSource::Joints(j) = &task.source {
                if j.iter().any(|&i| i >= n) {
                    return Err(Error::InvalidConfig(format!(
                        "task {} selects a joint beyond {n}",
                        task.priority
                    )));
                }
            }
            if let Some(end) = task.trajectory.duration() {
                if end < self.sim.duration {
                    return Err(Error::InvalidConfig(format!(
                        "task {} reference ends at {end} s, before the {} s run",
                        task.priority, self.sim.duration
                    )));
                }
            }
            if !(task.gain >= 0.0) {
                return Err(Error::InvalidConfig("task gain must be >= 0".into()));
            }
        }
        for ob in &self.obstacles {
            ob.motion.validate()?;
            ob.body.validate()?;
            if ob.motion.dim() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "obstacle '{}' motion must be 3-D",
                    ob.body.name
                )));
            }
            if !(ob.noise_std >= 0.0) {
                return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
            }
        }
        Ok(())
    }
}

impl ScenarioFile {
    pub fn resolve(self, robot: RobotModel) -> Result<Scenario> {
        if self.format != SCENARIO_FORMAT {
            return Err(Error::InvalidConfig(format!(
                "unsupported format '{}', expected '{SCENARIO_FORMAT}'",
                self.format
            )));
        }
        let n = robot.n_dof();
        let q = DVector::from_vec(self.initial_q);
        let qd = self
            .initial_qd
            .map_or_else(|| DVector::zeros(n), DVector::from_vec);
        if qd.len() != q.len() {
            return Err(Error::DimensionMismatch {
                what: "initial_qd",
                expected: q.len(),
                got: qd.len(),
            });
        }
        let initial = JointState::new(q, qd, 0.0)?;

        let mut tasks = Vec::with_capacity(self.tasks.len());
        for t in self.tasks {
            let source = match (&t.link, t.joints) {
                (Some(link), None) => match resolve_link(&robot, link)? {
                    Some(link) => TaskSource::Point {
                        link,
                        point: Vector3::from(t.point),
                    },
                    None => {
                        return Err(Error::InvalidConfig(format!(
                            "task {} is attached to the base",
                            t.priority
                        )))
                    }
                },
                (None, Some(joints)) => TaskSource::Joints(joints),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "task {} needs exactly one of 'link' or 'joints'",
                        t.priority
                    )))
                }
            };
            tasks.push(TaskSpec {
                priority: t.priority,
                source,
                trajectory: t.trajectory,
                gain: t.gain,
            });
        }
        tasks.sort_by_key(|t| t.priority);

        let obstacles = self
            .obstacles
            .into_iter()
            .map(|o| {
                Ok(ObstacleSpec {
                    body: CollisionBody {
                        name: o.name,
                        shape: Shape::from_entry(&o.shape, o.radius, o.p0, o.p1)?,
                        attachment: Attachment::World {
                            position: Vector3::zeros(),
                            velocity: Vector3::zeros(),
                        },
                    },
                    motion: o.motion,
                    noise_std: o.noise_std,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let self_pairs = match self.self_collision {
            PairList::Auto(s) if s == "auto" => BarrierCatalog::non_adjacent_pairs(&robot),
            PairList::Auto(s) if s == "none" => vec![],
            PairList::Auto(s) => {
                return Err(Error::InvalidConfig(format!(
                    "self_collision must be \"auto\", \"none\" or a pair list, got '{s}'"
                )))
            }
            PairList::Explicit(pairs) => pairs
                .iter()
                .map(|[a, b]| Ok((body_index(&robot, a)?, body_index(&robot, b)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        let object_bodies = match self.object_bodies {
            Some(names) => names
                .iter()
                .map(|n| body_index(&robot, n))
                .collect::<Result<Vec<_>>>()?,
            None => (0..robot.collision_bodies.len()).collect(),
        };
        let workspace = self
            .workspace
            .into_iter()
            .map(|w| {
                Ok(WorkspaceSpec {
                    name: w.name,
                    a: AttachedPoint {
                        link: resolve_link(&robot, &w.a.link)?,
                        point: Vector3::from(w.a.point),
                    },
                    b: AttachedPoint {
                        link: resolve_link(&robot, &w.b.link)?,
                        point: Vector3::from(w.b.point),
                    },
                    d_max: w.d_max,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let scenario = Scenario {
            name: self.name,
            robot,
            initial,
            tasks,
            obstacles,
            catalog: BarrierCatalog {
                self_pairs,
                object_bodies,
                workspace,
                joint_limits: self.joint_limits,
            },
            filter: self.filter,
            dynwbc: self.dynwbc,
            sim: self.sim,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
