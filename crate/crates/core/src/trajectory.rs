//! Time-parameterized task references.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    Hold {
        position: Vec<f64>,
    },
    /// `c + r (cos θ u + sin θ v)`; `θ` accelerates uniformly from rest over
    /// `ramp` seconds, then advances at `2π / period`.
    Circle {
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        radius: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        ramp: f64,
    },
    /// Cubic Hermite spline through the waypoints with Catmull–Rom interior
    /// tangents and zero velocity at both ends; holds the last point afterwards.
    Waypoints {
        times: Vec<f64>,
        points: Vec<Vec<f64>>,
    },
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        match self {
            Trajectory::Hold { position } => position.len(),
            Trajectory::Circle { .. } => 3,
            Trajectory::Waypoints { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    /// Time after which the reference is defined by holding its final value;
    /// `None` for references defined for all time.
    pub fn duration(&self) -> Option<f64> {
        match self {
            Trajectory::Waypoints { times, .. } => times.last().copied(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        match self {
            Trajectory::Hold { position } if position.is_empty() => bad("empty hold position"),
            Trajectory::Circle { period, radius, ramp, .. } => {
                if !(*period > 0.0) || !(*radius >= 0.0) || !(*ramp >= 0.0) {
                    bad("circle needs period > 0, radius >= 0, ramp >= 0")
                } else {
                    Ok(())
                }
            }
            Trajectory::Waypoints { times, points } => {
                if times.is_empty() || times.len() != points.len() {
                    return bad("waypoints need matching, non-empty times and points");
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("waypoint times must be strictly increasing");
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d) {
                    return bad("waypoints must share a non-zero dimension");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Reference position and velocity at time `t`.
    pub fn sample(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        match self {
            Trajectory::Hold { position } => (
                DVector::from_column_slice(position),
                DVector::zeros(position.len()),
            ),
            Trajectory::Circle {
                center,
                u,
                v,
                radius,
                period,
                phase,
                ramp,
            } => {
                let omega = 2.0 * std::f64::consts::PI / period;
                let (angle, rate) = if t < *ramp {
                    (omega * t * t / (2.0 * ramp), omega * t / ramp)
                } else {
                    (omega * (t - ramp / 2.0), omega)
                };
                let theta = angle + phase;
                let (c, u, v) = (Vector3::from(*center), Vector3::from(*u), Vector3::from(*v));
                let pos = c + (u * theta.cos() + v * theta.sin()) * *radius;
                let vel = (-u * theta.sin() + v * theta.cos()) * (*radius * rate);
                (
                    DVector::from_column_slice(pos.as_slice()),
                    DVector::from_column_slice(vel.as_slice()),
                )
            }
            Trajectory::Waypoints { times, points } => hermite(times, points, t),
        }
    }
}

fn hermite(times: &[f64], points: &[Vec<f64>], t: f64) -> (DVector<f64>, DVector<f64>) {
    let d = points[0].len();
    let last = times.len() - 1;
    if t <= times[0] {
        return (DVector::from_column_slice(&points[0]), DVector::zeros(d));
    }
    if t >= times[last] {
        return (DVector::from_column_slice(&points[last]), DVector::zeros(d));
    }
    let k = times.partition_point(|&ti| ti <= t) - 1;
    let tangent = |i: usize| -> DVector<f64> {
        if i == 0 || i == last {
            DVector::zeros(d)
        } else {
            (DVector::from_column_slice(&points[i + 1]) - DVector::from_column_slice(&points[i - 1]))
                / (times[i + 1] - times[i - 1])
        }
    };
    let h = times[k + 1] - times[k];
    let s = (t - times[k]) / h;
    let (p0, p1) = (
        DVector::from_column_slice(&points[k]),
        DVector::from_column_slice(&points[k + 1]),
    );
    let (m0, m1) = (tangent(k) * h, tangent(k + 1) * h);
    let (s2, s3) = (s * s, s * s * s);
    let pos = &p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + &m0 * (s3 - 2.0 * s2 + s)
        + &p1 * (-2.0 * s3 + 3.0 * s2)
        + &m1 * (s3 - s2);
    let vel = (&p0 * (6.0 * s2 - 6.0 * s)
        + &m0 * (3.0 * s2 - 4.0 * s + 1.0)
        + &p1 * (-6.0 * s2 + 6.0 * s)
        + &m1 * (3.0 * s2 - 2.0 * s))
        / h;
    (pos, vel)
}
