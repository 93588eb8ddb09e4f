//! Helpers shared by the integration tests.

#![allow(dead_code)]

pub mod checks;
pub mod qp_oracle;

use std::path::PathBuf;

use issf_wbc::model::{JointState, RobotFile, RobotModel};
use issf_wbc::scenario::Scenario;
use nalgebra::DVector;
use rand::Rng;
use serde_json::json;

pub fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

pub fn planar3() -> RobotModel {
    RobotModel::load(assets().join("robots/planar3.robot")).unwrap()
}

pub fn bundled_scenarios() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(assets().join("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "scenario"))
        .collect();
    paths.sort();
    paths
}

/// Resolve a scenario written inline against the planar arm.
pub fn planar3_scenario(body: serde_json::Value) -> Scenario {
    let mut doc = json!({
        "format": "issf-wbc/scenario/v1",
        "name": "inline",
        "robot": "unused",
        "initial_q": [-0.1, 0.7, 0.3],
        "filter": { "mode": "issf-cbf" },
        "sim": { "duration": 0.5 }
    });
    for (k, v) in body.as_object().unwrap() {
        doc[k] = v.clone();
    }
    Scenario::parse(&doc.to_string())
        .unwrap()
        .resolve(planar3())
        .unwrap()
}

/// Serial chain with random axes, offsets and mass properties. Every link
/// carries a capsule along its offset direction.
pub fn random_chain(rng: &mut impl Rng, n: usize) -> RobotModel {
    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut collision = Vec::new();
    for i in 0..n {
        let offset: Vec<f64> = if i == 0 {
            vec![0.0, 0.0, rng.random_range(0.05..0.15)]
        } else {
            vec![
                rng.random_range(0.1..0.3),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            ]
        };
        let axis = match rng.random_range(0..4) {
            0 => vec![1.0, 0.0, 0.0],
            1 => vec![0.0, 1.0, 0.0],
            2 => vec![0.0, 0.0, 1.0],
            _ => vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.2..1.0),
            ],
        };
        let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.005..0.03));
        links.push(json!({
            "name": format!("l{i}"),
            "parent": i as i64 - 1,
            "origin": {
                "xyz": offset,
                "rpy": [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0]
            },
            "mass": rng.random_range(0.5..3.0),
            "com": [rng.random_range(0.0..0.1), 0.0, 0.0],
            "inertia": [d[0], d[1], d[2], 0.0, 0.0, 0.0]
        }));
        joints.push(json!({
            "name": format!("j{i}"),
            "axis": axis,
            "lower": -2.5,
            "upper": 2.5,
            "velocity": 3.0,
            "effort": 100.0
        }));
        collision.push(json!({
            "name": format!("c{i}"),
            "link": i,
            "shape": "capsule",
            "radius": rng.random_range(0.02..0.05),
            "p0": [0.0, 0.0, 0.0],
            "p1": [0.15, 0.0, 0.0]
        }));
    }
    let file: RobotFile = serde_json::from_value(json!({
        "format": "issf-wbc/robot/v1",
        "name": "random",
        "links": links,
        "joints": joints,
        "collision": collision
    }))
    .unwrap();
    file.into_model().unwrap()
}

pub fn random_state(rng: &mut impl Rng, n: usize, spread: f64) -> JointState {
    JointState::new(
        DVector::from_fn(n, |_, _| rng.random_range(-spread..spread)),
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        0.0,
    )
    .unwrap()
}
