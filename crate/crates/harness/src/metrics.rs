//! Scalar metrics over a run trace.

use std::collections::BTreeMap;

use issf_wbc::safety::BarrierKind;
use issf_wbc::sim::RunTrace;

/// Tolerance added to the disturbance-degradation bound.
pub const DEGRADATION_TOLERANCE: f64 = 5e-3;

pub fn collision_rows(trace: &RunTrace) -> Vec<usize> {
    trace
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind.is_collision())
        .map(|(i, _)| i)
        .collect()
}

/// Smallest self/object collision barrier value over the run.
pub fn min_collision_h(trace: &RunTrace) -> Option<f64> {
    collision_rows(trace)
        .into_iter()
        .filter_map(|r| trace.min_h(r))
        .reduce(f64::min)
}

/// Number of maximal contiguous intervals during which any self/object
/// collision barrier is negative.
pub fn collision_events(trace: &RunTrace) -> usize {
    let rows = collision_rows(trace);
    let mut events = 0;
    let mut inside = false;
    for cycle in &trace.cycles {
        let colliding = rows.iter().any(|&r| cycle.h[r] < 0.0);
        if colliding && !inside {
            events += 1;
        }
        inside = colliding;
    }
    events
}

/// Collision events relative to the reference run, clamped to `[0, 1]`.
pub fn remaining_ratio(events: usize, reference: usize) -> f64 {
    match (events, reference) {
        (0, _) => 0.0,
        (_, 0) => 1.0,
        (e, r) => (e as f64 / r as f64).min(1.0),
    }
}

pub fn min_h_per_kind(trace: &RunTrace) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (i, row) in trace.rows.iter().enumerate() {
        if let Some(m) = trace.min_h(i) {
            let entry = out.entry(row.kind.as_str().to_string()).or_insert(m);
            *entry = entry.min(m);
        }
    }
    out
}

/// `max_k ‖q̇_safe,k − q̇_safe,k−1‖ / Δt`.
pub fn jitter(trace: &RunTrace, dt: f64) -> f64 {
    trace
        .cycles
        .windows(2)
        .map(|w| (&w[1].qdot_safe - &w[0].qdot_safe).norm() / dt)
        .fold(0.0, f64::max)
}

/// Mean `‖q̇_safe − q̇_des‖` over the run.
pub fn mean_deviation(trace: &RunTrace) -> f64 {
    if trace.cycles.is_empty() {
        return 0.0;
    }
    let total: f64 = trace
        .cycles
        .iter()
        .map(|c| (&c.qdot_safe - &c.qdot_des).norm())
        .sum();
    total / trace.cycles.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub row: usize,
    pub kind: BarrierKind,
    pub pair: String,
    pub h0: f64,
    pub min_h: f64,
    /// `min(h₀, 0) − ε d̄² / (4α) − tol`.
    pub bound: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.min_h >= self.bound
    }
}

/// Disturbance-degradation bound of every row, using the run's recorded `d̄`.
pub fn degradation_bounds(trace: &RunTrace) -> Vec<BoundCheck> {
    let dbar = trace.dbar();
    let Some(first) = trace.cycles.first() else {
        return vec![];
    };
    trace
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let h0 = first.h[i];
            let erosion = if row.epsilon.is_infinite() {
                f64::INFINITY
            } else {
                row.epsilon * dbar * dbar / (4.0 * row.alpha)
            };
            BoundCheck {
                row: i,
                kind: row.kind,
                pair: row.pair.clone(),
                h0,
                min_h: trace.min_h(i).unwrap_or(h0),
                bound: h0.min(0.0) - erosion - DEGRADATION_TOLERANCE,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_edges() {
        assert_eq!(remaining_ratio(0, 0), 0.0);
        assert_eq!(remaining_ratio(3, 3), 1.0);
        assert_eq!(remaining_ratio(1, 4), 0.25);
        assert_eq!(remaining_ratio(7, 3), 1.0);
        assert_eq!(remaining_ratio(2, 0), 1.0);
    }
}
