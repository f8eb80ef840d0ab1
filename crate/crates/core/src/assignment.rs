//! Optimal agent-to-slot allocation and slot tracking.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("allocation needs at least one agent")]
    Empty,
    #[error("{agents} agents but {slots} slots")]
    SizeMismatch { agents: usize, slots: usize },
    #[error("cost matrix contains a non-finite entry")]
    NonFinite,
}

/// Solves the square linear assignment problem `min Σ cost[i][p(i)]` with the
/// shortest-augmenting-path Hungarian method. Returns `p` with `p[row] = col`.
pub fn solve_lap(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64), AssignmentError> {
    let n = cost.len();
    if n == 0 {
        return Err(AssignmentError::Empty);
    }
    if cost.iter().any(|row| row.len() != n) {
        return Err(AssignmentError::SizeMismatch { agents: n, slots: cost[0].len() });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(AssignmentError::NonFinite);
    }
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    let total = assignment.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    Ok((assignment, total))
}

/// Optimal assignment, ties resolved towards the lexicographically smallest
/// permutation (costs within `1e-9` relative of the optimum count as ties).
pub fn solve_lap_lexicographic(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64), AssignmentError> {
    let (_, best) = solve_lap(cost)?;
    let n = cost.len();
    let tol = 1e-9 * best.abs().max(1.0);
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let free: Vec<usize> = (0..n).filter(|c| !fixed.contains(c)).collect();
        let mut chosen = None;
        for &col in &free {
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&c| c != col).collect();
            let rest = if rest_cols.is_empty() {
                0.0
            } else {
                let sub: Vec<Vec<f64>> =
                    (row + 1..n).map(|r| rest_cols.iter().map(|&c| cost[r][c]).collect()).collect();
                solve_lap(&sub)?.1
            };
            if fixed_cost + cost[row][col] + rest <= best + tol {
                chosen = Some(col);
                break;
            }
        }
        // The optimum is always reachable from a consistent prefix.
        let col = chosen.unwrap_or(free[0]);
        fixed_cost += cost[row][col];
        fixed.push(col);
    }
    Ok((fixed, fixed_cost))
}

/// Slot positions in the formation's local frame, centred on their centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGeometry {
    slots: Vec<Vec3>,
}

impl SlotGeometry {
    pub fn new(slots: &[Vec3]) -> Self {
        let centroid = slots.iter().sum::<Vec3>() / slots.len().max(1) as f64;
        Self { slots: slots.iter().map(|s| s - centroid).collect() }
    }

    pub fn slots(&self) -> &[Vec3] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Eight-agent delta (arrowhead) pointing along local +x, with altitude
    /// offsets so the 18-edge constraint graph is rigid in 3D.
    pub fn delta8() -> Self {
        Self::new(&DELTA8_SLOTS.map(|[x, y, z]| Vec3::new(x, y, z)))
    }
}

/// Local slot coordinates (x forward, y left, z up) of the default delta, m.
pub const DELTA8_SLOTS: [[f64; 3]; 8] = [
    [6.0, 0.0, 0.0],
    [3.0, 1.5, 0.8],
    [3.0, -1.5, -0.8],
    [0.0, 3.0, -0.6],
    [0.0, 0.0, 0.9],
    [0.0, -3.0, -0.5],
    [-3.0, 4.5, 0.6],
    [-3.0, -4.5, 0.7],
];

/// Result of slot allocation: `slot_of[agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub slot_of: Vec<usize>,
    pub cost: f64,
}

impl Allocation {
    /// `agent_of[slot]`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.slot_of.len()];
        for (agent, &slot) in self.slot_of.iter().enumerate() {
            inv[slot] = agent;
        }
        inv
    }
}

/// Euclidean cost matrix `‖r_i − S_j‖`.
pub fn cost_matrix(agents: &[Vec3], slots: &[Vec3]) -> Vec<Vec<f64>> {
    agents.iter().map(|a| slots.iter().map(|s| (a - s).norm()).collect()).collect()
}

/// Assigns agents (positions relative to the formation centre, in local axes)
/// to slots minimising the total travel distance.
pub fn allocate(agents_rel: &[Vec3], geometry: &SlotGeometry) -> Result<Allocation, AssignmentError> {
    if agents_rel.is_empty() {
        return Err(AssignmentError::Empty);
    }
    if agents_rel.len() != geometry.len() {
        return Err(AssignmentError::SizeMismatch { agents: agents_rel.len(), slots: geometry.len() });
    }
    let (slot_of, cost) = solve_lap_lexicographic(&cost_matrix(agents_rel, geometry.slots()))?;
    Ok(Allocation { slot_of, cost })
}

/// Allocation from inertial agent positions: positions are taken relative to
/// their centroid and rotated into the formation frame `attitude` (`T_L^I`).
pub fn allocate_inertial(
    positions: &[Vec3],
    attitude: &Mat3,
    geometry: &SlotGeometry,
) -> Result<Allocation, AssignmentError> {
    if positions.is_empty() {
        return Err(AssignmentError::Empty);
    }
    let centroid = positions.iter().sum::<Vec3>() / positions.len() as f64;
    let local: Vec<Vec3> = positions.iter().map(|p| attitude.transpose() * (p - centroid)).collect();
    allocate(&local, geometry)
}

/// Formation centre, attitude (`T_L^I`, local-to-inertial) and their rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationPose {
    pub center: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub attitude: Mat3,
    pub attitude_rate: Mat3,
}

impl FormationPose {
    pub fn fixed(center: Vec3) -> Self {
        Self {
            center,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            attitude: Mat3::identity(),
            attitude_rate: Mat3::zeros(),
        }
    }
}

/// `r_d = r_cm + T_L^I s`.
pub fn desired_position(slot: &Vec3, pose: &FormationPose) -> Vec3 {
    pose.center + pose.attitude * slot
}

/// `ṙ_d = ṙ_cm + Ṫ_L^I s`.
pub fn desired_velocity(slot: &Vec3, pose: &FormationPose) -> Vec3 {
    pose.velocity + pose.attitude_rate * slot
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub k_p: f64,
    pub k_d: f64,
}

/// PD slot-tracking force `k_p (r_d − r) + k_d (ṙ_d − ṙ)`.
pub fn slot_force(
    position: &Vec3,
    velocity: &Vec3,
    desired_position: &Vec3,
    desired_velocity: &Vec3,
    gains: &PdGains,
) -> Vec3 {
    gains.k_p * (desired_position - position) + gains.k_d * (desired_velocity - velocity)
}
