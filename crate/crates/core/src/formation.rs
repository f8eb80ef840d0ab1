//! Distance-constraint forces that hold agents in a virtual rigid body.
//!
//! Each constraint `c_k = ‖r_i − r_j‖ − d_k` is driven to zero by a force in
//! the row space of `Jᵀ` (it does no virtual work) chosen so that the
//! constraint residuals obey `c̈ = −2αċ − β²c − γ∫c` for point masses.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

/// Separation below which a constraint direction is undefined.
pub const COINCIDENT_GUARD: f64 = 1e-9;
/// Condition-number limit for `J M⁻¹ Jᵀ`.
pub const MAX_CONDITION: f64 = 1e12;
/// Default clamp on each integral accumulator, m·s.
pub const DEFAULT_INTEGRAL_CLAMP: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("agents {i} and {j} are coincident (separation {separation:e} m)")]
    Coincident { i: usize, j: usize, separation: f64 },
    #[error("constraint system is degenerate (condition estimate {condition:e}) at positions {positions}")]
    Degenerate { condition: f64, positions: String },
    #[error("rigid formations need at least 3 agents, got {0}")]
    TooFewAgents(usize),
    #[error("rigidity requires {expected} edges, got {actual}")]
    EdgeCount { expected: usize, actual: usize },
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("desired distance of edge {edge} must be > 0, got {distance}")]
    InvalidDistance { edge: usize, distance: f64 },
    #[error("input length mismatch: {0}")]
    Shape(String),
}

/// Number of independent distance constraints that make `n` agents rigid in 3D.
pub fn rigidity_edge_count(n: usize) -> Result<usize, FormationError> {
    if n < 3 {
        return Err(FormationError::TooFewAgents(n));
    }
    Ok(3 * n - 6)
}

/// Baumgarte stabilisation gains; `alpha` damps `ċ`, `beta` stiffens `c`,
/// `gamma` weights the integral of `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct BaumgarteGains {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for BaumgarteGains {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.0 }
    }
}

/// Edge list, desired distances, gains and the integral accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    edges: Vec<(usize, usize)>,
    distances: Vec<f64>,
    pub gains: BaumgarteGains,
    integral: Vec<f64>,
    last_residuals: Option<Vec<f64>>,
    pub integral_clamp: f64,
}

/// `c`, `ċ`, `J` and `J̇` evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintState {
    pub residuals: DVector<f64>,
    pub rates: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub jacobian_rate: DMatrix<f64>,
}

/// Solved constraint force with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintForce {
    /// Per-agent force blocks of `Jᵀλ`.
    pub forces: Vec<Vec3>,
    pub multipliers: DVector<f64>,
    pub rhs: DVector<f64>,
    /// `‖(JM⁻¹Jᵀ)λ − rhs‖`.
    pub solve_residual: f64,
    pub condition: f64,
    pub state: ConstraintState,
}

impl ConstraintForce {
    /// Relative linear-system residual `‖Aλ − b‖ / ‖b‖` (0 when `b = 0`).
    pub fn relative_residual(&self) -> f64 {
        let b = self.rhs.norm();
        if b == 0.0 {
            self.solve_residual
        } else {
            self.solve_residual / b
        }
    }
}

impl ConstraintSet {
    /// Validates edges (`i ≠ j`, no duplicates in either orientation) and
    /// distances. Edges are stored with `i < j`.
    pub fn new(edges: &[(usize, usize)], distances: &[f64], gains: BaumgarteGains) -> Result<Self, FormationError> {
        if edges.len() != distances.len() {
            return Err(FormationError::Shape(format!("{} edges but {} distances", edges.len(), distances.len())));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a == b {
                return Err(FormationError::InvalidEdge(a, b));
            }
            let e = (a.min(b), a.max(b));
            if normalized.contains(&e) {
                return Err(FormationError::DuplicateEdge(e.0, e.1));
            }
            if !(distances[k] > 0.0) {
                return Err(FormationError::InvalidDistance { edge: k, distance: distances[k] });
            }
            normalized.push(e);
        }
        Ok(Self {
            integral: vec![0.0; edges.len()],
            edges: normalized,
            distances: distances.to_vec(),
            gains,
            last_residuals: None,
            integral_clamp: DEFAULT_INTEGRAL_CLAMP,
        })
    }

    /// Constraint set whose desired distances are those of `geometry`.
    pub fn from_geometry(
        edges: &[(usize, usize)],
        geometry: &[Vec3],
        gains: BaumgarteGains,
    ) -> Result<Self, FormationError> {
        let mut distances = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= geometry.len() || b >= geometry.len() {
                return Err(FormationError::InvalidEdge(a, b));
            }
            distances.push((geometry[a] - geometry[b]).norm());
        }
        Self::new(edges, &distances, gains)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn integral(&self) -> &[f64] {
        &self.integral
    }

    /// Checks the `3N − 6` count and that every edge references one of `n` agents.
    pub fn validate_rigid(&self, n: usize) -> Result<(), FormationError> {
        let expected = rigidity_edge_count(n)?;
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(FormationError::InvalidEdge(a, b));
        }
        if self.edges.len() != expected {
            return Err(FormationError::EdgeCount { expected, actual: self.edges.len() });
        }
        Ok(())
    }

    /// Same constraints with agent indices relabelled by `map[old] = new`.
    pub fn relabeled(&self, map: &[usize]) -> Result<Self, FormationError> {
        let edges: Vec<_> = self.edges.iter().map(|&(a, b)| (map[a], map[b])).collect();
        let mut set = Self::new(&edges, &self.distances, self.gains)?;
        set.integral_clamp = self.integral_clamp;
        Ok(set)
    }

    fn separation(&self, positions: &[Vec3], k: usize) -> Result<(Vec3, f64), FormationError> {
        let (i, j) = self.edges[k];
        if i >= positions.len() || j >= positions.len() {
            return Err(FormationError::Shape(format!("edge ({i}, {j}) but only {} agents", positions.len())));
        }
        let d = positions[i] - positions[j];
        let n = d.norm();
        if n <= COINCIDENT_GUARD {
            return Err(FormationError::Coincident { i, j, separation: n });
        }
        Ok((d, n))
    }

    /// `c_k = ‖r_i − r_j‖ − d_k`.
    pub fn residuals(&self, positions: &[Vec3]) -> Result<DVector<f64>, FormationError> {
        let mut c = DVector::zeros(self.len());
        for k in 0..self.len() {
            c[k] = self.separation(positions, k)?.1 - self.distances[k];
        }
        Ok(c)
    }

    /// Residuals, their rates, `J` and its time derivative.
    pub fn evaluate(&self, positions: &[Vec3], velocities: &[Vec3]) -> Result<ConstraintState, FormationError> {
        if positions.len() != velocities.len() {
            return Err(FormationError::Shape("positions and velocities differ in length".into()));
        }
        let m = self.len();
        let n3 = 3 * positions.len();
        let mut residuals = DVector::zeros(m);
        let mut jacobian = DMatrix::zeros(m, n3);
        let mut jacobian_rate = DMatrix::zeros(m, n3);
        for k in 0..m {
            let (i, j) = self.edges[k];
            let (d, n) = self.separation(positions, k)?;
            residuals[k] = n - self.distances[k];
            let u = d / n;
            let relative = velocities[i] - velocities[j];
            let u_dot = (relative - u * u.dot(&relative)) / n;
            for a in 0..3 {
                jacobian[(k, 3 * i + a)] = u[a];
                jacobian[(k, 3 * j + a)] = -u[a];
                jacobian_rate[(k, 3 * i + a)] = u_dot[a];
                jacobian_rate[(k, 3 * j + a)] = -u_dot[a];
            }
        }
        let rates = &jacobian * stack(velocities);
        Ok(ConstraintState { residuals, rates, jacobian, jacobian_rate })
    }

    /// Constraint force for point masses under applied forces
    /// `f_ext + f_u` (`applied`, one block per agent).
    pub fn constraint_force(
        &self,
        positions: &[Vec3],
        velocities: &[Vec3],
        masses: &[f64],
        applied: &[Vec3],
    ) -> Result<ConstraintForce, FormationError> {
        let n = positions.len();
        if masses.len() != n || applied.len() != n {
            return Err(FormationError::Shape("masses/applied length must match positions".into()));
        }
        let state = self.evaluate(positions, velocities)?;
        let inv_mass = DVector::from_iterator(3 * n, masses.iter().flat_map(|&m| [1.0 / m; 3]));

        let mut jm = state.jacobian.clone();
        for (col, w) in inv_mass.iter().enumerate() {
            jm.column_mut(col).scale_mut(*w);
        }
        let system = &jm * state.jacobian.transpose();

        let g = self.gains;
        let integral = DVector::from_column_slice(&self.integral);
        let rhs = -(&jm * stack(applied))
            - &state.jacobian_rate * stack(velocities)
            - 2.0 * g.alpha * &state.rates
            - g.beta * g.beta * &state.residuals
            - g.gamma * integral;

        let eigen = SymmetricEigen::new(system.clone());
        let (lo, hi) =
            eigen.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(FormationError::Degenerate { condition, positions: format!("{positions:?}") });
        }
        let cholesky = system
            .clone()
            .cholesky()
            .ok_or_else(|| FormationError::Degenerate { condition, positions: format!("{positions:?}") })?;
        // A couple of refinement sweeps keep the residual near round-off when
        // the formation is close to flat.
        let mut multipliers = cholesky.solve(&rhs);
        let mut residual = &system * &multipliers - &rhs;
        for _ in 0..REFINEMENT_SWEEPS {
            if residual.norm() <= f64::EPSILON * rhs.norm() {
                break;
            }
            multipliers -= cholesky.solve(&residual);
            residual = &system * &multipliers - &rhs;
        }
        let solve_residual = residual.norm();
        let flat = state.jacobian.transpose() * &multipliers;
        let forces = unstack(&flat);
        Ok(ConstraintForce { forces, multipliers, rhs, solve_residual, condition, state })
    }

    /// Trapezoidal update of `∫c dt`, clamped per constraint.
    pub fn accumulate(&mut self, residuals: &[f64], dt: f64) {
        let clamp = self.integral_clamp;
        let previous = self.last_residuals.take().unwrap_or_else(|| residuals.to_vec());
        for ((acc, c), c0) in self.integral.iter_mut().zip(residuals).zip(&previous) {
            *acc = (*acc + 0.5 * (c + c0) * dt).clamp(-clamp, clamp);
        }
        self.last_residuals = Some(residuals.to_vec());
    }

    pub fn reset_integral(&mut self) {
        self.integral.iter_mut().for_each(|x| *x = 0.0);
        self.last_residuals = None;
    }
}

const REFINEMENT_SWEEPS: usize = 3;

/// Flattens per-agent vectors into a `3N` column.
pub fn stack(blocks: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(3 * blocks.len(), blocks.iter().flat_map(|v| [v.x, v.y, v.z]))
}

/// Splits a `3N` column into per-agent vectors.
pub fn unstack(flat: &DVector<f64>) -> Vec<Vec3> {
    flat.as_slice().chunks_exact(3).map(Vec3::from_column_slice).collect()
}

/// Exponential-envelope summary of a residual trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub initial: f64,
    pub final_norm: f64,
    /// Least-squares slope of `−ln‖c‖` over the samples above `floor`, 1/s.
    pub decay_rate: f64,
    /// Mean `‖c‖` over the last tenth of the trajectory.
    pub steady_state: f64,
}

/// Summarises `‖c‖` samples taken every `dt` seconds.
pub fn baumgarte_decay(norms: &[f64], dt: f64) -> DecayReport {
    let floor = 1e-12;
    let points: Vec<(f64, f64)> =
        norms.iter().enumerate().filter(|(_, &c)| c > floor).map(|(k, &c)| (k as f64 * dt, c.ln())).collect();
    let decay_rate = if points.len() >= 2 {
        let n = points.len() as f64;
        let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
        if sxx > 0.0 {
            -sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    let tail = (norms.len() / 10).max(1).min(norms.len());
    let steady_state =
        if norms.is_empty() { 0.0 } else { norms[norms.len() - tail..].iter().sum::<f64>() / tail as f64 };
    DecayReport {
        initial: norms.first().copied().unwrap_or(0.0),
        final_norm: norms.last().copied().unwrap_or(0.0),
        decay_rate,
        steady_state,
    }
}

/// One sample of a point-mass constraint simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassSample {
    pub t: f64,
    pub residuals: DVector<f64>,
    pub rates: DVector<f64>,
}

/// Integrates point masses driven by `applied(t, positions)` plus the
/// constraint force with RK4. `disturbance` acts on the masses but is not
/// seen by the constraint force. The integral accumulator advances once per
/// step.
#[allow(clippy::too_many_arguments)]
pub fn simulate_point_masses(
    set: &mut ConstraintSet,
    positions: &mut [Vec3],
    velocities: &mut [Vec3],
    masses: &[f64],
    applied: &dyn Fn(f64, &[Vec3]) -> Vec<Vec3>,
    disturbance: &[Vec3],
    dt: f64,
    steps: usize,
) -> Result<Vec<PointMassSample>, FormationError> {
    let n = positions.len();
    let accel = |set: &ConstraintSet, t: f64, r: &[Vec3], v: &[Vec3]| -> Result<Vec<Vec3>, FormationError> {
        let f = applied(t, r);
        let fc = set.constraint_force(r, v, masses, &f)?;
        Ok((0..n).map(|i| (f[i] + fc.forces[i] + disturbance[i]) / masses[i]).collect())
    };
    let mut out = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let t = step as f64 * dt;
        let state = set.evaluate(positions, velocities)?;
        set.accumulate(state.residuals.as_slice(), if step == 0 { 0.0 } else { dt });
        out.push(PointMassSample { t, residuals: state.residuals, rates: state.rates });
        if step == steps {
            break;
        }
        let r0 = positions.to_vec();
        let v0 = velocities.to_vec();
        let shift =
            |base: &[Vec3], d: &[Vec3], h: f64| -> Vec<Vec3> { base.iter().zip(d).map(|(b, d)| b + d * h).collect() };
        let k1v = accel(set, t, &r0, &v0)?;
        let k1r = v0.clone();
        let r1 = shift(&r0, &k1r, dt / 2.0);
        let v1 = shift(&v0, &k1v, dt / 2.0);
        let k2v = accel(set, t + dt / 2.0, &r1, &v1)?;
        let k2r = v1;
        let r2 = shift(&r0, &k2r, dt / 2.0);
        let v2 = shift(&v0, &k2v, dt / 2.0);
        let k3v = accel(set, t + dt / 2.0, &r2, &v2)?;
        let k3r = v2;
        let r3 = shift(&r0, &k3r, dt);
        let v3 = shift(&v0, &k3v, dt);
        let k4v = accel(set, t + dt, &r3, &v3)?;
        let k4r = v3;
        for i in 0..n {
            positions[i] = r0[i] + (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]) * (dt / 6.0);
            velocities[i] = v0[i] + (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]) * (dt / 6.0);
        }
    }
    Ok(out)
}

/// The 18 vehicle pairs of the eight-agent delta formation (0-based).
pub const DELTA8_EDGES: [(usize, usize); 18] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 4),
    (3, 5),
    (3, 6),
    (4, 5),
    (4, 6),
    (4, 7),
    (5, 6),
    (5, 7),
    (6, 7),
];
