//! Per-tick records and the run summary derived from them.

use serde::Serialize;

use super::config::ScenarioConfig;
use crate::{Mat3, Vec3};

/// What happened to one agent during one outer tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentRecord {
    /// Distance to the nearest obstacle centre (truth), m.
    pub clearance: Option<f64>,
    /// At least one obstacle inside the sensing gate.
    pub in_range: bool,
    /// The agent's position was inside an estimated avoidance surface.
    pub inside: bool,
    pub saturated: bool,
    pub hover_fallback: bool,
    /// Distance to the slot or reference position, m.
    pub reference_error: f64,
}

/// Formation-wide state of one outer tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub agents: Vec<AgentRecord>,
    /// Edge residuals `c_k`, m, in configured edge order.
    pub residuals: Vec<f64>,
    /// `‖A λ − b‖ / ‖b‖` of the constraint solve.
    pub solve_residual: Option<f64>,
    /// Constraint solve skipped because the system was ill-conditioned.
    pub degenerate: bool,
    pub yaw_command: f64,
    /// Yaw of the best-fit rotation from slots to agent positions.
    pub yaw_measured: Option<f64>,
}

impl TickRecord {
    pub fn max_residual(&self) -> Option<f64> {
        self.residuals.iter().map(|c| c.abs()).reduce(f64::max)
    }

    pub fn any_in_range(&self) -> bool {
        self.agents.iter().any(|a| a.in_range)
    }
}

/// Time series of tick records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub ticks: Vec<TickRecord>,
}

/// Scalar results of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub format_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub agents: usize,
    pub ticks: usize,
    pub duration: f64,
    /// Smallest agent-to-obstacle-centre distance over the run, m.
    pub min_clearance: Option<f64>,
    pub min_clearance_per_agent: Vec<Option<f64>>,
    pub collision: bool,
    /// Largest `|c_k|` after `settle_time`, m.
    pub max_residual_after_settle: Option<f64>,
    /// Largest `|c_k|` while any obstacle is in range.
    pub max_residual_avoidance: Option<f64>,
    /// Largest `|c_k|` after `settle_time` with no obstacle in range or
    /// recently departed.
    pub max_residual_cruise: Option<f64>,
    /// Last time any obstacle was inside any agent's sensing gate, s.
    pub last_in_range_time: Option<f64>,
    /// Largest `|c_k|` from `resettle_window` after the last departure on.
    pub max_residual_after_resettle: Option<f64>,
    /// RMS distance to the reference after `settle_time`, outside avoidance
    /// windows, m.
    pub rms_reference_error: Option<f64>,
    pub rms_reference_error_per_agent: Vec<Option<f64>>,
    pub max_solve_residual: Option<f64>,
    /// Largest `|yaw_cmd − yaw_measured|` after `settle_time`, rad.
    pub max_yaw_error_after_settle: Option<f64>,
    pub saturation_ticks: usize,
    pub inside_body_ticks: usize,
    pub hover_fallback_ticks: usize,
    pub degenerate_ticks: usize,
    pub rejected_measurements: usize,
    pub allocation: Vec<usize>,
    pub wall_time_s: f64,
    /// Resolved configuration the run used.
    pub config: serde_json::Value,
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Windows of recent avoidance: `true` for ticks where an obstacle was in
/// range within the last `recovery` seconds. `flags[k]` is the in-range flag.
fn recent(flags: &[bool], times: &[f64], recovery: f64) -> Vec<bool> {
    let mut last: Option<f64> = None;
    flags
        .iter()
        .zip(times)
        .map(|(&f, &t)| {
            if f {
                last = Some(t);
            }
            last.is_some_and(|l| t - l <= recovery + 1e-9)
        })
        .collect()
}

impl RunMetrics {
    pub fn summarize(
        &self,
        config: &ScenarioConfig,
        allocation: Vec<usize>,
        rejected_measurements: usize,
        wall_time_s: f64,
    ) -> Summary {
        let n = config.agent_count();
        let m = &config.metrics;
        let times: Vec<f64> = self.ticks.iter().map(|r| r.t).collect();

        let mut per_agent_clearance = vec![None; n];
        let mut sq = vec![0.0; n];
        let mut counts = vec![0usize; n];
        let mut saturation_ticks = 0;
        let mut inside_body_ticks = 0;
        let mut hover_fallback_ticks = 0;

        for i in 0..n {
            let flags: Vec<bool> = self.ticks.iter().map(|r| r.agents[i].in_range).collect();
            let window = recent(&flags, &times, m.recovery_time);
            for (k, r) in self.ticks.iter().enumerate() {
                let a = &r.agents[i];
                per_agent_clearance[i] = min_opt(per_agent_clearance[i], a.clearance);
                if r.t >= m.settle_time - 1e-9 && !window[k] {
                    sq[i] += a.reference_error * a.reference_error;
                    counts[i] += 1;
                }
            }
        }
        for r in &self.ticks {
            saturation_ticks += usize::from(r.agents.iter().any(|a| a.saturated));
            inside_body_ticks += usize::from(r.agents.iter().any(|a| a.inside));
            hover_fallback_ticks += usize::from(r.agents.iter().any(|a| a.hover_fallback));
        }
        let rms_per_agent: Vec<Option<f64>> =
            (0..n).map(|i| (counts[i] > 0).then(|| (sq[i] / counts[i] as f64).sqrt())).collect();
        let total: usize = counts.iter().sum();
        let rms = (total > 0).then(|| (sq.iter().sum::<f64>() / total as f64).sqrt());
        let min_clearance = per_agent_clearance.iter().copied().fold(None, min_opt);

        let any: Vec<bool> = self.ticks.iter().map(TickRecord::any_in_range).collect();
        let window = recent(&any, &times, m.recovery_time);
        let last_in_range_time = self.ticks.iter().rev().find(|r| r.any_in_range()).map(|r| r.t);

        let mut after_settle = None;
        let mut avoidance = None;
        let mut cruise = None;
        let mut after_resettle = None;
        let mut max_solve = None;
        let mut yaw_error = None;
        for (k, r) in self.ticks.iter().enumerate() {
            let c = r.max_residual();
            max_solve = max_opt(max_solve, r.solve_residual);
            if any[k] {
                avoidance = max_opt(avoidance, c);
            }
            if r.t >= m.settle_time - 1e-9 {
                after_settle = max_opt(after_settle, c);
                if !window[k] {
                    cruise = max_opt(cruise, c);
                }
                if let Some(meas) = r.yaw_measured {
                    let e = (r.yaw_command - meas + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                        - std::f64::consts::PI;
                    yaw_error = max_opt(yaw_error, Some(e.abs()));
                }
            }
            if let Some(last) = last_in_range_time {
                if r.t >= last + m.resettle_window - 1e-9 {
                    after_resettle = max_opt(after_resettle, c);
                }
            }
        }

        Summary {
            format_version: 1,
            scenario: config.name.clone(),
            seed: config.noise.seed,
            agents: n,
            ticks: self.ticks.len(),
            duration: config.timing.duration,
            min_clearance,
            min_clearance_per_agent: per_agent_clearance,
            collision: min_clearance.is_some_and(|c| c <= 0.0),
            max_residual_after_settle: after_settle,
            max_residual_avoidance: avoidance,
            max_residual_cruise: cruise,
            last_in_range_time,
            max_residual_after_resettle: after_resettle,
            rms_reference_error: rms,
            rms_reference_error_per_agent: rms_per_agent,
            max_solve_residual: max_solve,
            max_yaw_error_after_settle: yaw_error,
            saturation_ticks,
            inside_body_ticks,
            hover_fallback_ticks,
            degenerate_ticks: self.ticks.iter().filter(|r| r.degenerate).count(),
            rejected_measurements,
            allocation,
            wall_time_s,
            config: config.to_value(),
        }
    }
}

/// Rotation `R` minimising `Σ ‖R sᵢ − (pᵢ − p̄)‖²` (Kabsch). `slots` must be
/// centred. Returns `None` for fewer than three points or a degenerate fit.
pub fn fit_rotation(slots: &[Vec3], positions: &[Vec3]) -> Option<Mat3> {
    if slots.len() < 3 || slots.len() != positions.len() {
        return None;
    }
    let centroid = positions.iter().sum::<Vec3>() / positions.len() as f64;
    let h: Mat3 = slots.iter().zip(positions).map(|(s, p)| s * (p - centroid).transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    if svd.singular_values[1] < 1e-9 {
        return None;
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    Some(v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose())
}

/// Yaw of a rotation (rotation about inertial z of the local x axis).
pub fn yaw_of(r: &Mat3) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}
