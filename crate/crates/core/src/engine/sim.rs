//! The synthesised control loop.
//!
//! Each outer tick reads one snapshot of the world, then:
//! 1. moves the obstacles (constant velocity, evaluated in closed form),
//! 2. lets every agent sense and filter the obstacles in range,
//! 3. computes the avoidance force `f_h` and slot force `f_s` per agent,
//! 4. solves the joint constraint force `f_c` for the formation,
//! 5. maps `u = (f_h + f_s + f_c)/m + g e₃` to thrust and attitude, and
//! 6. runs the attitude loop, rotor allocation and RK4 at the inner rate.
//!
//! Steps 2-3 and 6 are independent per agent and go through [`Execution`].

use std::time::Instant;

use serde_json::json;
use thiserror::Error;

use super::config::{issue_list, AllocationMode, FreestreamMode, Issue, ScenarioConfig};
use super::metrics::{fit_rotation, yaw_of, AgentRecord, RunMetrics, Summary, TickRecord};
use super::output::TrajectoryRow;
use super::reference::{pose_at, PoseReference};
use crate::assignment::{allocate_inertial, desired_position, desired_velocity, slot_force, Allocation, SlotGeometry};
use crate::exec::Execution;
use crate::flowfield::{superpose_projected, FlowBody};
use crate::formation::{ConstraintSet, FormationError};
use crate::sensing::{NoiseKey, ObstacleTracker, TrackStatus};
use crate::vehicle::{
    quaternion_from_euler, thrust_attitude_from_force, AttitudeCommand, QuadParams, QuadState, Quadrotor,
    RotorAllocator,
};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{}", issue_list(.0))]
    Invalid(Vec<Issue>),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("run aborted at t = {t} s: {reason}")]
    Abort { t: f64, reason: String, dump: serde_json::Value },
}

/// One simulated vehicle with its sensing state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub quad: Quadrotor,
    pub tracker: ObstacleTracker,
    pub command: AttitudeCommand,
    /// Formation slot, if any.
    pub slot: Option<usize>,
    saturated: bool,
}

/// Per-agent result of the sensing and guidance phase.
#[derive(Debug, Clone, Copy)]
struct Guidance {
    f_h: Vec3,
    f_s: Vec3,
    feedforward: Vec3,
    reference_error: f64,
    in_range: bool,
    inside: bool,
    clearance: Option<f64>,
}

/// Everything produced by a completed run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Vec<TrajectoryRow>,
    pub metrics: RunMetrics,
    pub summary: Summary,
    pub edges: usize,
}

pub struct Simulation {
    config: ScenarioConfig,
    params: QuadParams,
    allocator: RotorAllocator,
    exec: Execution,
    slots: Vec<Vec3>,
    allocation: Option<Allocation>,
    constraints: Option<ConstraintSet>,
    agents: Vec<Agent>,
    tick: u64,
    metrics: RunMetrics,
    trajectory: Vec<TrajectoryRow>,
}

fn state_dump(t: f64, tick: u64, reason: &str, agents: &[QuadState]) -> serde_json::Value {
    json!({
        "t": t,
        "tick": tick,
        "reason": reason,
        "agents": agents.iter().map(|s| json!({
            "position": s.position.as_slice(),
            "velocity_body": s.velocity.as_slice(),
            "attitude": s.attitude.as_slice(),
            "rates": s.rates.as_slice(),
        })).collect::<Vec<_>>(),
    })
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, EngineError> {
        let report = config.validate();
        if !report.is_ok() {
            return Err(EngineError::Invalid(report.errors));
        }
        let params = config.agents.vehicle.clone();
        let allocator = RotorAllocator::new(&params).map_err(|e| EngineError::Setup(e.to_string()))?;
        let yaw = config.agents.yaw_deg.to_radians();
        let attitude = quaternion_from_euler(0.0, 0.0, yaw);
        let positions: Vec<Vec3> = config.agents.positions.iter().map(|p| Vec3::from(*p)).collect();

        let mut agents: Vec<Agent> = positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut state = QuadState::at_rest(*p);
                state.attitude = attitude;
                if let Some(v) = config.agents.velocities.get(i) {
                    state.velocity = state.dcm() * Vec3::from(*v);
                }
                Agent {
                    quad: Quadrotor::new(state, config.control.attitude, &params),
                    tracker: ObstacleTracker::new(config.obstacles.len()),
                    command: AttitudeCommand::hover(&params, yaw),
                    slot: None,
                    saturated: false,
                }
            })
            .collect();

        let mut slots = Vec::new();
        let mut allocation = None;
        let mut constraints = None;
        if let Some(f) = &config.formation {
            let geometry = SlotGeometry::new(&f.slots.iter().map(|s| Vec3::from(*s)).collect::<Vec<_>>());
            slots = geometry.slots().to_vec();
            let pose = pose_at(0.0, &config.reference).pose;
            let alloc = match f.allocation {
                AllocationMode::Optimal => allocate_inertial(&positions, &pose.attitude, &geometry)
                    .map_err(|e| EngineError::Setup(e.to_string()))?,
                AllocationMode::Identity => Allocation { slot_of: (0..positions.len()).collect(), cost: 0.0 },
            };
            for (agent, &slot) in agents.iter_mut().zip(&alloc.slot_of) {
                agent.slot = Some(slot);
            }
            let edges: Vec<(usize, usize)> = f.edges.iter().map(|e| (e[0], e[1])).collect();
            let mut set = ConstraintSet::from_geometry(&edges, &slots, f.gains)
                .and_then(|s| s.relabeled(&alloc.inverse()))
                .map_err(|e| EngineError::Setup(e.to_string()))?;
            set.integral_clamp = f.integral_clamp;
            constraints = Some(set);
            allocation = Some(alloc);
        }

        Ok(Self {
            exec: config.execution,
            config,
            params,
            allocator,
            slots,
            allocation,
            constraints,
            agents,
            tick: 0,
            metrics: RunMetrics::default(),
            trajectory: Vec::new(),
        })
    }

    /// Overrides the execution mode from the config.
    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.timing.dt_outer
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn allocation(&self) -> Option<&Allocation> {
        self.allocation.as_ref()
    }

    /// Constraint set in agent indices.
    pub fn constraints(&self) -> Option<&ConstraintSet> {
        self.constraints.as_ref()
    }

    /// Centred slot positions in the formation frame.
    pub fn slots(&self) -> &[Vec3] {
        &self.slots
    }

    /// Truth obstacle positions at the current time.
    pub fn obstacle_positions(&self) -> Vec<Vec3> {
        let t = self.time();
        self.config.obstacles.iter().map(|o| o.position_at(t)).collect()
    }

    pub fn rejected_measurements(&self) -> usize {
        self.agents.iter().map(|a| a.tracker.rejected()).sum()
    }

    fn guidance(&self, i: usize, truths: &[Vec3], statuses: &[TrackStatus], reference: &PoseReference) -> Guidance {
        let cfg = &self.config;
        let agent = &self.agents[i];
        let m = self.params.mass;
        let position = agent.quad.state.position;
        let velocity = agent.quad.state.inertial_velocity();

        let (desired, desired_vel, desired_acc) = match agent.slot {
            Some(slot) => {
                let s = self.slots[slot];
                (
                    desired_position(&s, &reference.pose),
                    desired_velocity(&s, &reference.pose),
                    reference.slot_acceleration(&s),
                )
            }
            None => (reference.pose.center, reference.pose.velocity, reference.pose.acceleration),
        };
        let gains = cfg.control.position;
        let f_s = m * slot_force(&position, &velocity, &desired, &desired_vel, &gains);
        let feedforward = if cfg.control.feedforward { desired_acc } else { Vec3::zeros() };

        let a = &cfg.avoidance;
        let bodies: Vec<FlowBody> = statuses
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_measured())
            .filter_map(|(j, s)| {
                let (p, v) = s.estimate()?;
                Some(match cfg.obstacles[j].rankine {
                    Some(shape) => FlowBody::rankine(p, v, shape.separation, shape.strength),
                    None => FlowBody::doublet(p, v, a.r_d, a.epsilon),
                })
            })
            .collect();
        let in_range = !bodies.is_empty();
        let (f_h, inside) = if a.enabled && in_range {
            let freestream = match a.freestream {
                FreestreamMode::AgentVelocity => velocity,
                FreestreamMode::Guidance => desired_vel + (desired - position) * (gains.k_p / gains.k_d),
            };
            let q = superpose_projected(&position, &bodies, &freestream, a.superposition);
            (m * a.k_h * (q.velocity - freestream), q.inside > 0)
        } else {
            (Vec3::zeros(), false)
        };

        let clearance = truths.iter().map(|o| (o - position).norm()).reduce(f64::min);
        Guidance { f_h, f_s, feedforward, reference_error: (desired - position).norm(), in_range, inside, clearance }
    }

    /// Advances one outer tick.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let cfg = &self.config;
        let dt = cfg.timing.dt_outer;
        let t = self.time();
        let tick = self.tick;
        let n = self.agents.len();
        let truths = self.obstacle_positions();
        let range = self.params.sensing;
        let filter = cfg.noise.filter();
        let seed = cfg.noise.seed;
        let reference = pose_at(t, &cfg.reference);
        let exec = self.exec;

        // Sensing: each agent owns its tracker.
        let statuses: Vec<Vec<TrackStatus>> = {
            let mut out = vec![Vec::new(); n];
            let mut work: Vec<(&mut Agent, &mut Vec<TrackStatus>)> =
                self.agents.iter_mut().zip(out.iter_mut()).collect();
            exec.for_each_mut(&mut work, |i, (agent, slot)| {
                let key = NoiseKey { seed, agent: i as u64, obstacle: 0, step: tick };
                **slot = agent.tracker.observe(&agent.quad.state.position, &truths, &range, &filter, key, t, dt);
            });
            out
        };

        let this = &*self;
        let guidance: Vec<Guidance> = exec.map(n, |i| this.guidance(i, &truths, &statuses[i], &reference));

        let m = self.params.mass;
        let mut f_c = vec![Vec3::zeros(); n];
        let mut residuals = Vec::new();
        let mut solve_residual = None;
        let mut degenerate = false;
        if let Some(set) = self.constraints.as_mut() {
            let positions: Vec<Vec3> = self.agents.iter().map(|a| a.quad.state.position).collect();
            let velocities: Vec<Vec3> = self.agents.iter().map(|a| a.quad.state.inertial_velocity()).collect();
            // Everything but gravity: uniform accelerations do not change distances.
            let applied: Vec<Vec3> = guidance.iter().map(|g| g.f_h + g.f_s + m * g.feedforward).collect();
            let masses = vec![m; n];
            let use_force = self.config.formation.as_ref().is_some_and(|f| f.constraints);
            match set.constraint_force(&positions, &velocities, &masses, &applied) {
                Ok(sol) => {
                    solve_residual = Some(sol.relative_residual());
                    residuals = sol.state.residuals.iter().copied().collect();
                    if use_force {
                        f_c = sol.forces;
                    }
                }
                Err(FormationError::Degenerate { .. }) | Err(FormationError::Coincident { .. }) => {
                    degenerate = true;
                    residuals = set
                        .residuals(&positions)
                        .map(|c| c.iter().copied().collect())
                        .unwrap_or_else(|_| vec![f64::NAN; set.len()]);
                }
                Err(e) => return Err(EngineError::Abort { t, reason: e.to_string(), dump: json!(null) }),
            }
            if residuals.iter().all(|c| c.is_finite()) {
                set.accumulate(&residuals, if tick == 0 { 0.0 } else { dt });
            }
        }

        let yaw_cmd = self.config.agents.yaw_deg.to_radians();
        let g = self.params.gravity;
        let params = &self.params;
        let commands: Vec<AttitudeCommand> = (0..n)
            .map(|i| {
                let gd = &guidance[i];
                let u = (gd.f_h + gd.f_s + f_c[i]) / m + gd.feedforward + Vec3::z() * g;
                let agent = &self.agents[i];
                thrust_attitude_from_force(&u, &agent.quad.state.euler(), yaw_cmd, params, &agent.command)
            })
            .collect();

        let yaw_measured = if self.slots.is_empty() {
            None
        } else {
            let slots: Vec<Vec3> = self.agents.iter().map(|a| self.slots[a.slot.unwrap_or(0)]).collect();
            let positions: Vec<Vec3> = self.agents.iter().map(|a| a.quad.state.position).collect();
            fit_rotation(&slots, &positions).map(|r| yaw_of(&r))
        };

        if tick.is_multiple_of(self.config.outputs.decimation as u64) {
            for (i, a) in self.agents.iter().enumerate() {
                let s = &a.quad.state;
                let w = a.quad.rotors.speeds();
                self.trajectory.push(TrajectoryRow {
                    t,
                    agent: i,
                    position: s.position,
                    velocity: s.inertial_velocity(),
                    attitude: [s.attitude[0], s.attitude[1], s.attitude[2], s.attitude[3]],
                    rates: s.rates,
                    thrust: a.quad.thrust,
                    rotor_speeds: [w[0], w[1], w[2], w[3]],
                });
            }
        }

        let before: Vec<QuadState> = self.agents.iter().map(|a| a.quad.state).collect();
        let substeps = self.config.timing.substeps();
        let dt_inner = self.config.timing.dt_inner;
        let allocator = &self.allocator;
        let params = &self.params;
        exec.for_each_mut(&mut self.agents, |i, agent| {
            agent.command = commands[i];
            agent.saturated = agent.quad.advance(&commands[i], params, allocator, dt_inner, substeps);
        });

        let records = guidance
            .iter()
            .zip(&self.agents)
            .zip(&commands)
            .map(|((gd, a), c)| AgentRecord {
                clearance: gd.clearance,
                in_range: gd.in_range,
                inside: gd.inside,
                saturated: a.saturated,
                hover_fallback: c.hover_fallback,
                reference_error: gd.reference_error,
            })
            .collect();
        self.metrics.ticks.push(TickRecord {
            t,
            agents: records,
            residuals,
            solve_residual,
            degenerate,
            yaw_command: reference.yaw,
            yaw_measured,
        });

        if let Some(i) = self.agents.iter().position(|a| !a.quad.state.is_finite()) {
            let reason = format!("non-finite state of agent {i}");
            return Err(EngineError::Abort { t, dump: state_dump(t, tick, &reason, &before), reason });
        }
        self.tick += 1;
        Ok(())
    }

    /// Runs to the configured duration.
    pub fn run(mut self) -> Result<RunOutput, EngineError> {
        let start = Instant::now();
        for _ in 0..self.config.timing.ticks() {
            self.step()?;
        }
        let allocation = self.allocation.as_ref().map(|a| a.slot_of.clone()).unwrap_or_default();
        let summary = self.metrics.summarize(
            &self.config,
            allocation,
            self.rejected_measurements(),
            start.elapsed().as_secs_f64(),
        );
        Ok(RunOutput {
            edges: self.constraints.as_ref().map_or(0, ConstraintSet::len),
            trajectory: self.trajectory,
            metrics: self.metrics,
            summary,
        })
    }
}

/// Validates `config` and runs it to completion.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    Simulation::new(config.clone())?.run()
}

/// Runs `config` once per seed; runs are independent and may execute in
/// parallel. Results are in seed order.
pub fn run_batch(config: &ScenarioConfig, seeds: &[u64], exec: Execution) -> Vec<Result<RunOutput, EngineError>> {
    exec.map(seeds.len(), |k| {
        let mut c = config.clone();
        c.noise.seed = seeds[k];
        // Per-run parallelism would only contend with the batch.
        c.execution = Execution::Sequential;
        run(&c)
    })
}
