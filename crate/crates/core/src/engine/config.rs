//! Scenario description: defaults, validation and dotted-path overrides.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::assignment::PdGains;
use crate::exec::Execution;
use crate::flowfield::Superposition;
use crate::formation::{rigidity_edge_count, BaumgarteGains, ConstraintSet, FormationError, DEFAULT_INTEGRAL_CLAMP};
use crate::sensing::FilterConfig;
use crate::vehicle::{ControllerGains, QuadParams};
use crate::Vec3;

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub agents: AgentsConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    /// Required for three or more agents; absent for a single vehicle.
    #[serde(default)]
    pub formation: Option<FormationConfig>,
    #[serde(default)]
    pub avoidance: AvoidanceConfig,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    /// Initial inertial positions, one per agent, m.
    pub positions: Vec<[f64; 3]>,
    /// Initial inertial velocities; empty means at rest.
    #[serde(default)]
    pub velocities: Vec<[f64; 3]>,
    /// Heading held by every vehicle, degrees.
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub vehicle: QuadParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    /// Position at t = 0, m.
    pub position: [f64; 3],
    /// Constant velocity, m/s.
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Model the obstacle as a Rankine body instead of a sphere.
    #[serde(default)]
    pub rankine: Option<RankineShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RankineShape {
    pub separation: f64,
    pub strength: f64,
}

impl ObstacleConfig {
    /// Truth position at time `t`.
    pub fn position_at(&self, t: f64) -> Vec3 {
        Vec3::from(self.position) + Vec3::from(self.velocity) * t
    }
}

/// Freestream fed to the flow model of each agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum FreestreamMode {
    /// The agent's own inertial velocity; `f_h = K_h (v_h − v)`.
    #[default]
    AgentVelocity,
    /// The velocity the tracking law asks for,
    /// `v_g = ṙ_d + (k_p/k_d)(r_d − r)`; `f_h = K_h (v_h − v_g)`.
    Guidance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidanceConfig {
    pub enabled: bool,
    /// Desired clearance radius, m.
    #[serde(rename = "R_d")]
    pub r_d: f64,
    /// Safety buffer added to `R_d`, m.
    pub epsilon: f64,
    /// Velocity-tracking gain of the avoidance force, 1/s.
    #[serde(rename = "K_h")]
    pub k_h: f64,
    pub freestream: FreestreamMode,
    pub superposition: Superposition,
}

impl Default for AvoidanceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            r_d: 1.0,
            epsilon: 1.0,
            k_h: 0.3,
            freestream: FreestreamMode::AgentVelocity,
            superposition: Superposition::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Minimum total distance, computed once at start.
    #[default]
    Optimal,
    /// Agent `i` takes slot `i`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FormationConfig {
    /// Slot positions in the formation frame; re-centred on their centroid.
    pub slots: Vec<[f64; 3]>,
    /// Constrained slot pairs (0-based slot indices).
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub gains: BaumgarteGains,
    #[serde(default = "default_integral_clamp")]
    pub integral_clamp: f64,
    /// Constraint forces on or off (slot tracking alone when off).
    #[serde(default = "yes")]
    pub constraints: bool,
    #[serde(default)]
    pub allocation: AllocationMode,
}

fn default_integral_clamp() -> f64 {
    DEFAULT_INTEGRAL_CLAMP
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceConfig {
    /// Gerono lemniscate `x = A sin(2πt/T)`, `y = B sin(4πt/T)/2`, `z = h`.
    FigureEight(FigureEightSpec),
    /// Formation centre on a straight line with a smooth start, plus a yaw
    /// profile.
    Line(LineSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FigureEightSpec {
    #[serde(rename = "A")]
    pub amplitude_x: f64,
    #[serde(rename = "B")]
    pub amplitude_y: f64,
    /// s
    pub period: f64,
    /// m
    pub altitude: f64,
    /// Horizontal offset of the crossing point, m.
    #[serde(default)]
    pub origin: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    /// Centre position before the start, m.
    pub start: [f64; 3],
    /// Cruise velocity, m/s.
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Time the centre starts moving, s.
    #[serde(default)]
    pub start_time: f64,
    /// Duration of the smooth acceleration to cruise velocity, s.
    #[serde(default)]
    pub ramp_time: f64,
    /// Formation yaw keyframes, eased with a half cosine between frames.
    #[serde(default)]
    pub yaw: Vec<YawKeyframe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct YawKeyframe {
    pub t: f64,
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// PD tracking of the slot or reference trajectory.
    pub position: PdGains,
    /// Add the reference acceleration to the command.
    pub feedforward: bool,
    pub attitude: ControllerGains,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { position: PdGains { k_p: 1.0, k_d: 2.0 }, feedforward: true, attitude: ControllerGains::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// Vehicle dynamics and attitude loop step, s.
    pub dt_inner: f64,
    /// Guidance, sensing and formation step, s.
    pub dt_outer: f64,
    /// s
    pub duration: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { dt_inner: 0.001, dt_outer: 0.01, duration: 60.0 }
    }
}

impl TimingConfig {
    pub fn substeps(&self) -> usize {
        (self.dt_outer / self.dt_inner).round() as usize
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt_outer + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    /// Measurement standard deviation per axis, m.
    pub sigma: f64,
    /// Kalman white-noise acceleration density, m²/s³.
    pub process_noise: f64,
    pub initial_velocity_variance: f64,
    /// Track lifetime without measurements, s.
    pub coast_time: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            seed: 0,
            sigma: f.sigma,
            process_noise: f.process_noise,
            initial_velocity_variance: f.initial_velocity_variance,
            coast_time: f.coast_time,
        }
    }
}

impl NoiseConfig {
    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            sigma: self.sigma,
            process_noise: self.process_noise,
            initial_velocity_variance: self.initial_velocity_variance,
            coast_time: self.coast_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Residual statistics ignore the first `settle_time` seconds.
    pub settle_time: f64,
    /// Tracking error is not scored while an obstacle is in range and for
    /// this long afterwards, s.
    pub recovery_time: f64,
    /// Window after the last obstacle leaves range before residuals are
    /// required to have re-settled, s.
    pub resettle_window: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { settle_time: 10.0, recovery_time: 5.0, resettle_window: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write every n-th outer tick to the trajectory log.
    pub decimation: usize,
    pub trajectory_file: String,
    pub metrics_file: String,
    pub summary_file: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            decimation: 1,
            trajectory_file: "trajectory.csv".into(),
            metrics_file: "metrics.csv".into(),
            summary_file: "summary.json".into(),
        }
    }
}

/// One validation finding, located by a JSON-pointer-style path such as
/// `.avoidance.K_h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Issue { path: path.into(), message: message.into() });
    }

    fn warn(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Issue { path: path.into(), message: message.into() });
    }

    fn positive(&mut self, path: &str, value: f64) {
        if !(value > 0.0 && value.is_finite()) {
            self.error(path, format!("must be positive, got {value}"));
        }
    }

    fn non_negative(&mut self, path: &str, value: f64) {
        if !(value >= 0.0 && value.is_finite()) {
            self.error(path, format!("must be non-negative, got {value}"));
        }
    }

    fn finite(&mut self, path: &str, values: &[f64]) {
        if values.iter().any(|v| !v.is_finite()) {
            self.error(path, "must be finite");
        }
    }
}

/// Multi-line rendering of validation errors.
pub fn issue_list(issues: &[Issue]) -> String {
    let mut out = String::from("invalid scenario:");
    for i in issues {
        out.push_str("\n  ");
        out.push_str(&i.to_string());
    }
    out
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("override `{assignment}`: {message}")]
    Override { assignment: String, message: String },
    #[error("{}", issue_list(.0))]
    Invalid(Vec<Issue>),
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let text = path.to_string();
    if text == "." {
        text
    } else {
        format!(".{text}")
    }
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ConfigError::Parse { path: pointer(e.path()), message: e.inner().to_string() })
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value)
            .map_err(|e| ConfigError::Parse { path: pointer(e.path()), message: e.inner().to_string() })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Applies `dotted.path=value` assignments to the resolved config. The
    /// value is parsed as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self, ConfigError> {
        let mut root = self.to_value();
        for assignment in assignments {
            set_dotted(&mut root, assignment.as_ref())?;
        }
        Self::from_value(root)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.positions.len()
    }

    pub fn schema() -> schemars::schema::RootSchema {
        schemars::schema_for!(ScenarioConfig)
    }

    /// Checks every invariant; all findings are collected.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let n = self.agent_count();
        if n == 0 {
            r.error(".agents.positions", "at least one agent is required");
        }
        for (i, p) in self.agents.positions.iter().enumerate() {
            r.finite(&format!(".agents.positions[{i}]"), p);
        }
        if !self.agents.velocities.is_empty() && self.agents.velocities.len() != n {
            r.error(
                ".agents.velocities",
                format!("expected {n} entries or none, got {}", self.agents.velocities.len()),
            );
        }
        if let Err(crate::vehicle::VehicleError::InvalidParameter { name, value }) = self.agents.vehicle.validate() {
            r.error(format!(".agents.vehicle.{name}"), format!("must be positive, got {value}"));
        }
        r.positive(".agents.vehicle.sensing.radius", self.agents.vehicle.sensing.radius);
        r.non_negative(".agents.vehicle.sensing.half_height", self.agents.vehicle.sensing.half_height);

        for (k, o) in self.obstacles.iter().enumerate() {
            r.finite(&format!(".obstacles[{k}].position"), &o.position);
            r.finite(&format!(".obstacles[{k}].velocity"), &o.velocity);
            if let Some(shape) = o.rankine {
                r.positive(&format!(".obstacles[{k}].rankine.separation"), shape.separation);
                r.positive(&format!(".obstacles[{k}].rankine.strength"), shape.strength);
            }
        }

        r.positive(".avoidance.R_d", self.avoidance.r_d);
        r.non_negative(".avoidance.epsilon", self.avoidance.epsilon);
        r.non_negative(".avoidance.K_h", self.avoidance.k_h);

        self.validate_formation(&mut r);
        self.validate_reference(&mut r);

        r.positive(".control.position.k_p", self.control.position.k_p);
        r.positive(".control.position.k_d", self.control.position.k_d);
        let a = &self.control.attitude;
        for (path, v) in [
            (".control.attitude.attitude.p", a.attitude.p),
            (".control.attitude.rate.p", a.rate.p),
            (".control.attitude.yaw_rate.p", a.yaw_rate.p),
            (".control.attitude.max_rate", a.max_rate),
            (".control.attitude.max_tilt_deg", a.max_tilt_deg),
        ] {
            r.positive(path, v);
        }
        for (path, v) in [
            (".control.attitude.attitude.i", a.attitude.i),
            (".control.attitude.attitude.d", a.attitude.d),
            (".control.attitude.rate.i", a.rate.i),
            (".control.attitude.rate.d", a.rate.d),
            (".control.attitude.yaw_rate.i", a.yaw_rate.i),
            (".control.attitude.yaw_rate.d", a.yaw_rate.d),
            (".control.attitude.attitude_integral_limit", a.attitude_integral_limit),
            (".control.attitude.rate_integral_limit", a.rate_integral_limit),
        ] {
            r.non_negative(path, v);
        }
        for (i, v) in a.max_torque.iter().enumerate() {
            r.positive(&format!(".control.attitude.max_torque[{i}]"), *v);
        }

        let t = &self.timing;
        r.positive(".timing.dt_inner", t.dt_inner);
        r.positive(".timing.dt_outer", t.dt_outer);
        r.non_negative(".timing.duration", t.duration);
        if t.dt_inner > 0.0 && t.dt_outer > 0.0 {
            let ratio = t.dt_outer / t.dt_inner;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                r.error(
                    ".timing.dt_outer",
                    format!("must be an integer multiple of dt_inner ({} / {} = {ratio})", t.dt_outer, t.dt_inner),
                );
            }
        }

        r.non_negative(".noise.sigma", self.noise.sigma);
        r.non_negative(".noise.process_noise", self.noise.process_noise);
        r.positive(".noise.initial_velocity_variance", self.noise.initial_velocity_variance);
        r.non_negative(".noise.coast_time", self.noise.coast_time);

        r.non_negative(".metrics.settle_time", self.metrics.settle_time);
        r.non_negative(".metrics.recovery_time", self.metrics.recovery_time);
        r.non_negative(".metrics.resettle_window", self.metrics.resettle_window);
        if self.outputs.decimation == 0 {
            r.error(".outputs.decimation", "must be at least 1");
        }
        r
    }

    fn validate_formation(&self, r: &mut ValidationReport) {
        let n = self.agent_count();
        let Some(f) = &self.formation else {
            if n > 1 {
                r.error(".formation", format!("required for {n} agents"));
            }
            return;
        };
        if n < 3 {
            r.error(".formation", format!("a rigid formation needs at least 3 agents, got {n}"));
            return;
        }
        if f.slots.len() != n {
            r.error(".formation.slots", format!("expected {n} slots, got {}", f.slots.len()));
        }
        for (i, s) in f.slots.iter().enumerate() {
            r.finite(&format!(".formation.slots[{i}]"), s);
        }
        let g = f.gains;
        r.positive(".formation.gains.alpha", g.alpha);
        r.positive(".formation.gains.beta", g.beta);
        r.non_negative(".formation.gains.gamma", g.gamma);
        if g.alpha > 0.0 && g.beta > 0.0 && g.alpha != g.beta {
            r.warn(
                ".formation.gains",
                format!("alpha = {} and beta = {} differ; residual decay is not critically damped", g.alpha, g.beta),
            );
        }
        if g.gamma > 0.0 && g.gamma >= 2.0 * g.alpha * g.beta * g.beta {
            r.error(
                ".formation.gains.gamma",
                "integral gain makes the residual dynamics unstable (need gamma < 2·alpha·beta²)",
            );
        }
        r.positive(".formation.integral_clamp", f.integral_clamp);

        let expected = rigidity_edge_count(n).unwrap_or(0);
        if f.edges.len() != expected {
            r.error(".formation.edges", FormationError::EdgeCount { expected, actual: f.edges.len() }.to_string());
        }
        for (k, e) in f.edges.iter().enumerate() {
            if e[0] >= n || e[1] >= n {
                r.error(format!(".formation.edges[{k}]"), format!("slot index out of range for {n} slots"));
            }
        }
        if !r.is_ok() {
            return;
        }
        let slots: Vec<Vec3> = f.slots.iter().map(|s| Vec3::from(*s)).collect();
        let edges: Vec<(usize, usize)> = f.edges.iter().map(|e| (e[0], e[1])).collect();
        match ConstraintSet::from_geometry(&edges, &slots, g) {
            Err(e) => r.error(".formation.edges", e.to_string()),
            Ok(set) => {
                let zeros = vec![Vec3::zeros(); n];
                match set.constraint_force(&slots, &zeros, &vec![1.0; n], &zeros) {
                    Err(FormationError::Degenerate { condition, .. }) => r.error(
                        ".formation.slots",
                        format!("slot geometry is not rigid with these edges (condition {condition:.3e})"),
                    ),
                    Err(e) => r.error(".formation.slots", e.to_string()),
                    Ok(_) => {}
                }
            }
        }
    }

    fn validate_reference(&self, r: &mut ValidationReport) {
        match &self.reference {
            ReferenceConfig::FigureEight(s) => {
                r.positive(".reference.figure_eight.period", s.period);
                r.finite(
                    ".reference.figure_eight",
                    &[s.amplitude_x, s.amplitude_y, s.altitude, s.origin[0], s.origin[1]],
                );
            }
            ReferenceConfig::Line(s) => {
                r.finite(".reference.line.start", &s.start);
                r.finite(".reference.line.velocity", &s.velocity);
                r.non_negative(".reference.line.start_time", s.start_time);
                r.non_negative(".reference.line.ramp_time", s.ramp_time);
                for (k, w) in s.yaw.windows(2).enumerate() {
                    if !(w[1].t > w[0].t) {
                        r.error(format!(".reference.line.yaw[{}].t", k + 1), "keyframe times must increase");
                    }
                }
            }
        }
    }

    /// Parses, applies overrides and validates.
    pub fn load<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<(Self, ValidationReport), ConfigError> {
        let config = Self::from_json_str(text)?.with_overrides(overrides)?;
        let report = config.validate();
        if report.is_ok() {
            Ok((config, report))
        } else {
            Err(ConfigError::Invalid(report.errors))
        }
    }
}

fn set_dotted(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let fail = |message: String| ConfigError::Override { assignment: assignment.to_string(), message };
    let (path, raw) = assignment.split_once('=').ok_or_else(|| fail("expected dotted.path=value".into()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(fail("empty path segment".into()));
    }
    let mut node = root;
    let mut walked = String::new();
    for (depth, segment) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        walked.push('.');
        walked.push_str(segment);
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(segment.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*segment).ok_or_else(|| fail(format!("no such key {walked}")))?
            }
            Value::Array(items) => {
                let index: usize = segment.parse().map_err(|_| fail(format!("{walked} is not an array index")))?;
                let len = items.len();
                let slot = items.get_mut(index).ok_or_else(|| fail(format!("{walked} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => return Err(fail(format!("{walked}: parent is null"))),
            _ => return Err(fail(format!("{walked}: parent is not an object"))),
        };
    }
    Ok(())
}
