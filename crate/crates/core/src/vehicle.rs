//! Quadrotor rigid-body model and its low-level control chain.
//!
//! Frames: inertial `{I}` is z-up; body `{B}` has z along the thrust axis.
//! Attitude is a scalar-first unit quaternion `q = (q0, q1, q2, q3)` whose
//! direction cosine matrix `T_I^B` maps inertial vectors into the body frame
//! and corresponds to roll-pitch-yaw (3-2-1) Euler angles.

use nalgebra::{Matrix4, Vector4};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensing::SensingRange;
use crate::{Mat3, Vec3};

/// Scalar-first quaternion `(q0, q1, q2, q3)`.
pub type Quat = Vector4<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("invalid vehicle parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("rotor allocation matrix is singular")]
    SingularAllocation,
}

/// Physical parameters of one quadrotor. Defaults are the reference airframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// Arm length from the centre of gravity to each rotor, m.
    pub arm: f64,
    /// Thrust coefficient, N/(rad/s)².
    #[serde(rename = "k_T")]
    pub k_thrust: f64,
    /// Drag-moment coefficient, N·m/(rad/s)².
    #[serde(rename = "k_d")]
    pub k_moment: f64,
    /// Principal inertia `(I_xx, I_yy, I_zz)`, kg·m².
    pub inertia: [f64; 3],
    /// m/s²
    pub gravity: f64,
    /// rad/s
    pub max_rotor_speed: f64,
    pub sensing: SensingRange,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 1.023,
            arm: 0.2223,
            k_thrust: 1.4865e-7,
            k_moment: 2.9250e-9,
            inertia: [0.0095, 0.0095, 0.0186],
            gravity: 9.81,
            max_rotor_speed: 8000.0,
            sensing: SensingRange::default(),
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let checks = [
            ("mass", self.mass),
            ("arm", self.arm),
            ("k_T", self.k_thrust),
            ("k_d", self.k_moment),
            ("inertia[0]", self.inertia[0]),
            ("inertia[1]", self.inertia[1]),
            ("inertia[2]", self.inertia[2]),
            ("gravity", self.gravity),
            ("max_rotor_speed", self.max_rotor_speed),
        ];
        for (name, value) in checks {
            if !(value > 0.0 && value.is_finite()) {
                return Err(VehicleError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::from(self.inertia))
    }

    /// Rotor positions in the body frame: cross layout, rotors at 45° offsets
    /// numbered counter-clockwise from front-left.
    pub fn rotor_positions(&self) -> [Vec3; 4] {
        let s = self.arm / std::f64::consts::SQRT_2;
        [Vec3::new(s, s, 0.0), Vec3::new(-s, s, 0.0), Vec3::new(-s, -s, 0.0), Vec3::new(s, -s, 0.0)]
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Kinematic and dynamic state of one quadrotor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    /// Inertial position, m.
    pub position: Vec3,
    /// Body-frame velocity, m/s.
    pub velocity: Vec3,
    pub attitude: Quat,
    /// Body rates `(p, q, r)`, rad/s.
    pub rates: Vec3,
}

impl QuadState {
    pub fn at_rest(position: Vec3) -> Self {
        Self { position, velocity: Vec3::zeros(), attitude: Quat::new(1.0, 0.0, 0.0, 0.0), rates: Vec3::zeros() }
    }

    pub fn dcm(&self) -> Mat3 {
        dcm_from_quaternion(&self.attitude)
    }

    pub fn inertial_velocity(&self) -> Vec3 {
        self.dcm().transpose() * self.velocity
    }

    pub fn euler(&self) -> EulerAngles {
        euler_from_dcm(&self.dcm())
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .chain(self.attitude.iter())
            .chain(self.rates.iter())
            .all(|x| x.is_finite())
    }
}

/// Inertial-to-body direction cosine matrix `T_I^B`. Non-unit input is
/// normalised (with a warning beyond `1e-6`).
pub fn dcm_from_quaternion(q: &Quat) -> Mat3 {
    let norm = q.norm();
    if (norm - 1.0).abs() > 1e-6 {
        log::warn!("normalising quaternion with norm {norm}");
    }
    let q = q / norm;
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    #[rustfmt::skip]
    let m = Mat3::new(
        q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2.0 * (q1 * q2 + q0 * q3), 2.0 * (q1 * q3 - q0 * q2),
        2.0 * (q1 * q2 - q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3, 2.0 * (q2 * q3 + q0 * q1),
        2.0 * (q1 * q3 + q0 * q2), 2.0 * (q2 * q3 - q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3,
    );
    m
}

/// Quaternion for roll `φ`, pitch `θ`, yaw `ψ` (3-2-1 sequence).
pub fn quaternion_from_euler(roll: f64, pitch: f64, yaw: f64) -> Quat {
    let (sr, cr) = (roll / 2.0).sin_cos();
    let (sp, cp) = (pitch / 2.0).sin_cos();
    let (sy, cy) = (yaw / 2.0).sin_cos();
    Quat::new(
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    )
}

/// Hamilton product `a ⊗ b`, scalar first.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let (a0, av) = (a[0], Vec3::new(a[1], a[2], a[3]));
    let (b0, bv) = (b[0], Vec3::new(b[1], b[2], b[3]));
    let v = a0 * bv + b0 * av + av.cross(&bv);
    Quat::new(a0 * b0 - av.dot(&bv), v.x, v.y, v.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Set when `|T[1,3]|` is within `1e-9` of one; roll is then fixed at 0.
    pub gimbal_lock: bool,
}

/// Roll, pitch and yaw from the elements of `T_I^B`.
pub fn euler_from_dcm(t: &Mat3) -> EulerAngles {
    let s = t[(0, 2)];
    if s.abs() >= 1.0 - 1e-9 {
        // Only yaw ∓ roll is observable; put it all in yaw.
        let pitch = -s.clamp(-1.0, 1.0).asin();
        let yaw = (-t[(1, 0)]).atan2(t[(1, 1)]);
        return EulerAngles { roll: 0.0, pitch, yaw, gimbal_lock: true };
    }
    EulerAngles {
        roll: t[(1, 2)].atan2(t[(2, 2)]),
        pitch: -s.asin(),
        yaw: t[(0, 1)].atan2(t[(0, 0)]),
        gimbal_lock: false,
    }
}

/// Time derivative of a [`QuadState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    pub rates: Vec3,
}

/// Rigid-body equations of motion under collective thrust `thrust` (N, along
/// body z) and body torque `torque` (N·m).
pub fn dynamics_derivative(state: &QuadState, thrust: f64, torque: &Vec3, params: &QuadParams) -> StateDerivative {
    let t_ib = state.dcm();
    let w = state.rates;
    let velocity = -w.cross(&state.velocity) + Vec3::z() * (thrust / params.mass) - t_ib * Vec3::z() * params.gravity;
    let position = t_ib.transpose() * state.velocity;
    let inertia = Vec3::from(params.inertia);
    let momentum = inertia.component_mul(&w);
    let rates = (torque - w.cross(&momentum)).component_div(&inertia);
    let attitude = 0.5 * quat_mul(&state.attitude, &Quat::new(0.0, w.x, w.y, w.z));
    StateDerivative { position, velocity, attitude, rates }
}

fn advanced(state: &QuadState, d: &StateDerivative, h: f64) -> QuadState {
    QuadState {
        position: state.position + d.position * h,
        velocity: state.velocity + d.velocity * h,
        attitude: state.attitude + d.attitude * h,
        rates: state.rates + d.rates * h,
    }
}

/// One fixed-step RK4 step with the quaternion renormalised afterwards.
/// Returns `|‖q‖ − 1|` before renormalisation.
pub fn rk4_step(state: &mut QuadState, thrust: f64, torque: &Vec3, params: &QuadParams, dt: f64) -> f64 {
    let k1 = dynamics_derivative(state, thrust, torque, params);
    let k2 = dynamics_derivative(&advanced(state, &k1, dt / 2.0), thrust, torque, params);
    let k3 = dynamics_derivative(&advanced(state, &k2, dt / 2.0), thrust, torque, params);
    let k4 = dynamics_derivative(&advanced(state, &k3, dt), thrust, torque, params);
    let sixth = dt / 6.0;
    state.position += (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * sixth;
    state.velocity += (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity) * sixth;
    state.attitude += (k1.attitude + 2.0 * k2.attitude + 2.0 * k3.attitude + k4.attitude) * sixth;
    state.rates += (k1.rates + 2.0 * k2.rates + 2.0 * k3.rates + k4.rates) * sixth;
    let norm = state.attitude.norm();
    state.attitude /= norm;
    (norm - 1.0).abs()
}

/// Thrust and attitude set-points for the inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeCommand {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Set when the acceleration command was zero and hover thrust was used.
    pub hover_fallback: bool,
}

impl AttitudeCommand {
    pub fn hover(params: &QuadParams, yaw: f64) -> Self {
        Self { thrust: params.hover_thrust(), roll: 0.0, pitch: 0.0, yaw, hover_fallback: false }
    }
}

/// Maps an inertial acceleration command `u` (force per unit mass, gravity
/// compensation included) to thrust, pitch and roll. Thrust is `m` times the
/// projection of `u` on the current body z axis.
pub fn thrust_attitude_from_force(
    u: &Vec3,
    current: &EulerAngles,
    yaw_cmd: f64,
    params: &QuadParams,
    previous: &AttitudeCommand,
) -> AttitudeCommand {
    let norm = u.norm();
    if !(norm > 1e-12) {
        return AttitudeCommand {
            thrust: params.hover_thrust(),
            roll: previous.roll,
            pitch: previous.pitch,
            yaw: yaw_cmd,
            hover_fallback: true,
        };
    }
    let (sphi, cphi) = current.roll.sin_cos();
    let (sth, cth) = current.pitch.sin_cos();
    let (spsi, cpsi) = current.yaw.sin_cos();
    let thrust = params.mass
        * (u.x * (sth * cpsi * cphi + spsi * sphi) + u.y * (sth * spsi * cphi - cpsi * sphi) + u.z * cth * cphi);
    let (sy, cy) = yaw_cmd.sin_cos();
    let pitch = (u.x * cy + u.y * sy).atan2(u.z);
    let roll = ((u.x * sy - u.y * cy) / norm).clamp(-1.0, 1.0).asin();
    AttitudeCommand { thrust, roll, pitch, yaw: yaw_cmd, hover_fallback: false }
}

/// Rotor speed command and whether any rotor saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorCommand {
    /// Squared rotor speeds after clamping, (rad/s)².
    pub speed_squared: Vector4<f64>,
    pub saturated: bool,
}

impl RotorCommand {
    pub fn speeds(&self) -> Vector4<f64> {
        self.speed_squared.map(f64::sqrt)
    }
}

/// Control allocation `[T; τ] = A ω²` for the cross layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RotorAllocator {
    matrix: Matrix4<f64>,
    inverse: Matrix4<f64>,
    max_speed_squared: f64,
}

impl RotorAllocator {
    pub fn new(params: &QuadParams) -> Result<Self, VehicleError> {
        let rotors = params.rotor_positions();
        let (kt, kd) = (params.k_thrust, params.k_moment);
        let mut matrix = Matrix4::zeros();
        for (i, r) in rotors.iter().enumerate() {
            matrix[(0, i)] = kt;
            matrix[(1, i)] = r.y * kt;
            matrix[(2, i)] = -r.x * kt;
            matrix[(3, i)] = if i % 2 == 0 { kd } else { -kd };
        }
        let inverse = matrix.try_inverse().ok_or(VehicleError::SingularAllocation)?;
        Ok(Self { matrix, inverse, max_speed_squared: params.max_rotor_speed.powi(2) })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    /// Unclamped `A⁻¹ [T; τ]`.
    pub fn solve(&self, thrust: f64, torque: &Vec3) -> Vector4<f64> {
        self.inverse * Vector4::new(thrust, torque.x, torque.y, torque.z)
    }

    /// Squared rotor speeds clamped to `[0, ω_max²]`.
    pub fn allocate(&self, thrust: f64, torque: &Vec3) -> RotorCommand {
        let raw = self.solve(thrust, torque);
        let speed_squared = raw.map(|w| w.clamp(0.0, self.max_speed_squared));
        RotorCommand { speed_squared, saturated: speed_squared != raw }
    }

    /// Thrust and torque produced by the given squared speeds.
    pub fn wrench(&self, speed_squared: &Vector4<f64>) -> (f64, Vec3) {
        let w = self.matrix * speed_squared;
        (w[0], Vec3::new(w[1], w[2], w[3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub p: f64,
    pub i: f64,
    pub d: f64,
}

/// Cascaded attitude/rate controller gains and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Attitude loop: angle error (rad) → rate set-point (rad/s).
    pub attitude: PidGains,
    /// Rate loop: rate error (rad/s) → torque (N·m).
    pub rate: PidGains,
    /// Yaw-axis rate loop (lower control authority than roll/pitch).
    pub yaw_rate: PidGains,
    pub attitude_integral_limit: f64,
    pub rate_integral_limit: f64,
    /// Rate set-point magnitude limit, rad/s.
    pub max_rate: f64,
    /// Torque limit per axis, N·m.
    pub max_torque: [f64; 3],
    /// Roll/pitch command limit, degrees.
    pub max_tilt_deg: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            attitude: PidGains { p: 8.0, i: 0.1, d: 0.0 },
            rate: PidGains { p: 2.0, i: 0.2, d: 0.001 },
            yaw_rate: PidGains { p: 0.5, i: 0.05, d: 0.0 },
            attitude_integral_limit: 0.5,
            rate_integral_limit: 0.5,
            max_rate: 4.0,
            max_torque: [1.5, 1.5, 0.2],
            max_tilt_deg: 35.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Pid {
    integral: f64,
    previous: Option<f64>,
}

impl Pid {
    /// PID with derivative on the measurement and a clamped integrator.
    fn update(&mut self, gains: &PidGains, error: f64, measurement: f64, limit: f64, dt: f64) -> f64 {
        self.integral = (self.integral + error * dt).clamp(-limit, limit);
        let derivative = match self.previous {
            Some(prev) => -(measurement - prev) / dt,
            None => 0.0,
        };
        self.previous = Some(measurement);
        gains.p * error + gains.i * self.integral + gains.d * derivative
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        r
    }
}

/// Outer attitude loop feeding an inner body-rate loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeController {
    pub gains: ControllerGains,
    attitude: [Pid; 3],
    rate: [Pid; 3],
}

impl AttitudeController {
    pub fn new(gains: ControllerGains) -> Self {
        Self { gains, attitude: [Pid::default(); 3], rate: [Pid::default(); 3] }
    }

    /// Torque command for attitude set-point `cmd`.
    pub fn step(&mut self, euler: &EulerAngles, rates: &Vec3, cmd: &AttitudeCommand, dt: f64) -> Vec3 {
        let g = self.gains;
        let tilt = g.max_tilt_deg.to_radians();
        let target = [cmd.roll.clamp(-tilt, tilt), cmd.pitch.clamp(-tilt, tilt), cmd.yaw];
        let actual = [euler.roll, euler.pitch, euler.yaw];
        let mut torque = Vec3::zeros();
        for axis in 0..3 {
            let error = wrap_angle(target[axis] - actual[axis]);
            let rate_sp = self.attitude[axis]
                .update(&g.attitude, error, actual[axis], g.attitude_integral_limit, dt)
                .clamp(-g.max_rate, g.max_rate);
            let rate_gains = if axis == 2 { &g.yaw_rate } else { &g.rate };
            let out = self.rate[axis].update(rate_gains, rate_sp - rates[axis], rates[axis], g.rate_integral_limit, dt);
            torque[axis] = out.clamp(-g.max_torque[axis], g.max_torque[axis]);
        }
        torque
    }

    pub fn reset(&mut self) {
        self.attitude = [Pid::default(); 3];
        self.rate = [Pid::default(); 3];
    }
}

/// A quadrotor with its low-level controller, advanced by the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrotor {
    pub state: QuadState,
    pub controller: AttitudeController,
    pub rotors: RotorCommand,
    /// Thrust actually produced by the rotors during the last inner step, N.
    pub thrust: f64,
    /// Largest quaternion drift seen before renormalisation.
    pub max_norm_drift: f64,
}

impl Quadrotor {
    pub fn new(state: QuadState, gains: ControllerGains, params: &QuadParams) -> Self {
        let hover = params.hover_thrust() / (4.0 * params.k_thrust);
        Self {
            state,
            controller: AttitudeController::new(gains),
            rotors: RotorCommand { speed_squared: Vector4::repeat(hover), saturated: false },
            thrust: params.hover_thrust(),
            max_norm_drift: 0.0,
        }
    }

    /// Runs `substeps` inner steps of `dt` tracking `cmd`. Returns whether any
    /// rotor saturated.
    pub fn advance(
        &mut self,
        cmd: &AttitudeCommand,
        params: &QuadParams,
        allocator: &RotorAllocator,
        dt: f64,
        substeps: usize,
    ) -> bool {
        let mut saturated = false;
        for _ in 0..substeps {
            let euler = self.state.euler();
            let torque_cmd = self.controller.step(&euler, &self.state.rates, cmd, dt);
            self.rotors = allocator.allocate(cmd.thrust, &torque_cmd);
            saturated |= self.rotors.saturated;
            let (thrust, torque) = allocator.wrench(&self.rotors.speed_squared);
            self.thrust = thrust;
            let drift = rk4_step(&mut self.state, thrust, &torque, params, dt);
            self.max_norm_drift = self.max_norm_drift.max(drift);
        }
        saturated
    }
}
