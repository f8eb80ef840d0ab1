//! Reference trajectories: the single-vehicle figure eight and the formation
//! centre path with its yaw profile.

use std::f64::consts::{PI, TAU};

use super::config::{FigureEightSpec, LineSpec, ReferenceConfig};
use crate::assignment::FormationPose;
use crate::{Mat3, Vec3};

/// Position, velocity and acceleration of a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

/// Gerono lemniscate with analytic derivatives.
pub fn figure_eight_reference(t: f64, spec: &FigureEightSpec) -> ReferenceState {
    let w = TAU / spec.period;
    let (a, b) = (spec.amplitude_x, spec.amplitude_y);
    let (s1, c1) = (w * t).sin_cos();
    let (s2, c2) = (2.0 * w * t).sin_cos();
    ReferenceState {
        position: Vec3::new(spec.origin[0] + a * s1, spec.origin[1] + b * s2 / 2.0, spec.altitude),
        velocity: Vec3::new(a * w * c1, b * w * c2, 0.0),
        acceleration: Vec3::new(-a * w * w * s1, -2.0 * b * w * w * s2, 0.0),
    }
}

/// Straight-line centre path: holds `start` until `start_time`, then blends
/// to the cruise velocity over `ramp_time` with a smoothstep velocity profile.
pub fn line_reference(t: f64, spec: &LineSpec) -> ReferenceState {
    let start = Vec3::from(spec.start);
    let v = Vec3::from(spec.velocity);
    let tau = t - spec.start_time;
    if tau <= 0.0 {
        return ReferenceState { position: start, velocity: Vec3::zeros(), acceleration: Vec3::zeros() };
    }
    let ramp = spec.ramp_time;
    if tau >= ramp {
        return ReferenceState {
            position: start + v * (ramp / 2.0 + (tau - ramp)),
            velocity: v,
            acceleration: Vec3::zeros(),
        };
    }
    let s = tau / ramp;
    ReferenceState {
        position: start + v * ramp * (s.powi(3) - s.powi(4) / 2.0),
        velocity: v * (3.0 * s * s - 2.0 * s.powi(3)),
        acceleration: v * (6.0 * s - 6.0 * s * s) / ramp,
    }
}

/// Yaw angle, rate and acceleration (rad, rad/s, rad/s²) from keyframes.
pub fn yaw_profile(t: f64, frames: &[super::config::YawKeyframe]) -> (f64, f64, f64) {
    let Some(first) = frames.first() else {
        return (0.0, 0.0, 0.0);
    };
    if t <= first.t {
        return (first.yaw_deg.to_radians(), 0.0, 0.0);
    }
    for w in frames.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t < b.t {
            let span = b.t - a.t;
            let delta = (b.yaw_deg - a.yaw_deg).to_radians();
            let x = PI * (t - a.t) / span;
            let yaw = a.yaw_deg.to_radians() + delta * (1.0 - x.cos()) / 2.0;
            let rate = delta * PI * x.sin() / (2.0 * span);
            let accel = delta * PI * PI * x.cos() / (2.0 * span * span);
            return (yaw, rate, accel);
        }
    }
    (frames[frames.len() - 1].yaw_deg.to_radians(), 0.0, 0.0)
}

/// Local-to-inertial rotation for a formation yawed by `yaw`.
pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `d/dψ` of [`yaw_matrix`] without the rotation: `R'(ψ) = R(ψ) K`.
fn yaw_generator() -> Mat3 {
    Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
}

/// Formation pose and the second derivative of its attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseReference {
    pub pose: FormationPose,
    pub attitude_accel: Mat3,
    pub yaw: f64,
}

impl PoseReference {
    /// Desired acceleration of a slot: `r̈_cm + T̈ s`.
    pub fn slot_acceleration(&self, slot: &Vec3) -> Vec3 {
        self.pose.acceleration + self.attitude_accel * slot
    }
}

/// Reference state of either kind at time `t`. The figure eight yields a
/// pose with identity attitude.
pub fn pose_at(t: f64, reference: &ReferenceConfig) -> PoseReference {
    match reference {
        ReferenceConfig::FigureEight(spec) => {
            let s = figure_eight_reference(t, spec);
            PoseReference {
                pose: FormationPose {
                    center: s.position,
                    velocity: s.velocity,
                    acceleration: s.acceleration,
                    attitude: Mat3::identity(),
                    attitude_rate: Mat3::zeros(),
                },
                attitude_accel: Mat3::zeros(),
                yaw: 0.0,
            }
        }
        ReferenceConfig::Line(spec) => {
            let s = line_reference(t, spec);
            let (yaw, rate, accel) = yaw_profile(t, &spec.yaw);
            let r = yaw_matrix(yaw);
            let k = yaw_generator();
            PoseReference {
                pose: FormationPose {
                    center: s.position,
                    velocity: s.velocity,
                    acceleration: s.acceleration,
                    attitude: r,
                    attitude_rate: r * k * rate,
                },
                attitude_accel: r * (k * accel + k * k * rate * rate),
                yaw,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::config::YawKeyframe;

    fn spec() -> FigureEightSpec {
        FigureEightSpec { amplitude_x: 20.0, amplitude_y: 10.0, period: 60.0, altitude: 20.0, origin: [0.0, 0.0] }
    }

    #[test]
    fn figure_eight_start() {
        let s = figure_eight_reference(0.0, &spec());
        assert_eq!(s.position, Vec3::new(0.0, 0.0, 20.0));
        let w = TAU / 60.0;
        assert!((s.velocity - Vec3::new(20.0 * w, 10.0 * w, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn figure_eight_crosses_itself_at_half_period() {
        let s = figure_eight_reference(30.0, &spec());
        assert!(s.position.x.abs() < 1e-12 && s.position.y.abs() < 1e-12);
        let a = figure_eight_reference(0.0, &spec()).velocity;
        let b = s.velocity;
        // Distinct tangents: a genuine crossing.
        assert!(a.cross(&b).norm() > 1e-3);
    }

    fn check_derivatives(f: impl Fn(f64) -> (Vec3, Vec3, Vec3), times: &[f64]) {
        let h = 1e-5;
        for &t in times {
            let (p0, v0, a0) = f(t);
            let (pp, vp, _) = f(t + h);
            let (pm, vm, _) = f(t - h);
            assert!(((pp - pm) / (2.0 * h) - v0).norm() < 1e-6, "velocity at {t}");
            assert!(((vp - vm) / (2.0 * h) - a0).norm() < 1e-6, "acceleration at {t}");
            let _ = p0;
        }
    }

    #[test]
    fn figure_eight_derivatives() {
        check_derivatives(
            |t| {
                let s = figure_eight_reference(t, &spec());
                (s.position, s.velocity, s.acceleration)
            },
            &[0.3, 7.0, 22.2, 45.0],
        );
    }

    #[test]
    fn line_is_continuous_and_differentiable() {
        let spec = LineSpec {
            start: [1.0, 2.0, 20.0],
            velocity: [1.0, 0.5, 0.0],
            start_time: 2.0,
            ramp_time: 4.0,
            yaw: vec![],
        };
        check_derivatives(
            |t| {
                let s = line_reference(t, &spec);
                (s.position, s.velocity, s.acceleration)
            },
            &[1.0, 2.5, 4.0, 5.9, 7.0],
        );
        let before = line_reference(6.0 - 1e-12, &spec);
        let after = line_reference(6.0 + 1e-12, &spec);
        assert!((before.position - after.position).norm() < 1e-9);
        assert!((before.velocity - after.velocity).norm() < 1e-9);
        let late = line_reference(10.0, &spec);
        assert!((late.position - Vec3::new(1.0 + 6.0, 2.0 + 3.0, 20.0)).norm() < 1e-12);
    }

    #[test]
    fn slot_derivatives_match_finite_differences() {
        let line = LineSpec {
            start: [0.0, 0.0, 20.0],
            velocity: [1.0, 0.0, 0.0],
            start_time: 0.0,
            ramp_time: 2.0,
            yaw: vec![YawKeyframe { t: 1.0, yaw_deg: 0.0 }, YawKeyframe { t: 5.0, yaw_deg: 60.0 }],
        };
        let reference = ReferenceConfig::Line(line);
        let slot = Vec3::new(3.0, -1.5, 0.8);
        let h = 1e-5;
        for t in [0.5, 1.7, 3.0, 4.6] {
            let at = |t: f64| pose_at(t, &reference);
            let r = at(t);
            let pos = |p: &PoseReference| crate::assignment::desired_position(&slot, &p.pose);
            let vel = |p: &PoseReference| crate::assignment::desired_velocity(&slot, &p.pose);
            let fd_v = (pos(&at(t + h)) - pos(&at(t - h))) / (2.0 * h);
            let fd_a = (vel(&at(t + h)) - vel(&at(t - h))) / (2.0 * h);
            assert!((fd_v - vel(&r)).norm() < 1e-6, "t = {t}");
            assert!((fd_a - r.slot_acceleration(&slot)).norm() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn yaw_profile_hits_keyframes() {
        let frames = [YawKeyframe { t: 10.0, yaw_deg: 0.0 }, YawKeyframe { t: 20.0, yaw_deg: 90.0 }];
        assert_eq!(yaw_profile(0.0, &frames).0, 0.0);
        assert!((yaw_profile(15.0, &frames).0 - 45f64.to_radians()).abs() < 1e-12);
        assert!((yaw_profile(25.0, &frames).0 - 90f64.to_radians()).abs() < 1e-12);
        assert_eq!(yaw_profile(5.0, &[]), (0.0, 0.0, 0.0));
    }
}
