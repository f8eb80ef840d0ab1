//! Potential-flow velocity fields around moving obstacles.
//!
//! A spherical obstacle is modelled as a 3D doublet placed in the freestream
//! seen by the agent relative to the obstacle. The doublet strength is chosen
//! so that the sphere of radius `R_d + ε` is a stream surface, which makes
//! the induced velocity a collision-free velocity reference. Ellipsoidal
//! obstacles use a finite source/sink pair (a Rankine body).
//!
//! Angles follow the usual spherical convention of the doublet frame `{D}`:
//! the polar axis `ẑ_D` is aligned with the relative freestream, `θ` is the
//! polar angle of the query point and `Φ` its azimuth.

mod sampling;

pub use sampling::{sample_field, write_field_csv, FieldSample, GridSpec};

use std::f64::consts::PI;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Mat3, Vec3};

/// Relative freestream speeds below this are treated as "no flow".
pub const DEGENERATE_SPEED: f64 = 1e-9;

/// Relative inflation applied when a query point inside a body is pushed back
/// onto its surface.
pub const PROJECTION_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("radial distance {r} m is not positive (singular at the doublet centre)")]
    Singular { r: f64 },
    #[error("relative freestream speed {speed} m/s is degenerate")]
    DegenerateFreestream { speed: f64 },
    #[error("query point at r = {r} m is inside the avoidance surface of radius {radius} m")]
    InsideBody { r: f64, radius: f64 },
    #[error("query point is inside the Rankine body")]
    InsideRankine,
    #[error("query point coincides with a Rankine source or sink")]
    RankineSingularity,
    #[error("invalid flow body: {0}")]
    InvalidBody(String),
}

/// Geometry of a flow body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BodyKind {
    /// Sphere generated by a doublet; `radius` is the desired clearance `R_d`.
    Doublet { radius: f64 },
    /// Closed body of revolution generated by a source/sink pair separated by
    /// `separation` along the relative freestream, each of strength `strength`
    /// (volume flux, m³/s).
    Rankine { separation: f64, strength: f64 },
}

/// A moving obstacle as seen by the flow model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowBody {
    pub center: Vec3,
    pub velocity: Vec3,
    pub kind: BodyKind,
    /// Buffer `ε` added to the doublet radius.
    pub buffer: f64,
}

impl FlowBody {
    pub fn doublet(center: Vec3, velocity: Vec3, radius: f64, buffer: f64) -> Self {
        Self { center, velocity, kind: BodyKind::Doublet { radius }, buffer }
    }

    pub fn rankine(center: Vec3, velocity: Vec3, separation: f64, strength: f64) -> Self {
        Self { center, velocity, kind: BodyKind::Rankine { separation, strength }, buffer: 0.0 }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.buffer >= 0.0) {
            return Err(FlowError::InvalidBody(format!("buffer must be >= 0, got {}", self.buffer)));
        }
        match self.kind {
            BodyKind::Doublet { radius } if !(radius > 0.0) => {
                Err(FlowError::InvalidBody(format!("doublet radius must be > 0, got {radius}")))
            }
            BodyKind::Rankine { separation, strength } if !(separation > 0.0 && strength > 0.0) => {
                Err(FlowError::InvalidBody(format!(
                    "Rankine separation and strength must be > 0, got {separation} and {strength}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Avoidance radius `R_d + ε` of a doublet body.
    pub fn effective_radius(&self) -> Option<f64> {
        match self.kind {
            BodyKind::Doublet { radius } => Some(radius + self.buffer),
            BodyKind::Rankine { .. } => None,
        }
    }

    /// Whether `point` lies inside the body for the given freestream.
    pub fn contains(&self, point: &Vec3, freestream: &Vec3) -> bool {
        match self.kind {
            BodyKind::Doublet { radius } => (point - self.center).norm() <= radius + self.buffer,
            BodyKind::Rankine { .. } => rankine_contains(point, self, freestream),
        }
    }
}

/// Velocity in the doublet's spherical basis `(ê_r, ê_θ, ê_Φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SphericalVelocity {
    pub radial: f64,
    pub polar: f64,
    pub azimuthal: f64,
}

impl SphericalVelocity {
    pub fn as_vector(&self) -> Vec3 {
        Vec3::new(self.radial, self.polar, self.azimuthal)
    }
}

/// Orientation of the doublet frame and the query point's spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowFrame {
    pub elevation: f64,
    pub azimuth: f64,
    /// Rotation from the inertial frame to the doublet frame, `T_I^D`.
    pub inertial_to_local: Mat3,
    /// Rotation from the spherical basis to the doublet frame, `T_E^D`.
    pub spherical_to_local: Mat3,
    /// Polar angle of the query point from the freestream axis.
    pub theta: f64,
    /// Azimuth of the query point around the freestream axis.
    pub phi: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubletDetail {
    pub strength: f64,
    pub spherical: SphericalVelocity,
    pub frame: FlowFrame,
}

/// Result of evaluating one body's flow at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSolution {
    /// Induced absolute velocity `v_h`.
    pub velocity: Vec3,
    /// Freestream relative to the body, `v_∞ − v_o`.
    pub relative_freestream: Vec3,
    /// Doublet internals; `None` for Rankine bodies and degenerate freestreams.
    pub doublet: Option<DoubletDetail>,
}

/// How several bodies are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Superposition {
    /// Each body's output is the freestream of the next, nearest body last.
    #[default]
    Sequential,
    /// Sum of each body's perturbation of the original freestream.
    Additive,
}

fn check_radius(r: f64) -> Result<(), FlowError> {
    if r > 0.0 {
        Ok(())
    } else {
        Err(FlowError::Singular { r })
    }
}

/// Doublet potential `φ_d = −μ cosθ / (4π r²)`.
pub fn doublet_potential(r: f64, theta: f64, strength: f64) -> Result<f64, FlowError> {
    check_radius(r)?;
    Ok(-strength * theta.cos() / (4.0 * PI * r * r))
}

/// Gradient of [`doublet_potential`] in spherical components.
pub fn doublet_velocity(r: f64, theta: f64, strength: f64) -> Result<SphericalVelocity, FlowError> {
    check_radius(r)?;
    let r3 = r * r * r;
    Ok(SphericalVelocity {
        radial: strength * theta.cos() / (2.0 * PI * r3),
        polar: strength * theta.sin() / (4.0 * PI * r3),
        azimuthal: 0.0,
    })
}

/// Doublet strength that makes the sphere of radius `radius` a stream surface
/// in a uniform stream of the given speed.
pub fn doublet_strength(radius: f64, speed: f64) -> f64 {
    -2.0 * PI * radius.powi(3) * speed
}

/// Builds the doublet frame for relative freestream `v_rel` and relative
/// position `r_rel = r_agent − r_obstacle`.
pub fn flow_frame(v_rel: &Vec3, r_rel: &Vec3) -> Result<FlowFrame, FlowError> {
    let speed = v_rel.norm();
    if speed < DEGENERATE_SPEED {
        return Err(FlowError::DegenerateFreestream { speed });
    }
    let r = r_rel.norm();
    check_radius(r)?;

    let elevation = (v_rel.z / speed).clamp(-1.0, 1.0).acos();
    let azimuth = v_rel.y.atan2(v_rel.x);
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    #[rustfmt::skip]
    let inertial_to_local = Mat3::new(
        ce * ca, ce * sa, -se,
        -sa,     ca,      0.0,
        se * ca, se * sa, ce,
    );

    let local = inertial_to_local * r_rel;
    let theta = (local.z / r).clamp(-1.0, 1.0).acos();
    let phi = local.y.atan2(local.x);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    #[rustfmt::skip]
    let spherical_to_local = Mat3::new(
        st * cp, ct * cp, -sp,
        st * sp, ct * sp, cp,
        ct,      -st,     0.0,
    );

    Ok(FlowFrame { elevation, azimuth, inertial_to_local, spherical_to_local, theta, phi, r })
}

/// Uniform stream of the given speed plus a doublet, in spherical components.
pub fn combined_flow_spherical(frame: &FlowFrame, speed: f64, strength: f64) -> Result<SphericalVelocity, FlowError> {
    let doublet = doublet_velocity(frame.r, frame.theta, strength)?;
    let (st, ct) = frame.theta.sin_cos();
    Ok(SphericalVelocity { radial: speed * ct + doublet.radial, polar: -speed * st + doublet.polar, azimuthal: 0.0 })
}

/// Induced absolute velocity of one body at `position` for freestream `freestream`.
///
/// Fails with [`FlowError::InsideBody`] when the point is on or inside the
/// avoidance sphere; see [`induced_velocity_projected`] for the tolerant form.
pub fn induced_velocity(position: &Vec3, body: &FlowBody, freestream: &Vec3) -> Result<FlowSolution, FlowError> {
    body.validate()?;
    let relative_freestream = freestream - body.velocity;
    let speed = relative_freestream.norm();
    if speed < DEGENERATE_SPEED {
        return Ok(FlowSolution { velocity: *freestream, relative_freestream, doublet: None });
    }
    match body.kind {
        BodyKind::Doublet { .. } => {
            let radius = body.effective_radius().expect("doublet");
            let r_rel = position - body.center;
            let r = r_rel.norm();
            if r <= radius {
                return Err(FlowError::InsideBody { r, radius });
            }
            let frame = flow_frame(&relative_freestream, &r_rel)?;
            let strength = doublet_strength(radius, speed);
            let spherical = combined_flow_spherical(&frame, speed, strength)?;
            let velocity = body.velocity
                + frame.inertial_to_local.transpose() * (frame.spherical_to_local * spherical.as_vector());
            Ok(FlowSolution {
                velocity,
                relative_freestream,
                doublet: Some(DoubletDetail { strength, spherical, frame }),
            })
        }
        BodyKind::Rankine { .. } => {
            if rankine_contains(position, body, freestream) {
                return Err(FlowError::InsideRankine);
            }
            let velocity = rankine_velocity(position, body, freestream)?;
            Ok(FlowSolution { velocity, relative_freestream, doublet: None })
        }
    }
}

/// Like [`induced_velocity`], but a point inside a doublet's avoidance sphere
/// is pushed radially to `R_eff·(1 + 1e-6)` first. Returns the velocity and
/// whether the point was inside the body.
pub fn induced_velocity_projected(position: &Vec3, body: &FlowBody, freestream: &Vec3) -> (Vec3, bool) {
    let inside = body.contains(position, freestream);
    let query = match (inside, body.effective_radius()) {
        (true, Some(radius)) => project_outside(position, body, freestream, radius),
        _ => *position,
    };
    let velocity = match body.kind {
        BodyKind::Rankine { .. } => rankine_velocity(&query, body, freestream).unwrap_or(*freestream),
        BodyKind::Doublet { .. } => {
            induced_velocity(&query, body, freestream).map(|s| s.velocity).unwrap_or(*freestream)
        }
    };
    (velocity, inside)
}

fn project_outside(position: &Vec3, body: &FlowBody, freestream: &Vec3, radius: f64) -> Vec3 {
    let offset = position - body.center;
    let norm = offset.norm();
    let direction = if norm > 0.0 {
        offset / norm
    } else {
        // Centre hit exactly: fall back to the upstream stagnation direction.
        let upstream = body.velocity - freestream;
        if upstream.norm() > DEGENERATE_SPEED {
            upstream.normalize()
        } else {
            Vec3::x()
        }
    };
    body.center + direction * radius * (1.0 + PROJECTION_MARGIN)
}

/// Bodies sorted nearest-first to `position`, ties broken by original index.
pub fn nearest_first(position: &Vec3, bodies: &[FlowBody]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bodies.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (bodies[a].center - position).norm();
        let db = (bodies[b].center - position).norm();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

/// Superposed induced velocity of several bodies.
pub fn superpose(
    position: &Vec3,
    bodies: &[FlowBody],
    freestream: &Vec3,
    mode: Superposition,
) -> Result<Vec3, FlowError> {
    let order = nearest_first(position, bodies);
    match mode {
        Superposition::Sequential => order
            .iter()
            .try_fold(*freestream, |stream, &k| induced_velocity(position, &bodies[k], &stream).map(|s| s.velocity)),
        Superposition::Additive => order.iter().try_fold(*freestream, |acc, &k| {
            let s = induced_velocity(position, &bodies[k], freestream)?;
            Ok(acc + (s.velocity - freestream))
        }),
    }
}

/// Superposed velocity plus the number of bodies whose surface was penetrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowQuery {
    pub velocity: Vec3,
    pub inside: usize,
}

/// Tolerant form of [`superpose`] used inside the control loop.
pub fn superpose_projected(position: &Vec3, bodies: &[FlowBody], freestream: &Vec3, mode: Superposition) -> FlowQuery {
    let mut inside = 0;
    let mut velocity = *freestream;
    for k in nearest_first(position, bodies) {
        let stream = match mode {
            Superposition::Sequential => velocity,
            Superposition::Additive => *freestream,
        };
        let (v, hit) = induced_velocity_projected(position, &bodies[k], &stream);
        inside += usize::from(hit);
        velocity = match mode {
            Superposition::Sequential => v,
            Superposition::Additive => velocity + (v - freestream),
        };
    }
    FlowQuery { velocity, inside }
}

/// Proportional velocity-tracking force `K_h (v_h − v)`.
pub fn avoidance_force(induced: &Vec3, agent_velocity: &Vec3, gain: f64) -> Vec3 {
    gain * (induced - agent_velocity)
}

/// Source and sink locations of a Rankine body. The source sits upstream so
/// the dividing stream surface closes around the pair.
fn rankine_poles(body: &FlowBody, relative_freestream: &Vec3) -> Option<(Vec3, Vec3, f64, f64)> {
    let BodyKind::Rankine { separation, strength } = body.kind else {
        return None;
    };
    let speed = relative_freestream.norm();
    if speed < DEGENERATE_SPEED {
        return None;
    }
    let axis = relative_freestream / speed;
    let source = body.center - axis * (separation / 2.0);
    let sink = body.center + axis * (separation / 2.0);
    Some((source, sink, strength, speed))
}

/// Velocity of a uniform stream past a source/sink pair
/// (`φ_so = −λ/(4π r₁)`, `φ_si = +λ/(4π r₂)`), in the inertial frame.
pub fn rankine_velocity(position: &Vec3, body: &FlowBody, freestream: &Vec3) -> Result<Vec3, FlowError> {
    body.validate()?;
    let relative = freestream - body.velocity;
    let Some((source, sink, strength, _)) = rankine_poles(body, &relative) else {
        return match body.kind {
            BodyKind::Rankine { .. } => Ok(*freestream),
            BodyKind::Doublet { .. } => Err(FlowError::InvalidBody("not a Rankine body".into())),
        };
    };
    let d1 = position - source;
    let d2 = position - sink;
    let (r1, r2) = (d1.norm(), d2.norm());
    if r1 == 0.0 || r2 == 0.0 {
        return Err(FlowError::RankineSingularity);
    }
    let k = strength / (4.0 * PI);
    Ok(body.velocity + relative + k * (d1 / r1.powi(3) - d2 / r2.powi(3)))
}

/// Stokes stream function of the Rankine flow in the body frame; zero on the
/// dividing surface and negative inside the body.
pub fn rankine_stream_function(position: &Vec3, body: &FlowBody, freestream: &Vec3) -> Option<f64> {
    let relative = freestream - body.velocity;
    let (source, sink, strength, speed) = rankine_poles(body, &relative)?;
    let axis = relative / speed;
    let offset = position - body.center;
    let x = offset.dot(&axis);
    let rho2 = (offset - axis * x).norm_squared();
    let cos_angle = |pole: &Vec3| {
        let d = position - pole;
        let n = d.norm();
        if n == 0.0 {
            0.0
        } else {
            d.dot(&axis) / n
        }
    };
    Some(0.5 * speed * rho2 - strength / (4.0 * PI) * (cos_angle(&source) - cos_angle(&sink)))
}

fn rankine_contains(position: &Vec3, body: &FlowBody, freestream: &Vec3) -> bool {
    rankine_stream_function(position, body, freestream).is_some_and(|psi| psi < 0.0)
}
