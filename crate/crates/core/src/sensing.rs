//! Obstacle sensing: a cylindrical detection gate, reproducible Gaussian
//! position noise, and a constant-velocity Kalman filter per obstacle track.

use nalgebra::{Matrix3x6, Matrix6, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("non-finite measurement {0:?}")]
    NonFiniteMeasurement([f64; 3]),
    #[error("innovation covariance is not positive definite")]
    IndefiniteInnovation,
}

/// Vertical cylinder centred on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SensingRange {
    /// Horizontal radius, m.
    pub radius: f64,
    /// Half height, m.
    pub half_height: f64,
}

impl Default for SensingRange {
    fn default() -> Self {
        Self { radius: 10.0, half_height: 3.0 }
    }
}

/// Whether `target` lies inside the gate around `sensor`, boundary included.
pub fn in_sensing_range(sensor: &Vec3, target: &Vec3, range: &SensingRange) -> bool {
    let d = target - sensor;
    d.x.hypot(d.y) <= range.radius && d.z.abs() <= range.half_height
}

/// Identifies one draw of measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub agent: u64,
    pub obstacle: u64,
    pub step: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseKey {
    /// Stream seed derived from every field, so draws do not depend on the
    /// order in which agents or obstacles are processed.
    pub fn stream_seed(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for v in [self.agent, self.obstacle, self.step] {
            h = splitmix64(h ^ v);
        }
        h
    }
}

/// Standard-normal 3-vector for `key`.
pub fn standard_normal3(key: &NoiseKey) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(key.stream_seed());
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    Vec3::new(draw(), draw(), draw())
}

/// `truth + σ·n` with `n ~ N(0, I)` drawn from the keyed stream.
pub fn noisy_measurement(truth: &Vec3, sigma: f64, key: &NoiseKey) -> Vec3 {
    truth + sigma * standard_normal3(key)
}

/// Filter settings shared by every track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Measurement noise standard deviation per axis, m.
    pub sigma: f64,
    /// White-noise acceleration spectral density, m²/s³.
    pub process_noise: f64,
    /// Initial velocity variance, (m/s)².
    pub initial_velocity_variance: f64,
    /// How long a track survives without measurements, s.
    pub coast_time: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { sigma: 0.05, process_noise: 0.5, initial_velocity_variance: 10.0, coast_time: 1.0 }
    }
}

/// Innovation of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub residual: Vec3,
    pub covariance: Mat3,
}

impl Innovation {
    /// Normalised innovation squared `yᵀ S⁻¹ y`.
    pub fn nis(&self) -> f64 {
        let inv = self.covariance.try_inverse().unwrap_or_else(Mat3::zeros);
        self.residual.dot(&(inv * self.residual))
    }
}

fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

fn process_covariance(dt: f64, q: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = q * dt.powi(3) / 3.0;
        m[(i, i + 3)] = q * dt.powi(2) / 2.0;
        m[(i + 3, i)] = q * dt.powi(2) / 2.0;
        m[(i + 3, i + 3)] = q * dt;
    }
    m
}

fn observation() -> Matrix3x6<f64> {
    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    h
}

/// Constant-velocity estimate `[p; v]` with covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub state: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    /// Time of the last accepted measurement, s.
    pub last_update: f64,
}

impl Track {
    pub fn new(measurement: &Vec3, t: f64, config: &FilterConfig) -> Self {
        let mut state = Vector6::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(measurement);
        let s2 = config.sigma * config.sigma;
        let v2 = config.initial_velocity_variance;
        let covariance = Matrix6::from_diagonal(&Vector6::new(s2, s2, s2, v2, v2, v2));
        Self { state, covariance, last_update: t }
    }

    pub fn position(&self) -> Vec3 {
        self.state.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vec3 {
        self.state.fixed_rows::<3>(3).into()
    }

    pub fn predict(&mut self, dt: f64, config: &FilterConfig) {
        let f = transition(dt);
        self.state = f * self.state;
        self.covariance = f * self.covariance * f.transpose() + process_covariance(dt, config.process_noise);
        self.symmetrize();
    }

    /// Joseph-form update with a position measurement.
    pub fn update(&mut self, z: &Vec3, t: f64, config: &FilterConfig) -> Result<Innovation, SensingError> {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(SensingError::NonFiniteMeasurement([z.x, z.y, z.z]));
        }
        let h = observation();
        let r = Mat3::identity() * config.sigma * config.sigma;
        let residual = z - h * self.state;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.cholesky().ok_or(SensingError::IndefiniteInnovation)?.inverse();
        let k = self.covariance * h.transpose() * s_inv;
        self.state += k * residual;
        let a = Matrix6::identity() - k * h;
        self.covariance = a * self.covariance * a.transpose() + k * r * k.transpose();
        self.symmetrize();
        self.last_update = t;
        Ok(Innovation { residual, covariance: s })
    }

    fn symmetrize(&mut self) {
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
    }
}

/// What an agent currently knows about one obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackStatus {
    /// Measured this tick.
    Measured {
        position: Vec3,
        velocity: Vec3,
    },
    /// Out of range but inside the coast window.
    Coasting {
        position: Vec3,
        velocity: Vec3,
    },
    Untracked,
}

impl TrackStatus {
    pub fn estimate(&self) -> Option<(Vec3, Vec3)> {
        match *self {
            TrackStatus::Measured { position, velocity } | TrackStatus::Coasting { position, velocity } => {
                Some((position, velocity))
            }
            TrackStatus::Untracked => None,
        }
    }

    pub fn is_measured(&self) -> bool {
        matches!(self, TrackStatus::Measured { .. })
    }
}

/// Tracks of every obstacle as seen by one agent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleTracker {
    tracks: Vec<Option<Track>>,
    rejected: usize,
}

impl ObstacleTracker {
    pub fn new(obstacles: usize) -> Self {
        Self { tracks: vec![None; obstacles], rejected: 0 }
    }

    pub fn track(&self, obstacle: usize) -> Option<&Track> {
        self.tracks.get(obstacle).and_then(Option::as_ref)
    }

    /// Number of measurements discarded as non-finite.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Advances every track by `dt` to time `t` and fuses measurements of the
    /// obstacles inside the gate.
    #[allow(clippy::too_many_arguments)]
    pub fn observe(
        &mut self,
        sensor: &Vec3,
        truths: &[Vec3],
        range: &SensingRange,
        config: &FilterConfig,
        key: NoiseKey,
        t: f64,
        dt: f64,
    ) -> Vec<TrackStatus> {
        if self.tracks.len() < truths.len() {
            self.tracks.resize(truths.len(), None);
        }
        truths
            .iter()
            .enumerate()
            .map(|(j, truth)| {
                let slot = &mut self.tracks[j];
                if let Some(track) = slot.as_mut() {
                    track.predict(dt, config);
                }
                if in_sensing_range(sensor, truth, range) {
                    let z = noisy_measurement(truth, config.sigma, &NoiseKey { obstacle: j as u64, ..key });
                    match slot.as_mut() {
                        Some(track) => {
                            if track.update(&z, t, config).is_err() {
                                self.rejected += 1;
                            }
                        }
                        None if z.iter().all(|v| v.is_finite()) => *slot = Some(Track::new(&z, t, config)),
                        None => self.rejected += 1,
                    }
                    if let Some(track) = slot.as_ref() {
                        return TrackStatus::Measured { position: track.position(), velocity: track.velocity() };
                    }
                    return TrackStatus::Untracked;
                }
                match slot.as_ref() {
                    Some(track) if t - track.last_update <= config.coast_time + 1e-9 => {
                        TrackStatus::Coasting { position: track.position(), velocity: track.velocity() }
                    }
                    Some(_) => {
                        *slot = None;
                        TrackStatus::Untracked
                    }
                    None => TrackStatus::Untracked,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
