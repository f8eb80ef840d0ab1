//! Regular-grid sampling of the superposed flow, for external streamline plots.

use std::io::{self, Write};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{superpose, FlowBody, Superposition};
use crate::{Execution, Vec3};

/// Axis-aligned grid with `counts[k]` nodes along axis `k` (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub counts: [usize; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), String> {
        for k in 0..3 {
            if self.counts[k] == 0 {
                return Err(format!("counts[{k}] must be >= 1"));
            }
            if !(self.min[k].is_finite() && self.max[k].is_finite()) || self.max[k] < self.min[k] {
                return Err(format!("bounds on axis {k} are invalid: [{}, {}]", self.min[k], self.max[k]));
            }
            if self.counts[k] == 1 && self.max[k] != self.min[k] {
                return Err(format!("axis {k} has one node but a non-degenerate range"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `index` in x-fastest order.
    pub fn node(&self, index: usize) -> Vec3 {
        let ix = index % self.counts[0];
        let iy = (index / self.counts[0]) % self.counts[1];
        let iz = index / (self.counts[0] * self.counts[1]);
        let coord = |k: usize, i: usize| {
            if self.counts[k] == 1 {
                self.min[k]
            } else {
                self.min[k] + (self.max[k] - self.min[k]) * i as f64 / (self.counts[k] - 1) as f64
            }
        };
        Vec3::new(coord(0, ix), coord(1, iy), coord(2, iz))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub position: Vec3,
    /// `None` when the node lies inside a body.
    pub velocity: Option<Vec3>,
}

/// Evaluates the superposed flow at every grid node.
pub fn sample_field(
    bodies: &[FlowBody],
    freestream: &Vec3,
    mode: Superposition,
    grid: &GridSpec,
    exec: Execution,
) -> Vec<FieldSample> {
    exec.map(grid.len(), |i| {
        let position = grid.node(i);
        let inside = bodies.iter().any(|b| b.contains(&position, freestream));
        let velocity = if inside { None } else { superpose(&position, bodies, freestream, mode).ok() };
        FieldSample { position, velocity }
    })
}

/// Writes samples as `x,y,z,vx,vy,vz,inside`; inside rows leave the velocity blank.
pub fn write_field_csv<W: Write>(mut out: W, samples: &[FieldSample]) -> io::Result<()> {
    writeln!(out, "format_version=1")?;
    writeln!(out, "x,y,z,vx,vy,vz,inside")?;
    for s in samples {
        let p = s.position;
        match s.velocity {
            Some(v) => writeln!(out, "{},{},{},{},{},{},0", p.x, p.y, p.z, v.x, v.y, v.z)?,
            None => writeln!(out, "{},{},{},,,,1", p.x, p.y, p.z)?,
        }
    }
    Ok(())
}
