//! CSV and JSON artefacts. Every file starts with `format_version=1` and is
//! written to a temporary file first, then renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{RunMetrics, Summary};
use crate::Vec3;

pub const FORMAT_VERSION: &str = "format_version=1";

/// One agent's state at one logged tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent: usize,
    pub position: Vec3,
    /// Inertial velocity, m/s.
    pub velocity: Vec3,
    pub attitude: [f64; 4],
    pub rates: Vec3,
    /// Collective thrust, N.
    pub thrust: f64,
    /// Rotor speeds, rad/s.
    pub rotor_speeds: [f64; 4],
}

/// Shortest round-trip decimal, with exponent notation for very small or
/// large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn push_row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        out.push_str(&f);
        first = false;
    }
    out.push('\n');
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 256 + 128);
    writeln!(out, "{FORMAT_VERSION}").unwrap();
    out.push_str("t,agent_id,x,y,z,vx,vy,vz,q0,q1,q2,q3,p,q,r,T,w_p1,w_p2,w_p3,w_p4\n");
    for r in rows {
        let mut fields = vec![fmt_f64(r.t), r.agent.to_string()];
        fields.extend(r.position.iter().chain(r.velocity.iter()).map(|v| fmt_f64(*v)));
        fields.extend(r.attitude.iter().map(|v| fmt_f64(*v)));
        fields.extend(r.rates.iter().map(|v| fmt_f64(*v)));
        fields.push(fmt_f64(r.thrust));
        fields.extend(r.rotor_speeds.iter().map(|v| fmt_f64(*v)));
        push_row(&mut out, fields);
    }
    out
}

pub fn metrics_csv(metrics: &RunMetrics, edges: usize) -> String {
    let mut out = String::new();
    writeln!(out, "{FORMAT_VERSION}").unwrap();
    let mut header = vec!["t".to_string(), "agent_id".into(), "min_clearance".into()];
    header.extend((0..edges).map(|k| format!("c_{k}")));
    header.extend(
        [
            "reference_error",
            "yaw_cmd",
            "yaw_meas",
            "solve_residual",
            "in_range",
            "inside_body",
            "saturated",
            "hover_fallback",
            "degenerate",
        ]
        .map(String::from),
    );
    push_row(&mut out, header);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for tick in &metrics.ticks {
        for (i, a) in tick.agents.iter().enumerate() {
            let mut fields = vec![fmt_f64(tick.t), i.to_string(), opt(a.clearance)];
            fields.extend(tick.residuals.iter().map(|c| fmt_f64(*c)));
            fields.push(fmt_f64(a.reference_error));
            fields.push(fmt_f64(tick.yaw_command));
            fields.push(opt(tick.yaw_measured));
            fields.push(opt(tick.solve_residual));
            fields.extend([a.in_range, a.inside, a.saturated, a.hover_fallback, tick.degenerate].map(flag));
            push_row(&mut out, fields);
        }
    }
    out
}

pub fn summary_json(summary: &Summary) -> String {
    let mut out = format!("{FORMAT_VERSION}\n");
    out.push_str(&serde_json::to_string_pretty(summary).expect("summary serialises"));
    out.push('\n');
    out
}

/// Reads a summary file written by [`summary_json`].
pub fn parse_summary(text: &str) -> Result<serde_json::Value, String> {
    let body = text.strip_prefix(FORMAT_VERSION).ok_or_else(|| format!("missing `{FORMAT_VERSION}` header"))?;
    serde_json::from_str(body).map_err(|e| e.to_string())
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
