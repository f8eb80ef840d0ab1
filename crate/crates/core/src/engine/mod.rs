//! Scenario configuration, the synthesised per-tick control law, metrics and
//! run outputs.

pub mod config;
pub mod metrics;
pub mod output;
pub mod reference;
mod sim;

pub use config::{ConfigError, Issue, ScenarioConfig, ValidationReport};
pub use metrics::{RunMetrics, Summary, TickRecord};
pub use reference::figure_eight_reference;
pub use sim::{run, run_batch, Agent, EngineError, RunOutput, Simulation};

use std::path::{Path, PathBuf};

/// Paths of the files written by [`RunOutput::write`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub trajectory: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

impl RunOutput {
    pub fn trajectory_csv(&self) -> String {
        output::trajectory_csv(&self.trajectory)
    }

    pub fn metrics_csv(&self) -> String {
        output::metrics_csv(&self.metrics, self.edges)
    }

    pub fn summary_json(&self) -> String {
        output::summary_json(&self.summary)
    }

    /// Writes the three artefacts into `dir` using the configured file names.
    pub fn write(&self, dir: &Path) -> std::io::Result<OutputPaths> {
        let names = &self.summary_config_outputs();
        let paths = OutputPaths {
            trajectory: dir.join(&names.trajectory_file),
            metrics: dir.join(&names.metrics_file),
            summary: dir.join(&names.summary_file),
        };
        output::write_atomic(&paths.trajectory, self.trajectory_csv().as_bytes())?;
        output::write_atomic(&paths.metrics, self.metrics_csv().as_bytes())?;
        output::write_atomic(&paths.summary, self.summary_json().as_bytes())?;
        Ok(paths)
    }

    fn summary_config_outputs(&self) -> config::OutputConfig {
        self.summary.config.get("outputs").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or_default()
    }
}
