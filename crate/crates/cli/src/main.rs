use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hydrovrb::assignment::{allocate_inertial, desired_position, SlotGeometry};
use hydrovrb::engine::config::ReferenceConfig;
use hydrovrb::engine::output::{parse_summary, write_atomic};
use hydrovrb::engine::reference::pose_at;
use hydrovrb::engine::{ConfigError, EngineError, ScenarioConfig, Simulation};
use hydrovrb::flowfield::{sample_field, write_field_csv, FlowBody, GridSpec};
use hydrovrb::{Execution, Vec3};

/// `println!` that tolerates a closed pipe (`hydrovrb allocate ... | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const OUT_DIR_ENV: &str = "HYDROVRB_OUT_DIR";

#[derive(Parser)]
#[command(name = "hydrovrb", version, about = "Potential-flow avoidance and rigid-formation quadrotor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and print it with defaults filled in.
    Validate {
        scenario: PathBuf,
        /// Override a value, e.g. `--set formation.gains.alpha=2`.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// Print only the verdict.
        #[arg(long)]
        quiet: bool,
    },
    /// Run a scenario and write trajectory, metrics and summary files.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// Output directory.
        #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
        /// Step agents on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Sample the flow field around the scenario's obstacles at t = 0.
    SampleField {
        scenario: PathBuf,
        /// Lower grid corner `x,y,z`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        min: Vec3,
        /// Upper grid corner `x,y,z`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        max: Vec3,
        /// Node counts `nx,ny,nz`.
        #[arg(long, value_parser = parse_counts)]
        counts: [usize; 3],
        /// Freestream `vx,vy,vz`; defaults to the reference velocity at t = 0.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        freestream: Option<Vec3>,
        #[arg(long, default_value = "field.csv")]
        out: PathBuf,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
    /// Print the optimal agent-to-slot allocation for the initial positions.
    Allocate {
        scenario: PathBuf,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
    /// Print the key results of a finished run.
    Summarize {
        /// A summary file or a run output directory.
        path: PathBuf,
    },
    /// Print the JSON schema of scenario files.
    Schema,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(format!("expected three comma-separated numbers, got {s:?}")),
    }
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> =
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| format!("expected three comma-separated counts, got {s:?}"))
}

/// Exit status: 1 for anything wrong with the input, 2 for runtime failures.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let (config, report) = ScenarioConfig::load(&text, overrides)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(config)
}

fn validate(path: &Path, set: &[String], quiet: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let config = ScenarioConfig::from_json_str(&text)?.with_overrides(set)?;
    let report = config.validate();
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.is_ok() {
        return Err(Failure::Invalid(hydrovrb::engine::config::issue_list(&report.errors)));
    }
    let edges = config.formation.as_ref().map_or(0, |f| f.edges.len());
    out!("valid: {} agents, {} edges, {} obstacles", config.agent_count(), edges, config.obstacles.len());
    if !quiet {
        out!("{}", serde_json::to_string_pretty(&config.to_value()).expect("config serialises"));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn run(path: &Path, seed: Option<u64>, set: &[String], out: &Path, sequential: bool) -> Result<(), Failure> {
    let mut overrides = set.to_vec();
    if let Some(seed) = seed {
        overrides.push(format!("noise.seed={seed}"));
    }
    let config = load(path, &overrides)?;
    let mut sim = Simulation::new(config).map_err(|e| Failure::Invalid(e.to_string()))?;
    if sequential {
        sim.set_execution(Execution::Sequential);
    }
    match sim.run() {
        Ok(output) => {
            let paths = output.write(out).map_err(|e| Failure::Runtime(format!("writing outputs: {e}")))?;
            let s = &output.summary;
            out!(
                "min_clearance={} max_settled_residual={} rms_reference_error={} wall_time={:.2}s",
                fmt_opt(s.min_clearance),
                fmt_opt(s.max_residual_after_settle),
                fmt_opt(s.rms_reference_error),
                s.wall_time_s
            );
            out!("wrote {}", paths.summary.display());
            Ok(())
        }
        Err(EngineError::Abort { t, reason, dump }) => {
            let dump_path = out.join("abort_dump.json");
            let text = serde_json::to_string_pretty(&dump).expect("dump serialises");
            write_atomic(&dump_path, text.as_bytes())
                .map_err(|e| Failure::Runtime(format!("aborted at t = {t} s ({reason}); dump failed: {e}")))?;
            Err(Failure::Runtime(format!("aborted at t = {t} s: {reason}; state dump at {}", dump_path.display())))
        }
        Err(e) => Err(Failure::Invalid(e.to_string())),
    }
}

fn default_freestream(config: &ScenarioConfig) -> Vec3 {
    let v = pose_at(0.0, &config.reference).pose.velocity;
    if v.norm() > 0.0 {
        return v;
    }
    match &config.reference {
        ReferenceConfig::Line(l) if Vec3::from(l.velocity).norm() > 0.0 => Vec3::from(l.velocity),
        _ => Vec3::x(),
    }
}

fn sample(path: &Path, set: &[String], grid: GridSpec, freestream: Option<Vec3>, out: &Path) -> Result<(), Failure> {
    let config = load(path, set)?;
    grid.validate().map_err(|e| Failure::Invalid(format!("grid: {e}")))?;
    let a = &config.avoidance;
    let bodies: Vec<FlowBody> = config
        .obstacles
        .iter()
        .map(|o| {
            let (p, v) = (Vec3::from(o.position), Vec3::from(o.velocity));
            match o.rankine {
                Some(r) => FlowBody::rankine(p, v, r.separation, r.strength),
                None => FlowBody::doublet(p, v, a.r_d, a.epsilon),
            }
        })
        .collect();
    for (j, b) in bodies.iter().enumerate() {
        b.validate().map_err(|e| Failure::Invalid(format!(".obstacles[{j}]: {e}")))?;
    }
    let freestream = freestream.unwrap_or_else(|| default_freestream(&config));
    let samples = sample_field(&bodies, &freestream, a.superposition, &grid, config.execution);
    let mut buf = Vec::new();
    write_field_csv(&mut buf, &samples).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_atomic(out, &buf).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let inside = samples.iter().filter(|s| s.velocity.is_none()).count();
    out!("wrote {} nodes ({} inside bodies) to {}", samples.len(), inside, out.display());
    Ok(())
}

fn allocate(path: &Path, set: &[String]) -> Result<(), Failure> {
    let config = load(path, set)?;
    let Some(f) = &config.formation else {
        return Err(Failure::Invalid(".formation: scenario has no formation".into()));
    };
    let geometry = SlotGeometry::new(&f.slots.iter().map(|s| Vec3::from(*s)).collect::<Vec<_>>());
    let positions: Vec<Vec3> = config.agents.positions.iter().map(|p| Vec3::from(*p)).collect();
    let pose = pose_at(0.0, &config.reference).pose;
    let allocation =
        allocate_inertial(&positions, &pose.attitude, &geometry).map_err(|e| Failure::Invalid(e.to_string()))?;
    out!("total distance {:.6}", allocation.cost);
    out!("agent,slot,x_d,y_d,z_d");
    for (i, &slot) in allocation.slot_of.iter().enumerate() {
        let d = desired_position(&geometry.slots()[slot], &pose);
        out!("{i},{slot},{:.6},{:.6},{:.6}", d.x, d.y, d.z);
    }
    Ok(())
}

fn summarize(path: &Path) -> Result<(), Failure> {
    let file = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Failure::Invalid(format!("{}: {e}", file.display())))?;
    let summary = parse_summary(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", file.display())))?;
    for key in [
        "scenario",
        "seed",
        "agents",
        "ticks",
        "min_clearance",
        "collision",
        "max_residual_after_settle",
        "max_residual_avoidance",
        "max_residual_cruise",
        "last_in_range_time",
        "max_residual_after_resettle",
        "rms_reference_error",
        "max_solve_residual",
        "saturation_ticks",
        "inside_body_ticks",
        "degenerate_ticks",
        "wall_time_s",
    ] {
        if let Some(v) = summary.get(key) {
            out!("{key}: {v}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario, set, quiet } => validate(&scenario, &set, quiet),
        Command::Run { scenario, seed, set, out, sequential } => run(&scenario, seed, &set, &out, sequential),
        Command::SampleField { scenario, min, max, counts, freestream, out, set } => {
            let grid = GridSpec { min: min.into(), max: max.into(), counts };
            sample(&scenario, &set, grid, freestream, &out)
        }
        Command::Allocate { scenario, set } => allocate(&scenario, &set),
        Command::Summarize { path } => summarize(&path),
        Command::Schema => {
            out!("{}", serde_json::to_string_pretty(&ScenarioConfig::schema()).expect("schema serialises"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
