//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use hydrovrb::assignment::{cost_matrix, solve_lap_lexicographic};
use hydrovrb::engine::{RunOutput, ScenarioConfig, Simulation, Summary};
use hydrovrb::flowfield::{
    combined_flow_spherical, doublet_potential, doublet_strength, doublet_velocity, flow_frame, induced_velocity,
    FlowBody,
};
use hydrovrb::formation::{
    rigidity_edge_count, simulate_point_masses, BaumgarteGains, ConstraintSet, FormationError, DELTA8_EDGES,
};
use hydrovrb::sensing::{noisy_measurement, FilterConfig, NoiseKey, Track};
use hydrovrb::vehicle::{rk4_step, QuadParams, QuadState, RotorAllocator};
use hydrovrb::{Execution, Vec3};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let (config, _) = ScenarioConfig::load::<&str>(&text, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
    config
}

fn run(config: ScenarioConfig, exec: Execution) -> RunOutput {
    let mut sim = Simulation::new(config).expect("scenario builds");
    sim.set_execution(exec);
    sim.run().expect("run completes")
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn flow_tangency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r_d = rng.random_range(0.2..5.0);
        let eps = rng.random_range(0.0..2.0);
        let speed = rng.random_range(0.05..20.0);
        let theta = rng.random_range(0.0..PI);
        let radius = r_d + eps;
        let mu = doublet_strength(radius, speed);

        // Spherical form at the surface point with polar angle theta.
        let axis = unit(&mut rng);
        let v_rel = axis * speed;
        let side = unit(&mut rng).cross(&axis).normalize();
        let r_rel = (axis * theta.cos() + side * theta.sin()) * radius;
        let frame = flow_frame(&v_rel, &r_rel).map_err(|e| e.to_string())?;
        let v = combined_flow_spherical(&frame, speed, mu).map_err(|e| e.to_string())?;
        worst = worst.max(v.radial.abs() / speed);

        // Inertial form just outside the surface, radial part by dot product.
        let body = FlowBody::doublet(Vec3::zeros(), Vec3::zeros(), r_d, eps);
        let p = r_rel * (1.0 + 1e-12);
        let u = induced_velocity(&p, &body, &v_rel).map_err(|e| e.to_string())?;
        worst = worst.max(u.velocity.dot(&p.normalize()).abs() / speed);
    }
    ensure(worst <= 1e-10, format!("max |v_r|/speed = {worst:.2e} over 1000 cases"))
}

/// Doublet potential at a Cartesian point, doublet axis along +z.
fn potential_at(p: &Vec3, mu: f64) -> f64 {
    let r = p.norm();
    doublet_potential(r, (p.z / r).acos(), mu).unwrap()
}

fn potential_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (radius, speed) = (2.0, 1.5);
    let mu = doublet_strength(radius, speed);
    let (mut grad_err, mut lap_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let p = unit(&mut rng) * rng.random_range(radius * 1.05..radius * 5.0);
        let r = p.norm();
        let theta = (p.z / r).acos();
        let v = doublet_velocity(r, theta, mu).unwrap();
        // Spherical unit vectors about +z.
        let phi = p.y.atan2(p.x);
        let e_r = p / r;
        let e_t = Vec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin());
        let analytic = e_r * v.radial + e_t * v.polar;

        let h = 1e-5 * r;
        let mut fd = Vec3::zeros();
        let mut lap = 0.0;
        let hl = 1e-3 * r;
        let f0 = potential_at(&p, mu);
        for k in 0..3 {
            let mut d = Vec3::zeros();
            d[k] = h;
            fd[k] = (potential_at(&(p + d), mu) - potential_at(&(p - d), mu)) / (2.0 * h);
            let mut dl = Vec3::zeros();
            dl[k] = hl;
            lap += (potential_at(&(p + dl), mu) - 2.0 * f0 + potential_at(&(p - dl), mu)) / (hl * hl);
        }
        grad_err = grad_err.max((fd - analytic).norm() / analytic.norm());
        lap_err = lap_err.max(lap.abs());
    }
    ensure(
        grad_err <= 1e-6 && lap_err <= 1e-4,
        format!("max gradient rel err {grad_err:.2e}, max |laplacian| {lap_err:.2e} at 100 points"),
    )
}

fn equator_speed() -> Outcome {
    let mut worst: f64 = 0.0;
    for (radius, speed) in [(2.0, 1.0), (0.5, 3.7), (7.0, 0.2)] {
        let mu = doublet_strength(radius, speed);
        let v = doublet_velocity(radius, PI / 2.0, mu).unwrap();
        // Freestream polar component at the equator is −U.
        let tangential = (v.polar - speed).abs();
        worst = worst.max((tangential / speed - 1.5).abs());
    }
    ensure(worst <= 1e-9, format!("|v_t/U − 1.5| = {worst:.2e}"))
}

fn constraint_force() -> Outcome {
    // (a) every tick of a 10 s eight-agent engine run.
    let mut cfg = scenario("delta8_vrb.json");
    cfg.timing.duration = 10.0;
    let out = run(cfg, Execution::Parallel);
    let solves: Vec<f64> = out.metrics.ticks.iter().filter_map(|t| t.solve_residual).collect();
    let missing = out.metrics.ticks.len() - solves.len();
    let worst_solve = solves.iter().copied().fold(0.0, f64::max);

    // (b) f_c · δr = 0 for every admissible δr (null space of J).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_power: f64 = 0.0;
    for trial in 0..50 {
        let slots: Vec<Vec3> = (0..8).map(|_| unit(&mut rng) * rng.random_range(1.0..5.0)).collect();
        let set = ConstraintSet::from_geometry(&DELTA8_EDGES, &slots, BaumgarteGains::default())
            .map_err(|e| e.to_string())?;
        let r: Vec<Vec3> = slots.iter().map(|s| s + unit(&mut rng) * 0.2).collect();
        let v: Vec<Vec3> = (0..8).map(|_| unit(&mut rng) * 0.5).collect();
        let f: Vec<Vec3> = (0..8).map(|_| unit(&mut rng) * 2.0).collect();
        let masses: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..2.0)).collect();
        let sol = match set.constraint_force(&r, &v, &masses, &f) {
            Ok(s) => s,
            Err(FormationError::Degenerate { .. }) => continue,
            Err(e) => return Err(format!("trial {trial}: {e}")),
        };
        // The admissible motions of a rigid framework are the rigid ones:
        // three translations and three rotations about the origin.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for k in 0..6 {
            let axis = Vec3::ith(k % 3, 1.0);
            let mut dr = DVector::from_iterator(
                24,
                r.iter().flat_map(|ri| {
                    let d = if k < 3 { axis } else { axis.cross(ri) };
                    [d.x, d.y, d.z]
                }),
            );
            for b in &basis {
                let proj = b.dot(&dr);
                dr -= b * proj;
            }
            basis.push(dr.normalize());
        }
        let admissible = basis.iter().map(|b| (&sol.state.jacobian * b).amax()).fold(0.0, f64::max);
        if admissible > 1e-12 {
            return Err(format!("trial {trial}: rigid motion violates constraints by {admissible:.1e}"));
        }
        let fc = DVector::from_iterator(24, sol.forces.iter().flat_map(|f| [f.x, f.y, f.z]));
        let scale = fc.norm().max(1e-12);
        for b in &basis {
            worst_power = worst_power.max(fc.dot(b).abs() / scale);
        }
    }

    // (c) point-mass decay against (1 + t) e^{−t}.
    let slots: Vec<Vec3> = hydrovrb::assignment::SlotGeometry::delta8().slots().to_vec();
    let mut set =
        ConstraintSet::from_geometry(&DELTA8_EDGES, &slots, BaumgarteGains { alpha: 1.0, beta: 1.0, gamma: 0.0 })
            .map_err(|e| e.to_string())?;
    let mut r: Vec<Vec3> = slots.iter().map(|s| s + unit(&mut rng) * 0.1).collect();
    let mut v = vec![Vec3::zeros(); 8];
    let zero = |_: f64, _: &[Vec3]| vec![Vec3::zeros(); 8];
    let samples = simulate_point_masses(&mut set, &mut r, &mut v, &[1.0; 8], &zero, &[Vec3::zeros(); 8], 1e-3, 5000)
        .map_err(|e| e.to_string())?;
    let c0 = samples[0].residuals.norm();
    let mut worst_env: f64 = 0.0;
    for s in samples.iter().step_by(50) {
        let envelope = c0 * (1.0 + s.t) * (-s.t).exp();
        worst_env = worst_env.max((s.residuals.norm() - envelope).abs() / envelope);
    }

    ensure(
        missing == 0 && worst_solve <= 1e-9 && worst_power <= 1e-9 && worst_env <= 0.05,
        format!(
            "(a) max solve residual {worst_solve:.2e} over {} ticks, {missing} skipped; (b) max |f_c·δr|/‖f_c‖ {worst_power:.2e}; (c) max envelope deviation {:.1e}",
            solves.len(),
            worst_env
        ),
    )
}

fn rigidity() -> Outcome {
    let required = rigidity_edge_count(8).map_err(|e| e.to_string())?;
    let slots = hydrovrb::assignment::SlotGeometry::delta8().slots().to_vec();
    let full = ConstraintSet::from_geometry(&DELTA8_EDGES, &slots, BaumgarteGains::default())
        .and_then(|s| s.validate_rigid(8));
    let short = ConstraintSet::from_geometry(&DELTA8_EDGES[..17], &slots, BaumgarteGains::default())
        .and_then(|s| s.validate_rigid(8));
    let mut cfg = scenario("delta8.json");
    let bundled_ok = cfg.validate().is_ok();
    cfg.formation.as_mut().unwrap().edges.pop();
    let report = cfg.validate();
    let message = report.errors.iter().any(|i| i.message.contains("rigidity requires 18 edges"));
    ensure(
        required == 18 && DELTA8_EDGES.len() == 18 && full.is_ok() && short.is_err() && bundled_ok && message,
        format!("3N−6 = {required}; 18-edge delta valid: {}; 17 edges rejected: {message}", full.is_ok()),
    )
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

fn assignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let agents: Vec<Vec3> = (0..8).map(|_| unit(&mut rng) * rng.random_range(0.0..10.0)).collect();
        let slots: Vec<Vec3> = (0..8).map(|_| unit(&mut rng) * rng.random_range(0.0..10.0)).collect();
        let cost = cost_matrix(&agents, &slots);
        let (perm, total) = solve_lap_lexicographic(&cost).map_err(|e| e.to_string())?;
        let recomputed: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let mut p: Vec<usize> = (0..8).collect();
        let mut best = f64::INFINITY;
        loop {
            best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum());
            if !next_permutation(&mut p) {
                break;
            }
        }
        let gap = (total - best).abs().max((recomputed - best).abs());
        worst = worst.max(gap);
        if gap > 1e-9 * best.max(1.0) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("1000 instances, {mismatches} mismatches, max cost gap {worst:.2e}"))
}

fn hover() -> Outcome {
    let p = QuadParams::default();
    let alloc = RotorAllocator::new(&p).map_err(|e| e.to_string())?;
    let cmd = alloc.allocate(p.hover_thrust(), &Vec3::zeros());
    let w = cmd.speeds();
    let expected = (p.mass * p.gravity / (4.0 * p.k_thrust)).sqrt();
    let spread = w.max() - w.min();
    let err = (w.mean() - 4108.0).abs() / 4108.0;
    ensure(
        spread < 1e-9 * w.mean() && err <= 1e-3 && (w.mean() - expected).abs() < 1e-9 * expected,
        format!("rotor speeds {:.2} rad/s (spread {spread:.1e}), {:.3}% from 4108", w.mean(), 100.0 * err),
    )
}

fn dynamics() -> Outcome {
    // Torque-free spin with an asymmetric inertia.
    let p = QuadParams { inertia: [0.0095, 0.0120, 0.0186], gravity: 0.0, ..QuadParams::default() };
    let mut s = QuadState::at_rest(Vec3::zeros());
    s.rates = Vec3::new(0.3, 2.0, 0.5);
    let momentum = |s: &QuadState| s.dcm().transpose() * Vec3::from(p.inertia).component_mul(&s.rates);
    let h0 = momentum(&s);
    let mut drift: f64 = 0.0;
    for _ in 0..100_000 {
        drift = drift.max(rk4_step(&mut s, 0.0, &Vec3::zeros(), &p, 1e-4));
    }
    let h_err = (momentum(&s) - h0).norm() / h0.norm();
    let norm_err = (s.attitude.norm() - 1.0).abs();

    // Free fall from rest, tumbling attitude.
    let p = QuadParams::default();
    let mut s = QuadState::at_rest(Vec3::new(0.0, 0.0, 50.0));
    s.attitude = hydrovrb::vehicle::quaternion_from_euler(0.3, -0.2, 1.0);
    s.rates = Vec3::new(0.5, 0.0, -0.3);
    for _ in 0..1000 {
        rk4_step(&mut s, 0.0, &Vec3::zeros(), &p, 1e-3);
    }
    let v_err = (s.inertial_velocity() - Vec3::new(0.0, 0.0, -p.gravity)).norm();
    ensure(
        h_err <= 1e-6 && drift < 1e-10 && norm_err < 1e-12 && v_err <= 1e-6,
        format!(
            "momentum rel err {h_err:.2e}; max per-step norm drift {drift:.1e}; free-fall velocity err {v_err:.1e} m/s"
        ),
    )
}

fn kalman() -> Outcome {
    // Matched model on noiseless data: no process noise, negligible R.
    let truth0 = Vec3::new(14.0, 37.0, 20.0);
    let vel = Vec3::new(0.0, -0.75, 0.0);
    let matched = FilterConfig { process_noise: 0.0, sigma: 1e-6, ..FilterConfig::default() };
    let dt = 0.01;
    let mut track = Track::new(&truth0, 0.0, &matched);
    for k in 1..=100 {
        let t = k as f64 * dt;
        track.predict(dt, &matched);
        track.update(&(truth0 + vel * t), t, &matched).map_err(|e| e.to_string())?;
    }
    let exact = (track.position() - (truth0 + vel)).norm();

    // Static target with σ = 0.05 m noise, default filter.
    let config = FilterConfig::default();
    let target = Vec3::new(3.0, -2.0, 20.0);
    let (mut sq, mut n) = (0.0, 0.0);
    for seed in 0..50 {
        let key = |step| NoiseKey { seed, agent: 0, obstacle: 0, step };
        let mut track = Track::new(&noisy_measurement(&target, config.sigma, &key(0)), 0.0, &config);
        for k in 1..=500u64 {
            let t = k as f64 * dt;
            track.predict(dt, &config);
            track.update(&noisy_measurement(&target, config.sigma, &key(k)), t, &config).map_err(|e| e.to_string())?;
            if k > 100 {
                sq += (track.position() - target).norm_squared();
                n += 1.0;
            }
        }
    }
    let rmse = (sq / n).sqrt();
    ensure(
        exact < 1e-6 && rmse < 0.05,
        format!("noiseless error after 100 updates {exact:.1e} m; static-target RMSE {rmse:.4} m over 50 seeds"),
    )
}

fn single_vehicle() -> Outcome {
    let out = run(scenario("single_fig8.json"), Execution::Parallel);
    let s = &out.summary;
    let clearance = opt(s.min_clearance);
    let rms = opt(s.rms_reference_error);
    ensure(
        clearance >= 0.9 && rms < 0.5 && !s.collision,
        format!("min clearance {clearance:.3} m; tracking RMS {rms:.4} m"),
    )
}

fn vrb_only() -> Outcome {
    let out = run(scenario("delta8_vrb.json"), Execution::Parallel);
    let s = &out.summary;
    let settle = s.config["metrics"]["settle_time"].as_f64().unwrap_or(10.0);
    // Residuals while the commanded yaw is changing.
    let turning = out
        .metrics
        .ticks
        .iter()
        .filter(|t| t.t >= settle)
        .zip(out.metrics.ticks.iter().filter(|t| t.t >= settle).skip(1))
        .filter(|(a, b)| (a.yaw_command - b.yaw_command).abs() > 0.0)
        .filter_map(|(a, _)| a.max_residual())
        .fold(0.0, f64::max);
    let worst = opt(s.max_residual_after_settle);
    ensure(
        worst < 0.05 && turning > 0.0,
        format!("max residual after {settle} s {worst:.4} m; during re-orientation {turning:.4} m"),
    )
}

fn synthesized(summary: &Summary) -> Outcome {
    let clearance = opt(summary.min_clearance);
    let resettle = opt(summary.max_residual_after_resettle);
    let avoid = opt(summary.max_residual_avoidance);
    let cruise = opt(summary.max_residual_cruise);
    ensure(
        clearance > 0.0 && !summary.collision && resettle < 0.05 && avoid > cruise,
        format!(
            "min centre distance {clearance:.3} m; max residual 10 s after last departure {resettle:.2e} m; avoidance {avoid:.4} m > cruise {cruise:.4} m"
        ),
    )
}

fn table_scenario() -> Outcome {
    let out = run(scenario("delta8_avoidance.json"), Execution::Parallel);
    synthesized(&out.summary)
}

fn determinism() -> Outcome {
    let cfg = scenario("delta8_avoidance.json");
    let a = run(cfg.clone(), Execution::Parallel);
    let b = run(cfg.clone(), Execution::Parallel);
    let c = run(cfg, Execution::Sequential);
    let same =
        |x: &RunOutput, y: &RunOutput| x.trajectory_csv() == y.trajectory_csv() && x.metrics_csv() == y.metrics_csv();
    ensure(
        same(&a, &b) && same(&a, &c),
        format!(
            "{} trajectory bytes identical across two parallel runs and one sequential run",
            a.trajectory_csv().len()
        ),
    )
}

fn main() {
    let criteria = [
        Criterion { name: "flow tangency", budget: Duration::from_secs(1), check: flow_tangency },
        Criterion { name: "potential, gradient and laplacian", budget: Duration::from_secs(1), check: potential_suite },
        Criterion { name: "equator speed", budget: Duration::from_secs(1), check: equator_speed },
        Criterion { name: "constraint force", budget: Duration::from_secs(10), check: constraint_force },
        Criterion { name: "rigidity bookkeeping", budget: Duration::from_secs(1), check: rigidity },
        Criterion { name: "assignment optimality", budget: Duration::from_secs(30), check: assignment },
        Criterion { name: "hover allocation", budget: Duration::from_secs(1), check: hover },
        Criterion { name: "quadrotor dynamics", budget: Duration::from_secs(30), check: dynamics },
        Criterion { name: "kalman filter", budget: Duration::from_secs(10), check: kalman },
        Criterion { name: "single-vehicle figure eight", budget: Duration::from_secs(60), check: single_vehicle },
        Criterion { name: "vrb formation only", budget: Duration::from_secs(120), check: vrb_only },
        Criterion { name: "table scenario", budget: Duration::from_secs(300), check: table_scenario },
        Criterion { name: "determinism", budget: Duration::from_secs(300), check: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let over = elapsed > c.budget;
        let (tag, detail) = match &result {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {}: {detail} ({:.2} s)", c.name, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
