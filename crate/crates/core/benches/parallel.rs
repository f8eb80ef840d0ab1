//! Sequential vs parallel execution of the three data-parallel paths:
//! field sampling, engine ticks and seed batches.
//!
//! Run with: cargo bench -p hydrovrb-core

use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hydrovrb::engine::{run_batch, ScenarioConfig, Simulation};
use hydrovrb::flowfield::{sample_field, FlowBody, GridSpec, Superposition};
use hydrovrb::{Execution, Vec3};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    ScenarioConfig::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn field(c: &mut Criterion) {
    let bodies = [
        FlowBody::doublet(Vec3::new(14.0, 37.0, 20.0), Vec3::new(0.0, -0.75, 0.0), 1.0, 1.0),
        FlowBody::doublet(Vec3::new(16.0, 12.0, 20.0), Vec3::new(-0.75, 0.0, 0.0), 1.0, 1.0),
    ];
    let grid = GridSpec { min: [0.0, 0.0, 15.0], max: [30.0, 50.0, 25.0], counts: [60, 100, 20] };
    let freestream = Vec3::new(1.0, 0.5, 0.0);
    let mut g = c.benchmark_group("sample_field_120k");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(sample_field(&bodies, &freestream, Superposition::Sequential, &grid, exec)))
        });
    }
    g.finish();
}

/// Replaces the delta with a larger lattice. Three spread-out anchors form a
/// triangle below the lattice and every other slot is tied to all three, which
/// keeps the edge graph minimally rigid and well conditioned.
fn swarm(cfg: &mut ScenarioConfig, n: usize) {
    let mut slots = vec![[-4.0, -4.0, -3.0], [16.0, -2.0, -3.0], [4.0, 16.0, -3.0]];
    slots.extend((0..n - 3).map(|i| [(i % 5) as f64 * 3.0, (i / 5 % 5) as f64 * 3.0, (i / 25) as f64 * 2.5]));
    let mut edges = vec![[0, 1], [0, 2], [1, 2]];
    edges.extend((3..n).flat_map(|i| [[0, i], [1, i], [2, i]]));
    cfg.agents.positions = slots.iter().map(|s| [s[0] - 6.0, s[1] + 4.0, s[2] + 20.0]).collect();
    let formation = cfg.formation.as_mut().unwrap();
    formation.slots = slots;
    formation.edges = edges;
}

fn ticks(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine_100_ticks");
    g.sample_size(20);
    for agents in [8usize, 64] {
        let mut cfg = scenario("delta8_avoidance.json");
        if agents > 8 {
            swarm(&mut cfg, agents);
        }
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, agents), &cfg, |b, cfg| {
                b.iter_batched(
                    || {
                        let mut sim = Simulation::new(cfg.clone()).unwrap();
                        sim.set_execution(exec);
                        sim
                    },
                    |mut sim| {
                        for _ in 0..100 {
                            sim.step().unwrap();
                        }
                        sim
                    },
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    g.finish();
}

fn batch(c: &mut Criterion) {
    let mut cfg = scenario("single_fig8.json");
    cfg.timing.duration = 10.0;
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("run_batch_16_seeds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(run_batch(&cfg, &seeds, exec))));
    }
    g.finish();
}

criterion_group!(benches, field, ticks, batch);
criterion_main!(benches);
