use super::*;

fn key(step: u64) -> NoiseKey {
    NoiseKey { seed: 7, agent: 1, obstacle: 0, step }
}

#[test]
fn gate_boundaries() {
    let r = SensingRange::default();
    let o = Vec3::new(1.0, 2.0, 3.0);
    assert!(in_sensing_range(&o, &(o + Vec3::new(10.0, 0.0, 0.0)), &r));
    assert!(in_sensing_range(&o, &(o + Vec3::new(6.0, 8.0, 3.0)), &r));
    assert!(in_sensing_range(&o, &(o + Vec3::new(0.0, 0.0, -3.0)), &r));
    assert!(!in_sensing_range(&o, &(o + Vec3::new(10.0 + 1e-9, 0.0, 0.0)), &r));
    assert!(!in_sensing_range(&o, &(o + Vec3::new(0.0, 0.0, 3.0 + 1e-9)), &r));
    assert!(!in_sensing_range(&o, &(o + Vec3::new(7.1, 7.1, 0.0)), &r));
}

#[test]
fn noise_is_reproducible_and_keyed() {
    let a = standard_normal3(&key(3));
    assert_eq!(a, standard_normal3(&key(3)));
    assert_ne!(a, standard_normal3(&key(4)));
    assert_ne!(a, standard_normal3(&NoiseKey { agent: 2, ..key(3) }));
    assert_ne!(a, standard_normal3(&NoiseKey { obstacle: 1, ..key(3) }));
    assert_ne!(a, standard_normal3(&NoiseKey { seed: 8, ..key(3) }));
}

#[test]
fn noise_statistics() {
    let n = 100_000;
    let sigma = 0.05;
    let truth = Vec3::new(3.0, -2.0, 10.0);
    let mut sum = Vec3::zeros();
    let mut sq = Vec3::zeros();
    let mut cross = 0.0;
    let mut chi2 = 0.0;
    for k in 0..n {
        let e = noisy_measurement(&truth, sigma, &key(k)) - truth;
        sum += e;
        sq += e.component_mul(&e);
        cross += e.x * e.y;
        chi2 += e.norm_squared() / (sigma * sigma);
    }
    let nf = n as f64;
    let mean = sum / nf;
    // Four standard errors.
    assert!(mean.amax() < 4.0 * sigma / nf.sqrt(), "{mean}");
    for v in (sq / nf).iter() {
        // Var of the sample variance is 2σ⁴/n.
        assert!((v - sigma * sigma).abs() < 4.0 * sigma * sigma * (2.0 / nf).sqrt(), "{v}");
    }
    assert!((cross / nf).abs() < 4.0 * sigma * sigma / nf.sqrt());
    // χ²₃ has mean 3 and variance 6.
    assert!((chi2 / nf - 3.0).abs() < 4.0 * (6.0 / nf).sqrt());
}

#[test]
fn process_noise_matches_quadrature() {
    let (dt, q) = (0.01, 0.5);
    let mut oracle = Matrix6::zeros();
    let steps = 2000;
    for i in 0..steps {
        let s = (i as f64 + 0.5) * dt / steps as f64;
        // F(s)·G with G injecting acceleration into velocity.
        let mut fg = nalgebra::Matrix6x3::zeros();
        for a in 0..3 {
            fg[(a, a)] = s;
            fg[(a + 3, a)] = 1.0;
        }
        oracle += fg * fg.transpose() * q * (dt / steps as f64);
    }
    assert!((process_covariance(dt, q) - oracle).norm() < 1e-12);
}

fn constant_velocity_run(sigma_truth: f64, seed: u64, steps: u64) -> (Track, Vec<f64>, Vec<f64>) {
    run_with(FilterConfig::default(), sigma_truth, seed, steps)
}

fn run_with(config: FilterConfig, sigma_truth: f64, seed: u64, steps: u64) -> (Track, Vec<f64>, Vec<f64>) {
    let dt = 0.01;
    let p0 = Vec3::new(14.0, 37.0, 20.0);
    let v = Vec3::new(0.0, -0.75, 0.0);
    let noise_key = |k| NoiseKey { seed, agent: 0, obstacle: 0, step: k };
    let mut track = Track::new(&noisy_measurement(&p0, sigma_truth, &noise_key(0)), 0.0, &config);
    let mut errors = Vec::new();
    let mut nis = Vec::new();
    for k in 1..=steps {
        let t = k as f64 * dt;
        let truth = p0 + v * t;
        track.predict(dt, &config);
        let z = noisy_measurement(&truth, sigma_truth, &noise_key(k));
        let inn = track.update(&z, t, &config).unwrap();
        nis.push(inn.nis());
        errors.push((track.position() - truth).norm());
        let eig = track.covariance.symmetric_eigenvalues();
        assert!(eig.min() > -1e-12, "covariance lost definiteness at step {k}");
    }
    (track, errors, nis)
}

#[test]
fn converges_on_exact_measurements() {
    let (track, _, _) = constant_velocity_run(0.0, 0, 2000);
    let truth_p = Vec3::new(14.0, 37.0 - 0.75 * 20.0, 20.0);
    assert!((track.position() - truth_p).norm() < 1e-6);
    assert!((track.velocity() - Vec3::new(0.0, -0.75, 0.0)).norm() < 1e-4);
}

#[test]
fn converges_in_100_updates_on_matched_model() {
    // Noiseless data: the matched filter has Q → 0 and R → 0.
    let config = FilterConfig { process_noise: 0.0, sigma: 1e-6, ..FilterConfig::default() };
    let (track, _, _) = run_with(config, 0.0, 0, 100);
    let truth_p = Vec3::new(14.0, 37.0 - 0.75, 20.0);
    assert!((track.position() - truth_p).norm() < 1e-6);
    assert!((track.velocity() - Vec3::new(0.0, -0.75, 0.0)).norm() < 1e-4);
}

#[test]
fn noisy_tracking_rmse() {
    let mut total = 0.0;
    let mut count = 0.0;
    for seed in 0..50 {
        let (_, errors, _) = constant_velocity_run(0.05, seed, 500);
        for e in &errors[100..] {
            total += e * e;
            count += 1.0;
        }
    }
    let rmse = (total / count).sqrt();
    assert!(rmse < 0.05, "rmse {rmse}");
}

#[test]
fn innovations_are_consistent() {
    let mut all = Vec::new();
    for seed in 0..20 {
        let (_, _, nis) = constant_velocity_run(0.05, 100 + seed, 500);
        all.extend_from_slice(&nis[50..]);
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    // Target has no acceleration, so the filter is slightly conservative.
    assert!(mean > 2.0 && mean < 3.5, "mean NIS {mean}");
}

#[test]
fn rejects_non_finite_measurement() {
    let config = FilterConfig::default();
    let mut track = Track::new(&Vec3::zeros(), 0.0, &config);
    let before = track.clone();
    let err = track.update(&Vec3::new(f64::NAN, 0.0, 0.0), 0.01, &config);
    assert!(matches!(err, Err(SensingError::NonFiniteMeasurement(_))));
    assert_eq!(track, before);
}

#[test]
fn tracker_coasts_then_drops() {
    let config = FilterConfig::default();
    let range = SensingRange::default();
    let mut tracker = ObstacleTracker::new(1);
    let sensor = Vec3::zeros();
    let dt = 0.01;
    let k = NoiseKey { seed: 1, agent: 0, obstacle: 0, step: 0 };
    let s = tracker.observe(&sensor, &[Vec3::new(5.0, 0.0, 0.0)], &range, &config, k, 0.0, dt);
    assert!(s[0].is_measured());
    let far = [Vec3::new(50.0, 0.0, 0.0)];
    let mut t = 0.0;
    let mut last_coast = 0.0;
    for step in 1..200u64 {
        t = step as f64 * dt;
        let s = tracker.observe(&sensor, &far, &range, &config, NoiseKey { step, ..k }, t, dt);
        match s[0] {
            TrackStatus::Coasting { .. } => last_coast = t,
            TrackStatus::Untracked => break,
            TrackStatus::Measured { .. } => panic!("measured out of range"),
        }
    }
    assert!((last_coast - 1.0).abs() < 1e-9, "{last_coast}");
    assert!(t > 1.0);
    assert!(tracker.track(0).is_none());
}

#[test]
fn tracker_is_independent_of_obstacle_order() {
    let config = FilterConfig::default();
    let range = SensingRange::default();
    let a = Vec3::new(3.0, 1.0, 0.5);
    let b = Vec3::new(-2.0, 4.0, 0.0);
    let k = NoiseKey { seed: 9, agent: 2, obstacle: 0, step: 5 };
    let mut t1 = ObstacleTracker::new(2);
    let s1 = t1.observe(&Vec3::zeros(), &[a, b], &range, &config, k, 0.0, 0.01);
    let mut t2 = ObstacleTracker::new(2);
    let s2 = t2.observe(&Vec3::zeros(), &[a, b], &range, &config, k, 0.0, 0.01);
    assert_eq!(s1, s2);
    let expected = noisy_measurement(&b, config.sigma, &NoiseKey { obstacle: 1, ..k });
    assert_eq!(s1[1].estimate().unwrap().0, expected);
}
